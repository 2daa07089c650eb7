"""Shared fixtures and dataset builders for the test suite."""

import numpy as np
import pytest

from sl3d import pointset as ps
from sl3d import synthdata as sd

# Filled by test_acceptance.py; printed after the run so the per-criterion
# verdict lines are visible even though pytest captures stdout.
ACCEPTANCE_RESULTS = {}


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.write_sep("-", "acceptance criteria")
    for num in sorted(ACCEPTANCE_RESULTS):
        name, ok, detail = ACCEPTANCE_RESULTS[num]
        verdict = "PASS" if ok else "FAIL"
        terminalreporter.write_line(f"criterion {num:2d} [{name}]: {verdict} - {detail}")


def build_object_set(n_per_class, kinds=("plane", "sphere", "box"),
                     rot_limit=0.5, rot_axes=(2,), noise=0.005,
                     n_points=200, sample_count=128, seed=0):
    """Labeled ObjectSample dataset of posed noisy shapes.

    rot_axes selects which Euler axes get a random angle in
    [-rot_limit, rot_limit]; the rest stay zero.
    """
    rng = np.random.default_rng(seed)
    samples, labels = [], []
    for kind in kinds:
        for i in range(n_per_class):
            rot = [0.0, 0.0, 0.0]
            for a in rot_axes:
                rot[a] = float(rng.uniform(-rot_limit, rot_limit))
            spec = sd.ShapeSpec(kind, noise_sigma=noise, points=n_points,
                                rotation=tuple(rot))
            cloud, cls = sd.gen_object(spec, seed=int(rng.integers(2 ** 31)))
            cloud.id = f"{kind}-{i}"
            cloud = ps.sample_points(cloud, sample_count, seed=i)
            samples.append(ps.normalize_object(cloud))
            labels.append(cls)
    return samples, labels


@pytest.fixture(scope="session")
def small_object_set():
    """24 objects, 3 classes; fast enough for per-test reuse."""
    return build_object_set(8, n_points=160, sample_count=96, seed=11)
