import numpy as np
import pytest

from sl3d.errors import (
    DegenerateCloud,
    EmptyCloud,
    ParseError,
    TooFewPoints,
    UnsupportedFormat,
)
from sl3d.pointset import (
    PointCloud,
    apply_jitter,
    estimate_normals,
    load_cloud,
    normalize_object,
    sample_points,
    save_cloud,
)


def random_cloud(n=60, seed=0, labels=False):
    rng = np.random.default_rng(seed)
    return PointCloud(rng.normal(size=(n, 3)),
                      gt_labels=rng.integers(0, 4, n) if labels else None,
                      id="rand")


class TestIO:
    @pytest.mark.parametrize("fmt", ["xyz", "off", "ply"])
    def test_roundtrip_bitexact(self, tmp_path, fmt):
        cloud = random_cloud(40, seed=3, labels=(fmt != "off"))
        path = tmp_path / f"c.{fmt}"
        save_cloud(cloud, path)
        back = load_cloud(path)
        assert np.array_equal(back.points, cloud.points)
        if fmt != "off":
            assert np.array_equal(back.gt_labels, cloud.gt_labels)

    def test_ply_normals_roundtrip(self, tmp_path):
        cloud = estimate_normals(random_cloud(40), k=8)
        path = tmp_path / "n.ply"
        save_cloud(cloud, path)
        back = load_cloud(path)
        assert np.array_equal(back.normals, cloud.normals)

    def test_xyz_comments_and_blank_lines(self, tmp_path):
        path = tmp_path / "c.xyz"
        path.write_text("# header\n\n1 2 3\n4 5 6\n")
        cloud = load_cloud(path)
        assert cloud.points.shape == (2, 3)

    def test_xyz_bad_column_count(self, tmp_path):
        path = tmp_path / "c.xyz"
        path.write_text("1 2\n")
        with pytest.raises(ParseError):
            load_cloud(path)

    def test_xyz_nonnumeric(self, tmp_path):
        path = tmp_path / "c.xyz"
        path.write_text("1 2 zebra\n")
        with pytest.raises(ParseError):
            load_cloud(path)

    def test_off_counts_on_header_line(self, tmp_path):
        path = tmp_path / "c.off"
        path.write_text("OFF 2 0 0\n0 0 0\n1 1 1\n")
        assert len(load_cloud(path)) == 2

    def test_off_missing_header(self, tmp_path):
        path = tmp_path / "c.off"
        path.write_text("2 0 0\n0 0 0\n1 1 1\n")
        with pytest.raises(ParseError):
            load_cloud(path)

    def test_binary_ply_rejected(self, tmp_path):
        path = tmp_path / "c.ply"
        path.write_text("ply\nformat binary_little_endian 1.0\n"
                        "element vertex 1\nproperty float x\nend_header\n")
        with pytest.raises(UnsupportedFormat):
            load_cloud(path)

    def test_unknown_extension(self, tmp_path):
        with pytest.raises(UnsupportedFormat):
            load_cloud(tmp_path / "c.stl")

    def test_vertex_order_preserved(self, tmp_path):
        pts = np.array([[3.0, 0, 0], [1.0, 0, 0], [2.0, 0, 0]])
        path = tmp_path / "c.xyz"
        save_cloud(PointCloud(pts), path)
        assert np.array_equal(load_cloud(path).points, pts)


class TestValidation:
    def test_nonfinite_rejected(self):
        with pytest.raises(ValueError):
            PointCloud(np.array([[0.0, 0.0, np.nan]]))

    def test_nonunit_normals_rejected(self):
        with pytest.raises(ValueError):
            PointCloud(np.zeros((1, 3)), normals=np.array([[2.0, 0, 0]]))

    def test_label_length_mismatch(self):
        with pytest.raises(ValueError):
            PointCloud(np.zeros((2, 3)), gt_labels=np.array([1]))


class TestSampling:
    def test_fps_deterministic_and_exact_count(self):
        cloud = random_cloud(100, seed=1)
        a = sample_points(cloud, 32)
        b = sample_points(cloud, 32)
        assert len(a) == 32
        assert np.array_equal(a.points, b.points)

    def test_fps_spreads_points(self):
        # FPS from a dense cluster plus one outlier must include the outlier
        pts = np.vstack([np.random.default_rng(0).normal(0, 0.01, (50, 3)),
                         [[10.0, 0.0, 0.0]]])
        sampled = sample_points(PointCloud(pts), 5)
        assert np.any(np.all(sampled.points == [10.0, 0.0, 0.0], axis=1))

    def test_fps_matches_bruteforce_reference(self):
        cloud = random_cloud(30, seed=5)
        got = sample_points(cloud, 10).points
        # independent quadratic reference
        pts = cloud.points
        start = int(np.argmin(np.linalg.norm(pts - pts.mean(axis=0), axis=1)))
        chosen = [start]
        for _ in range(9):
            d = np.min(np.linalg.norm(pts[:, None] - pts[chosen][None], axis=2),
                       axis=1)
            chosen.append(int(np.argmax(d)))
        assert np.array_equal(got, pts[chosen])

    def test_upsampling_when_too_few(self):
        cloud = random_cloud(5, seed=2)
        out = sample_points(cloud, 12, seed=9)
        assert len(out) == 12
        again = sample_points(cloud, 12, seed=9)
        assert np.array_equal(out.points, again.points)

    def test_empty_cloud(self):
        with pytest.raises(EmptyCloud):
            sample_points(PointCloud(np.empty((0, 3))), 4)


class TestNormalize:
    def test_unit_sphere(self):
        s = normalize_object(random_cloud(50))
        assert np.allclose(s.points.mean(axis=0), 0.0, atol=1e-12)
        assert np.isclose(np.linalg.norm(s.points, axis=1).max(), 1.0)

    def test_degenerate(self):
        with pytest.raises(DegenerateCloud):
            normalize_object(PointCloud(np.zeros((4, 3))))


class TestJitter:
    def test_zero_sigma_exact_copy(self):
        cloud = random_cloud(20)
        out = apply_jitter(cloud, 0.0)
        assert np.array_equal(out.points, cloud.points)
        assert out.points is not cloud.points

    def test_seeded(self):
        cloud = random_cloud(20)
        a = apply_jitter(cloud, 0.01, seed=4).points
        b = apply_jitter(cloud, 0.01, seed=4).points
        assert np.array_equal(a, b)

    def test_negative_sigma(self):
        with pytest.raises(ValueError):
            apply_jitter(random_cloud(5), -0.1)


class TestNormals:
    def test_flat_plane_normals(self):
        g = np.linspace(0, 1, 8)
        xx, yy = np.meshgrid(g, g)
        cloud = PointCloud(np.column_stack([xx.ravel(), yy.ravel(),
                                            np.zeros(xx.size)]))
        out = estimate_normals(cloud, k=8)
        assert np.allclose(out.normals, [0.0, 0.0, 1.0], atol=1e-9)

    def test_sign_rule_z_nonnegative(self):
        out = estimate_normals(random_cloud(50), k=10)
        z = out.normals[:, 2]
        assert np.all(z >= 0)

    def test_too_few_points(self):
        with pytest.raises(TooFewPoints):
            estimate_normals(random_cloud(5), k=12)
