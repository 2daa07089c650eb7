"""Permutation-invariant point-set encoder with exact analytic gradients.

Shared per-point affine layers with rectifier nonlinearity, symmetric max
pooling over points, and an affine classifier head of width K. All math is
plain numpy so gradients stay hand-verifiable against finite differences.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import InvalidTarget, NonFiniteGradient, ShapeMismatch
from .pointset import ObjectSample

CKPT_MAGIC = "SL3DCKPT"
CKPT_VERSION = "v1"


@dataclass
class EncoderModel:
    point_weights: list  # per-point affine layers, each (in, out)
    point_biases: list
    head_weights: list  # head layers, last one of width K
    head_biases: list
    seed: int = 0

    @property
    def embedding_dim(self) -> int:
        return self.point_weights[-1].shape[1]

    @property
    def num_classes(self) -> int:
        return self.head_weights[-1].shape[1]

    @property
    def point_widths(self) -> tuple:
        return tuple([self.point_weights[0].shape[0]]
                     + [w.shape[1] for w in self.point_weights])

    @property
    def head_widths(self) -> tuple:
        return tuple([self.head_weights[0].shape[0]]
                     + [w.shape[1] for w in self.head_weights])

    def parameters(self):
        return self.point_weights + self.point_biases + self.head_weights \
            + self.head_biases

    def copy(self) -> "EncoderModel":
        return EncoderModel([w.copy() for w in self.point_weights],
                            [b.copy() for b in self.point_biases],
                            [w.copy() for w in self.head_weights],
                            [b.copy() for b in self.head_biases],
                            seed=self.seed)


@dataclass
class GradientBundle:
    point_weights: list
    point_biases: list
    head_weights: list
    head_biases: list

    def parameters(self):
        return self.point_weights + self.point_biases + self.head_weights \
            + self.head_biases

    @staticmethod
    def zeros_like(model: EncoderModel) -> "GradientBundle":
        return GradientBundle([np.zeros_like(w) for w in model.point_weights],
                              [np.zeros_like(b) for b in model.point_biases],
                              [np.zeros_like(w) for w in model.head_weights],
                              [np.zeros_like(b) for b in model.head_biases])

    def add_(self, other: "GradientBundle", scale: float = 1.0):
        for a, b in zip(self.parameters(), other.parameters()):
            a += scale * b
        return self

    def scale_(self, factor: float):
        for a in self.parameters():
            a *= factor
        return self


def init_params(point_widths=(3, 64, 128, 1024), head_widths=None,
                num_classes: int = 10, seed: int = 0) -> EncoderModel:
    """Glorot-uniform weights, zero biases, deterministic per seed."""
    if head_widths is None:
        head_widths = (point_widths[-1], num_classes)
    if any(w <= 0 for w in tuple(point_widths) + tuple(head_widths)):
        raise ValueError("layer widths must be positive")
    if head_widths[0] != point_widths[-1]:
        raise ValueError("head input width must equal embedding width")
    rng = np.random.default_rng(seed)

    def glorot(fan_in, fan_out):
        a = np.sqrt(6.0 / (fan_in + fan_out))
        return rng.uniform(-a, a, size=(fan_in, fan_out))

    pw = [glorot(i, o) for i, o in zip(point_widths[:-1], point_widths[1:])]
    pb = [np.zeros(o) for o in point_widths[1:]]
    hw = [glorot(i, o) for i, o in zip(head_widths[:-1], head_widths[1:])]
    hb = [np.zeros(o) for o in head_widths[1:]]
    return EncoderModel(pw, pb, hw, hb, seed=seed)


def _forward_cached(model: EncoderModel, points: np.ndarray):
    h = points  # (S, d)
    point_pre, point_act = [], [h]
    for w, b in zip(model.point_weights, model.point_biases):
        z = h @ w + b
        point_pre.append(z)
        h = np.maximum(z, 0.0)
        point_act.append(h)
    pool_idx = np.argmax(h, axis=0)  # ties resolved to lowest point index
    embedding = h[pool_idx, np.arange(h.shape[1])]
    g = embedding
    head_pre, head_act = [], [g]
    n_head = len(model.head_weights)
    for li, (w, b) in enumerate(zip(model.head_weights, model.head_biases)):
        z = g @ w + b
        head_pre.append(z)
        g = z if li == n_head - 1 else np.maximum(z, 0.0)
        head_act.append(g)
    logits = g
    return embedding, logits, (point_pre, point_act, pool_idx, head_pre, head_act)


def forward(model: EncoderModel, sample: ObjectSample):
    """Return (embedding, logits) for one object sample."""
    pts = np.asarray(sample.points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != model.point_weights[0].shape[0]:
        raise ShapeMismatch(f"expected (S, {model.point_weights[0].shape[0]}) "
                            f"points, got {pts.shape}")
    embedding, logits, _ = _forward_cached(model, pts)
    return embedding, logits


def softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def backward(model: EncoderModel, sample: ObjectSample,
             target_distribution: np.ndarray):
    """Cross-entropy loss of softmax(logits) against a soft target, with
    exact analytic gradients for every parameter."""
    target = np.asarray(target_distribution, dtype=np.float64)
    if target.shape != (model.num_classes,):
        raise ShapeMismatch(f"target must have shape ({model.num_classes},)")
    if np.any(target < 0) or abs(target.sum() - 1.0) > 1e-6:
        raise InvalidTarget("target must be nonnegative and sum to 1")
    pts = np.asarray(sample.points, dtype=np.float64)
    embedding, logits, cache = _forward_cached(model, pts)
    point_pre, point_act, pool_idx, head_pre, head_act = cache

    p = softmax(logits)
    log_p = logits - logits.max() - np.log(np.exp(logits - logits.max()).sum())
    loss = float(-(target * log_p).sum())

    grads = GradientBundle.zeros_like(model)
    d = p - target  # dL/dlogits
    n_head = len(model.head_weights)
    for li in range(n_head - 1, -1, -1):
        grads.head_weights[li][...] = np.outer(head_act[li], d)
        grads.head_biases[li][...] = d
        d = model.head_weights[li] @ d
        if li > 0:
            d = d * (head_pre[li - 1] > 0)
    # route pooled gradient back to each feature's argmax point
    S = pts.shape[0]
    dh = np.zeros((S, model.embedding_dim))
    dh[pool_idx, np.arange(model.embedding_dim)] = d
    n_pt = len(model.point_weights)
    for li in range(n_pt - 1, -1, -1):
        dz = dh * (point_pre[li] > 0)
        grads.point_weights[li][...] = point_act[li].T @ dz
        grads.point_biases[li][...] = dz.sum(axis=0)
        dh = dz @ model.point_weights[li].T
    return loss, grads


@dataclass
class MomentumState:
    buffers: list

    @staticmethod
    def zeros_like(model: EncoderModel) -> "MomentumState":
        return MomentumState([np.zeros_like(p) for p in model.parameters()])


def sgd_step(model: EncoderModel, grads: GradientBundle, lr: float,
             momentum: float = 0.9, weight_decay: float = 1e-4,
             state: MomentumState | None = None):
    """In-place SGD with momentum and decoupled-style L2 term:
    v <- momentum*v + grad + wd*param; param <- param - lr*v."""
    for g in grads.parameters():
        if not np.isfinite(g).all():
            raise NonFiniteGradient("gradient contains NaN or Inf")
    if state is None:
        state = MomentumState.zeros_like(model)
    for p, g, v in zip(model.parameters(), grads.parameters(), state.buffers):
        v *= momentum
        v += g + weight_decay * p
        p -= lr * v
    return model, state


def _write_tensor(lines: list, name: str, arr: np.ndarray):
    arr2 = np.atleast_2d(arr)
    lines.append(f"tensor {name} {arr2.shape[0]} {arr2.shape[1]}")
    for row in arr2:
        lines.append(" ".join(format(float(v), ".17g") for v in row))


def save_checkpoint(model: EncoderModel, path,
                    momentum: MomentumState | None = None) -> None:
    """Versioned flat-text checkpoint, bit-exact at 17 significant digits."""
    pw = "-".join(str(w) for w in model.point_widths)
    hw = "-".join(str(w) for w in model.head_widths)
    lines = [f"{CKPT_MAGIC} {CKPT_VERSION} {pw}|{hw} {model.num_classes} "
             f"{model.seed}"]
    names = ([f"point_w{i}" for i in range(len(model.point_weights))]
             + [f"point_b{i}" for i in range(len(model.point_biases))]
             + [f"head_w{i}" for i in range(len(model.head_weights))]
             + [f"head_b{i}" for i in range(len(model.head_biases))])
    for name, arr in zip(names, model.parameters()):
        _write_tensor(lines, name, arr)
    if momentum is not None:
        for i, buf in enumerate(momentum.buffers):
            _write_tensor(lines, f"momentum{i}", buf)
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_checkpoint(path):
    """Load a checkpoint; returns (model, momentum_or_None)."""
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    header = lines[0].split()
    if header[0] != CKPT_MAGIC or header[1] != CKPT_VERSION:
        raise ValueError(f"not a {CKPT_MAGIC} {CKPT_VERSION} checkpoint: {path}")
    pw_s, hw_s = header[2].split("|")
    point_widths = [int(v) for v in pw_s.split("-")]
    head_widths = [int(v) for v in hw_s.split("-")]
    seed = int(header[4])
    tensors = {}
    order = []
    i = 1
    while i < len(lines):
        parts = lines[i].split()
        if not parts:
            i += 1
            continue
        assert parts[0] == "tensor", f"bad checkpoint line: {lines[i]}"
        name, rows, cols = parts[1], int(parts[2]), int(parts[3])
        block = np.array([[float(v) for v in lines[i + 1 + r].split()]
                          for r in range(rows)])
        tensors[name] = block
        order.append(name)
        i += 1 + rows

    def tensor(name, is_bias):
        arr = tensors[name]
        return arr[0].copy() if is_bias else arr

    n_pw = len(point_widths) - 1
    n_hw = len(head_widths) - 1
    model = EncoderModel(
        [tensor(f"point_w{i}", False) for i in range(n_pw)],
        [tensor(f"point_b{i}", True) for i in range(n_pw)],
        [tensor(f"head_w{i}", False) for i in range(n_hw)],
        [tensor(f"head_b{i}", True) for i in range(n_hw)],
        seed=seed,
    )
    mom_names = [n for n in order if n.startswith("momentum")]
    momentum = None
    if mom_names:
        shapes = [p.shape for p in model.parameters()]
        bufs = []
        for i, shape in enumerate(shapes):
            arr = tensors[f"momentum{i}"]
            bufs.append(arr[0].copy() if len(shape) == 1 else arr)
        momentum = MomentumState(bufs)
    return model, momentum
