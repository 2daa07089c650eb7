"""Balanced self-labeling: joint probability matrix, Sinkhorn-Knopp in the
log domain, and hard pseudo-label extraction.

The assignment Q minimizes <Q, -log P> over transport plans whose rows sum to
1/K and columns to 1/N (equal mass per pseudo class and per sample), solved by
alternating row/column rescaling of P^lambda with all sums taken via
log-sum-exp so large lambda cannot underflow.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .errors import NonFiniteLogits, ShapeMismatch

P_FLOOR = 1e-30


@dataclass
class ProbMatrix:
    values: np.ndarray  # (K, N), column i = softmax(logits_i) / N

    @property
    def K(self) -> int:
        return self.values.shape[0]

    @property
    def N(self) -> int:
        return self.values.shape[1]


@dataclass
class SoftAssignment:
    values: np.ndarray  # (K, N)
    lam: float
    iterations_run: int

    @property
    def K(self) -> int:
        return self.values.shape[0]

    @property
    def N(self) -> int:
        return self.values.shape[1]


@dataclass
class LabelSet:
    labels: np.ndarray  # (N,) pseudo-class ids in [0, K)
    sample_ids: list

    def __len__(self):
        return len(self.labels)


def assemble_P(logits: np.ndarray) -> ProbMatrix:
    """Build the K x N joint probability matrix from per-sample logits (N, K)."""
    logits = np.asarray(logits, dtype=np.float64)
    if logits.ndim != 2:
        raise ShapeMismatch("logits must be (N, K)")
    if not np.isfinite(logits).all():
        raise NonFiniteLogits("logits contain NaN or Inf")
    n, k = logits.shape
    if n < 1 or k < 2:
        raise ShapeMismatch("need N >= 1 and K >= 2")
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    p = (e / e.sum(axis=1, keepdims=True)).T  # (K, N), columns sum to 1
    p = np.maximum(p, P_FLOOR)
    p = p / p.sum(axis=0, keepdims=True) / n  # re-normalize columns to 1/N
    return ProbMatrix(p)


def marginal_violation(q: np.ndarray) -> float:
    """Max absolute deviation of row sums from 1/K and column sums from 1/N."""
    k, n = q.shape
    return max(float(np.abs(q.sum(axis=1) - 1.0 / k).max()),
               float(np.abs(q.sum(axis=0) - 1.0 / n).max()))


def sinkhorn_assign(P: ProbMatrix, lam: float = 25.0,
                    iterations: int = 100, early_stop_tol: float = 1e-8
                    ) -> SoftAssignment:
    """Entropically regularized balanced assignment via Sinkhorn-Knopp.

    Q = diag(u) P^lambda diag(v) with u, v from alternating row/column
    normalization, run entirely in the log domain. Stops early once the max
    marginal violation drops below early_stop_tol (checked every 10 sweeps).
    """
    if lam <= 0:
        raise ValueError("lambda must be positive")
    k, n = P.values.shape
    m = lam * np.log(P.values)  # (K, N)
    log_r = -np.log(k)
    log_c = -np.log(n)
    log_u = np.zeros(k)
    log_v = np.zeros(n)
    it_run = 0
    for it in range(iterations):
        log_u = log_r - logsumexp(m + log_v[None, :], axis=1)
        log_v = log_c - logsumexp(m + log_u[:, None], axis=0)
        it_run = it + 1
        if it_run % 10 == 0:
            q = np.exp(log_u[:, None] + m + log_v[None, :])
            if marginal_violation(q) < early_stop_tol:
                break
    q = np.exp(log_u[:, None] + m + log_v[None, :])
    return SoftAssignment(q, lam, it_run)


def objective(Q: SoftAssignment, P: ProbMatrix) -> float:
    """Frobenius dot product <Q, -log P>, with 0 * log treated as 0."""
    if Q.values.shape != P.values.shape:
        raise ShapeMismatch("Q and P shapes differ")
    q = Q.values
    mask = q > 0
    return float((q[mask] * -np.log(P.values[mask])).sum())


def extract_labels(Q: SoftAssignment, sample_ids=None) -> LabelSet:
    """Hard labels: per-column argmax of Q, ties to the lowest class index."""
    labels = np.argmax(Q.values, axis=0).astype(np.int64)
    if sample_ids is None:
        sample_ids = [str(i) for i in range(Q.N)]
    return LabelSet(labels, list(sample_ids))


def degeneracy_report(labels: LabelSet, K: int):
    """Shannon entropy (nats) of the label histogram plus per-class counts."""
    counts = np.bincount(np.asarray(labels.labels), minlength=K)
    total = counts.sum()
    entropy = 0.0
    if total > 0:
        p = counts[counts > 0] / total
        entropy = float(-(p * np.log(p)).sum())
    return entropy, counts
