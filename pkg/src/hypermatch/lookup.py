"""Retrieval-weight transforms mapping similarity vectors onto the simplex.

Four strategies turn a vector of query/support similarities into convex
combination weights over the support rows:

* ``dense``  -- softmax over every entry (all weights strictly positive),
* ``topn``   -- softmax restricted to the n most similar entries,
* ``max``    -- one-hot on the single most similar entry,
* ``sparse`` -- Euclidean projection onto the probability simplex, which
  zeroes every entry whose similarity falls below a data-dependent
  threshold and assigns ``z_u - tau`` to the rest.

All computation happens in float64.  The sparse projection subtracts the
row maximum before projecting: the projection absorbs uniform shifts, so
working in shifted coordinates makes the output bit-identical whenever an
input shift is exactly representable, at the price of the reported
threshold being reconstructed as ``tau = tau_shifted + max(z)`` (accurate
to one rounding).  Ties are handled stably everywhere: one-hot selection
and top-n truncation prefer the lowest index.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

import numpy as np

from .errors import ValidationError

_TOPN_RE = re.compile(r"^top[_-]?n?[:=]?(\d+)$")


@dataclass(frozen=True)
class LookupStrategy:
    """One of the four weighting strategies, with ``n`` for the top-n variant."""

    kind: str
    n: int | None = None

    def __post_init__(self) -> None:
        if self.kind not in ("dense", "topn", "max", "sparse"):
            raise ValidationError(f"unknown lookup kind {self.kind!r}")
        if self.kind == "topn":
            if self.n is None or self.n < 1:
                raise ValidationError("topn lookup needs n >= 1")
        elif self.n is not None:
            raise ValidationError(f"lookup kind {self.kind!r} takes no n")

    @classmethod
    def parse(cls, text: str) -> "LookupStrategy":
        """Parse CLI spellings: ``sparse``, ``dense``, ``max``, ``top10``, ``topn:10``."""
        token = text.strip().lower()
        if token in ("sparse", "sparsemax"):
            return cls("sparse")
        if token in ("dense", "softmax"):
            return cls("dense")
        if token in ("max", "maximum"):
            return cls("max")
        match = _TOPN_RE.match(token)
        if match:
            return cls("topn", int(match.group(1)))
        raise ValidationError(f"cannot parse lookup strategy {text!r}")

    def label(self) -> str:
        return f"top{self.n}" if self.kind == "topn" else self.kind


@dataclass
class RetrievalWeights:
    """Simplex weights over support rows, with the sparse threshold if any."""

    weights: np.ndarray
    support_size: int
    threshold: float | None = None


def _as_similarity_matrix(z: np.ndarray) -> np.ndarray:
    matrix = np.asarray(z, dtype=np.float64)
    if matrix.ndim == 1:
        matrix = matrix[None, :]
    if matrix.ndim != 2 or matrix.shape[1] == 0:
        raise ValidationError("similarities must be a non-empty vector or matrix of rows")
    if not np.isfinite(matrix).all():
        raise ValidationError("similarities must be finite")
    return matrix


def sparsemax_matrix(Z: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Row-wise simplex projection. Returns (weights, thresholds, support sizes)."""
    Z = _as_similarity_matrix(Z)
    shift = Z.max(axis=1, keepdims=True)
    shifted = Z - shift
    ordered = np.sort(shifted, axis=1)[:, ::-1]
    cumulative = np.cumsum(ordered, axis=1)
    ranks = np.arange(1, Z.shape[1] + 1, dtype=np.float64)
    feasible = 1.0 + ranks * ordered > cumulative
    # The feasible set is a prefix; take its largest member.
    last = Z.shape[1] - 1 - np.argmax(feasible[:, ::-1], axis=1)
    support = last + 1
    tau_shifted = (np.take_along_axis(cumulative, last[:, None], axis=1)[:, 0] - 1.0) / support
    weights = np.maximum(0.0, shifted - tau_shifted[:, None])
    return weights, tau_shifted + shift[:, 0], support


def _softmax_rows_on(Z: np.ndarray, columns: np.ndarray) -> np.ndarray:
    """Softmax over the given per-row columns (ascending index order); zeros elsewhere."""
    values = np.take_along_axis(Z, columns, axis=1)
    peak = values.max(axis=1, keepdims=True)
    exponentials = np.exp(values - peak)
    total = exponentials.sum(axis=1, keepdims=True)
    weights = np.zeros_like(Z)
    np.put_along_axis(weights, columns, exponentials / total, axis=1)
    return weights


def dense_matrix(Z: np.ndarray) -> np.ndarray:
    Z = _as_similarity_matrix(Z)
    all_columns = np.broadcast_to(np.arange(Z.shape[1]), Z.shape)
    return _softmax_rows_on(Z, all_columns)


def topn_matrix(Z: np.ndarray, n: int) -> np.ndarray:
    Z = _as_similarity_matrix(Z)
    if n < 1:
        raise ValidationError(f"top-n needs n >= 1, got {n}")
    n = min(n, Z.shape[1])
    order = np.argsort(-Z, axis=1, kind="stable")[:, :n]
    columns = np.sort(order, axis=1)
    return _softmax_rows_on(Z, columns)


def max_matrix(Z: np.ndarray) -> np.ndarray:
    Z = _as_similarity_matrix(Z)
    weights = np.zeros_like(Z)
    weights[np.arange(Z.shape[0]), np.argmax(Z, axis=1)] = 1.0
    return weights


def weights_matrix(Z: np.ndarray, strategy: LookupStrategy) -> np.ndarray:
    """Apply a strategy row-wise; every row of the result sums to one."""
    if strategy.kind == "sparse":
        return sparsemax_matrix(Z)[0]
    if strategy.kind == "dense":
        return dense_matrix(Z)
    if strategy.kind == "topn":
        return topn_matrix(Z, strategy.n)
    return max_matrix(Z)


def _vector(z: np.ndarray) -> np.ndarray:
    vector = np.asarray(z, dtype=np.float64)
    if vector.ndim != 1 or vector.size == 0:
        raise ValidationError("expected a non-empty 1-D similarity vector")
    return vector


def sparsemax(z: np.ndarray) -> RetrievalWeights:
    """Project a similarity vector onto the simplex (sorted-threshold algorithm)."""
    weights, tau, support = sparsemax_matrix(_vector(z))
    return RetrievalWeights(weights[0], int(support[0]), float(tau[0]))


def dense_lookup(z: np.ndarray) -> RetrievalWeights:
    """Softmax weights; numerically stable under max-subtraction."""
    weights = dense_matrix(_vector(z))[0]
    return RetrievalWeights(weights, int(np.count_nonzero(weights)))


def topn_lookup(z: np.ndarray, n: int) -> RetrievalWeights:
    """Softmax over the n most similar entries, exact zeros elsewhere."""
    weights = topn_matrix(_vector(z), n)[0]
    return RetrievalWeights(weights, int(np.count_nonzero(weights)))


def max_lookup(z: np.ndarray) -> RetrievalWeights:
    """One-hot weight on the most similar entry (lowest index on ties)."""
    weights = max_matrix(_vector(z))[0]
    return RetrievalWeights(weights, 1)


def sparsemax_oracle(z: np.ndarray) -> RetrievalWeights:
    """Independent simplex projection used to cross-check ``sparsemax``.

    For vectors up to length 12 it enumerates every candidate active set
    and keeps the feasible one with the smallest squared distance to the
    input.  Longer vectors are solved by bisecting the threshold in
    ``sum(max(0, z - tau)) = 1``, which is monotone in tau.  Neither path
    shares the sort-based production code.
    """
    vector = _vector(z)
    size = vector.size
    if size <= 12:
        subsets = np.arange(1, 2**size, dtype=np.uint32)
        masks = ((subsets[:, None] >> np.arange(size)) & 1).astype(bool)
        cardinality = masks.sum(axis=1)
        offsets = (1.0 - masks @ vector) / cardinality
        smallest_member = np.where(masks, vector, np.inf).min(axis=1)
        feasible = smallest_member + offsets >= -1e-12
        distance = cardinality * offsets**2 + (vector**2).sum() - masks @ (vector**2)
        distance[~feasible] = np.inf
        best = int(np.argmin(distance))
        weights = np.where(masks[best], np.maximum(0.0, vector + offsets[best]), 0.0)
        tau = -float(offsets[best])
    else:
        low, high = float(vector.max()) - 1.0, float(vector.max())
        for _ in range(200):
            mid = 0.5 * (low + high)
            if np.maximum(0.0, vector - mid).sum() > 1.0:
                low = mid
            else:
                high = mid
        tau = 0.5 * (low + high)
        weights = np.maximum(0.0, vector - tau)
    return RetrievalWeights(weights, int(np.count_nonzero(weights)), tau)
