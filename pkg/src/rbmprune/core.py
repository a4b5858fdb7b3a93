"""Binary RBM parameterization, energy, conditionals, and exact enumeration.

All probabilities over visible configurations use a little-endian index
convention: bit i of the integer index equals v_i.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit, logsumexp

# Exact enumeration guards.
MAX_ENUM_VISIBLE = 24
MAX_ENUM_JOINT = 26


class DimensionError(ValueError):
    """Shapes of parameters and configurations disagree."""


def sigmoid(x):
    """Numerically stable logistic function."""
    return expit(x)


def softplus(x):
    """ln(1 + e^x), stable for large |x|."""
    return np.logaddexp(0.0, x)


@dataclass(frozen=True)
class RbmParams:
    """Biases and weights of a binary RBM.

    visible_bias has length M, hidden_bias length N, weights shape (M, N).
    N = 0 is legal: the model degenerates to independent visible units.
    """

    visible_bias: np.ndarray
    hidden_bias: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        b = np.asarray(self.visible_bias, dtype=np.float64)
        c = np.asarray(self.hidden_bias, dtype=np.float64)
        w = np.asarray(self.weights, dtype=np.float64)
        if b.ndim != 1 or c.ndim != 1 or w.ndim != 2:
            raise DimensionError("expected 1-D biases and a 2-D weight matrix")
        if b.shape[0] < 1:
            raise DimensionError("need at least one visible unit")
        if w.shape != (b.shape[0], c.shape[0]):
            raise DimensionError(
                f"weight shape {w.shape} != ({b.shape[0]}, {c.shape[0]})"
            )
        for arr, name in ((b, "visible_bias"), (c, "hidden_bias"), (w, "weights")):
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"non-finite entries in {name}")
        object.__setattr__(self, "visible_bias", b)
        object.__setattr__(self, "hidden_bias", c)
        object.__setattr__(self, "weights", w)

    @property
    def n_visible(self) -> int:
        return self.visible_bias.shape[0]

    @property
    def n_hidden(self) -> int:
        return self.hidden_bias.shape[0]

    @classmethod
    def zeros(cls, m: int, n: int) -> "RbmParams":
        return cls(np.zeros(m), np.zeros(n), np.zeros((m, n)))

    @classmethod
    def random(cls, m: int, n: int, rng, scale: float = 1.0) -> "RbmParams":
        return cls(
            scale * rng.standard_normal(m),
            scale * rng.standard_normal(n),
            scale * rng.standard_normal((m, n)),
        )


@dataclass(frozen=True)
class DiscreteDistribution:
    """Explicit probability table over all 2^M binary visible vectors."""

    probabilities: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.probabilities, dtype=np.float64)
        m = int(np.log2(p.shape[0]))
        if p.ndim != 1 or 2 ** m != p.shape[0]:
            raise ValueError("support size must be a power of two")
        if m > MAX_ENUM_VISIBLE:
            raise ValueError(f"support 2^{m} exceeds enumeration bound 2^{MAX_ENUM_VISIBLE}")
        if np.any(p < 0):
            raise ValueError("negative probability entry")
        if abs(p.sum() - 1.0) > 1e-12:
            raise ValueError(f"probabilities sum to {p.sum()!r}, not 1")
        object.__setattr__(self, "probabilities", p)

    @property
    def n_visible(self) -> int:
        return int(np.log2(self.probabilities.shape[0]))

    @classmethod
    def uniform(cls, m: int) -> "DiscreteDistribution":
        _check_enum_size(m)
        return cls(np.full(2 ** m, 2.0 ** -m))

    @classmethod
    def from_samples(cls, vectors, m: int) -> "DiscreteDistribution":
        """Empirical distribution of a batch of binary visible vectors."""
        _check_enum_size(m)
        vectors = np.atleast_2d(np.asarray(vectors, dtype=np.float64))
        if vectors.shape[1] != m:
            raise DimensionError(f"vectors have length {vectors.shape[1]}, expected {m}")
        idx = encode_visible(vectors)
        counts = np.bincount(idx, minlength=2 ** m).astype(np.float64)
        return cls(counts / counts.sum())

    def entropy_term(self) -> float:
        """Sum of q ln q over the support, with 0 ln 0 = 0."""
        p = self.probabilities
        nz = p > 0
        return float(np.sum(p[nz] * np.log(p[nz])))


def _check_enum_size(m: int):
    if m > MAX_ENUM_VISIBLE:
        raise ValueError(
            f"M = {m} exceeds the exact-enumeration bound M <= {MAX_ENUM_VISIBLE}"
        )


def enumerate_states(m: int) -> np.ndarray:
    """All 2^m binary vectors as a (2^m, m) float array, little-endian indexed."""
    _check_enum_size(m)
    idx = np.arange(2 ** m, dtype=np.int64)
    return ((idx[:, None] >> np.arange(m)) & 1).astype(np.float64)


def encode_visible(vectors: np.ndarray) -> np.ndarray:
    """Integer index of each row, bit i = v_i."""
    vectors = np.atleast_2d(np.asarray(vectors))
    m = vectors.shape[1]
    weights = (1 << np.arange(m)).astype(np.int64)
    return (vectors.astype(np.int64) @ weights)


def _check_visible(params: RbmParams, v: np.ndarray) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    if v.shape[-1] != params.n_visible:
        raise DimensionError(
            f"visible vector length {v.shape[-1]} != M = {params.n_visible}"
        )
    return v


def _check_hidden(params: RbmParams, h: np.ndarray) -> np.ndarray:
    h = np.asarray(h, dtype=np.float64)
    if h.shape[-1] != params.n_hidden:
        raise DimensionError(
            f"hidden vector length {h.shape[-1]} != N = {params.n_hidden}"
        )
    return h


def energy(params: RbmParams, v, h):
    """E(v, h) = -b.v - c.h - v^T W h.  Accepts single vectors or batches."""
    v = _check_visible(params, v)
    h = _check_hidden(params, h)
    coupling = np.sum((v @ params.weights) * h, axis=-1)
    return -(v @ params.visible_bias) - (h @ params.hidden_bias) - coupling


def hidden_conditional(params: RbmParams, v):
    """p(h_j = 1 | v) for every hidden unit."""
    v = _check_visible(params, v)
    return sigmoid(params.hidden_bias + v @ params.weights)


def visible_conditional(params: RbmParams, h):
    """p(v_i = 1 | h) for every visible unit."""
    h = _check_hidden(params, h)
    return sigmoid(params.visible_bias + h @ params.weights.T)


def log_unnormalized_marginal(params: RbmParams, v):
    """ln p*(v) = b.v + sum_j softplus(c_j + sum_i v_i w_ij)."""
    v = _check_visible(params, v)
    act = params.hidden_bias + v @ params.weights
    return v @ params.visible_bias + np.sum(softplus(act), axis=-1)


def exact_log_partition(params: RbmParams) -> float:
    """ln Z by enumeration of all visible configurations (M <= 24)."""
    _check_enum_size(params.n_visible)
    states = enumerate_states(params.n_visible)
    return float(logsumexp(log_unnormalized_marginal(params, states)))


def exact_visible_distribution(params: RbmParams) -> DiscreteDistribution:
    """Exact p(v) table by enumeration (M <= 24)."""
    _check_enum_size(params.n_visible)
    states = enumerate_states(params.n_visible)
    logp = log_unnormalized_marginal(params, states)
    logp -= logsumexp(logp)
    p = np.exp(logp)
    p /= p.sum()  # absorb rounding so the table invariant holds exactly
    return DiscreteDistribution(p)


def remove_hidden_unit(params: RbmParams, k: int) -> RbmParams:
    """Delete hidden bias k and weight column k; all other entries unchanged."""
    if not 0 <= k < params.n_hidden:
        raise IndexError(f"hidden unit {k} out of range [0, {params.n_hidden})")
    return RbmParams(
        params.visible_bias.copy(),
        np.delete(params.hidden_bias, k),
        np.delete(params.weights, k, axis=1),
    )


def convert_spin_parameterization(params: RbmParams) -> RbmParams:
    """Equivalent {-1,1}-convention parameters for a {0,1}-convention model.

    W' = W/4, b'_i = b_i/2 + sum_j w_ij/4, c'_j = c_j/2 + sum_i w_ij/4.
    The visible distributions agree under the state map v' = 2v - 1.
    """
    w = params.weights
    return RbmParams(
        params.visible_bias / 2.0 + w.sum(axis=1) / 4.0,
        params.hidden_bias / 2.0 + w.sum(axis=0) / 4.0,
        w / 4.0,
    )
