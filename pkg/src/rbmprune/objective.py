"""Performance functionals: KL divergence, its gradients, and cheap monitors."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import (
    DimensionError,
    DiscreteDistribution,
    RbmParams,
    _check_enum_size,
    enumerate_states,
    exact_log_partition,
    exact_visible_distribution,
    hidden_conditional,
    log_unnormalized_marginal,
    sigmoid,
)

_LOG_CLAMP = 1e-12


@dataclass
class GradientSet:
    """Per-parameter gradient (or update) components."""

    d_visible_bias: np.ndarray
    d_hidden_bias: np.ndarray
    d_weights: np.ndarray

    def flatten(self) -> np.ndarray:
        return np.concatenate(
            [self.d_visible_bias, self.d_hidden_bias, self.d_weights.ravel()]
        )

    @classmethod
    def zeros_like(cls, params: RbmParams) -> "GradientSet":
        return cls(
            np.zeros(params.n_visible),
            np.zeros(params.n_hidden),
            np.zeros((params.n_visible, params.n_hidden)),
        )


@dataclass
class GradientStats:
    """Sample mean and unbiased standard deviation of a stochastic gradient."""

    mean: GradientSet
    unbiased_std: GradientSet
    sample_count: int

    def __post_init__(self):
        if self.sample_count < 2:
            raise ValueError("gradient statistics need at least two samples")


def _model_moments(params: RbmParams):
    """Exact <v_i>, <h_j>, <v_i h_j> under the joint p(v, h), by enumeration."""
    p = exact_visible_distribution(params).probabilities
    states = enumerate_states(params.n_visible)
    ph = hidden_conditional(params, states)  # (2^M, N)
    mean_v = p @ states
    mean_h = p @ ph
    mean_vh = states.T @ (p[:, None] * ph)
    return mean_v, mean_h, mean_vh


def _data_moments(q: DiscreteDistribution, params: RbmParams):
    states = enumerate_states(q.n_visible)
    ph = hidden_conditional(params, states)
    w = q.probabilities
    return w @ states, w @ ph, states.T @ (w[:, None] * ph)


def _check_q(q: DiscreteDistribution, params: RbmParams):
    if q.n_visible != params.n_visible:
        raise DimensionError(
            f"distribution over {q.n_visible} bits, model has M = {params.n_visible}"
        )


def exact_kld(q: DiscreteDistribution, params: RbmParams) -> float:
    """D(q || p) by full enumeration, with 0 ln 0 = 0."""
    _check_q(q, params)
    _check_enum_size(params.n_visible)
    states = enumerate_states(params.n_visible)
    logp = log_unnormalized_marginal(params, states) - exact_log_partition(params)
    qp = q.probabilities
    nz = qp > 0
    return float(np.sum(qp[nz] * (np.log(qp[nz]) - logp[nz])))


def exact_kld_gradient(q: DiscreteDistribution, params: RbmParams) -> GradientSet:
    """Exact gradient of D(q || p) with respect to (b, c, W)."""
    _check_q(q, params)
    dv, dh, dvh = _data_moments(q, params)
    mv, mh, mvh = _model_moments(params)
    return GradientSet(mv - dv, mh - dh, mvh - dvh)


def _as_vh_arrays(model_samples, params: RbmParams):
    """Accept a list of ChainState, a (V, H) pair, or a ChainPool."""
    if hasattr(model_samples, "V") and hasattr(model_samples, "H"):
        return model_samples.V, model_samples.H
    if isinstance(model_samples, tuple) and len(model_samples) == 2:
        V, H = model_samples
        return np.atleast_2d(np.asarray(V, float)), np.atleast_2d(np.asarray(H, float))
    V = np.array([s.v for s in model_samples], dtype=np.float64)
    H = np.array([s.h for s in model_samples], dtype=np.float64)
    if V.ndim != 2:
        raise ValueError("empty model sample list")
    return V, H


def _cycle_to(arr: np.ndarray, s: int) -> np.ndarray:
    """Repeat rows cyclically so the batch has exactly s rows."""
    if arr.shape[0] == s:
        return arr
    return arr[np.arange(s) % arr.shape[0]]


def _stats_from_contributions(db, dc, w_pieces, s):
    """Per-parameter mean and unbiased std from per-sample contributions.

    db is (S, M), dc is (S, N).  The weight contribution of sample alpha is
    a sum of rank-one pieces, d_ij^a = sum_p x_i^pa y_j^pa, given as (x, y)
    pairs; mean and raw second moment then reduce to matrix products
    instead of an (S, M, N) intermediate.
    """
    mean_w = sum(x.T @ y for x, y in w_pieces) / s
    sumsq_w = 0.0
    for idx, (xa, ya) in enumerate(w_pieces):
        sumsq_w = sumsq_w + (xa ** 2).T @ (ya ** 2)
        for xb, yb in w_pieces[idx + 1:]:
            sumsq_w = sumsq_w + 2.0 * (xa * xb).T @ (ya * yb)
    var_w = np.maximum(sumsq_w - s * mean_w ** 2, 0.0) / (s - 1)
    mean = GradientSet(db.mean(axis=0), dc.mean(axis=0), mean_w)
    std = GradientSet(db.std(axis=0, ddof=1), dc.std(axis=0, ddof=1), np.sqrt(var_w))
    return GradientStats(mean, std, s)


def stochastic_kld_gradient(minibatch, model_samples, params: RbmParams) -> GradientStats:
    """Sampled KLD gradient with per-parameter means and unbiased stds.

    Contribution alpha pairs the data term of minibatch item alpha with the
    model term of chain alpha, cycling the shorter list.
    """
    Vd = np.atleast_2d(np.asarray(minibatch, dtype=np.float64))
    Vm, Hm = _as_vh_arrays(model_samples, params)
    if Vd.size == 0 or Vm.size == 0:
        raise ValueError("minibatch and model samples must be non-empty")
    s = max(Vd.shape[0], Vm.shape[0])
    if s < 2:
        raise ValueError("need at least two samples for gradient statistics")
    Vd, Vm, Hm = _cycle_to(Vd, s), _cycle_to(Vm, s), _cycle_to(Hm, s)
    Pd = sigmoid(params.hidden_bias + Vd @ params.weights)
    db = -Vd + Vm
    dc = -Pd + Hm
    return _stats_from_contributions(db, dc, [(-Vd, Pd), (Vm, Hm)], s)


def learning_step(params: RbmParams, grad: GradientSet, lam: float) -> RbmParams:
    """Plain gradient descent: xi <- xi - lambda * grad."""
    if lam <= 0:
        raise ValueError("learning rate must be positive")
    g = grad.flatten()
    if not np.all(np.isfinite(g)):
        raise ValueError("non-finite gradient")
    return RbmParams(
        params.visible_bias - lam * grad.d_visible_bias,
        params.hidden_bias - lam * grad.d_hidden_bias,
        params.weights - lam * grad.d_weights,
    )


def reconstruction_error(minibatch, params: RbmParams) -> float:
    """Mean cross-entropy between data and one-step mean-field reconstruction."""
    Vd = np.atleast_2d(np.asarray(minibatch, dtype=np.float64))
    if Vd.size == 0:
        raise ValueError("empty minibatch")
    h_mf = sigmoid(params.hidden_bias + Vd @ params.weights)
    v_mf = sigmoid(params.visible_bias + h_mf @ params.weights.T)
    v_mf = np.clip(v_mf, _LOG_CLAMP, 1.0 - _LOG_CLAMP)
    ll = Vd * np.log(v_mf) + (1.0 - Vd) * np.log(1.0 - v_mf)
    return float(-ll.sum(axis=1).mean())


def d_tilde(q_d, params: RbmParams, ln_z: float):
    """Test-set KLD estimate and negative log-likelihood.

    q_d may be a DiscreteDistribution or a batch of visible samples (its
    empirical distribution is then used).  Requires a ln Z estimate, from
    AIS or exact enumeration.  Returns (d_tilde, nll).
    """
    if not np.isfinite(ln_z):
        raise ValueError("ln Z must be finite")
    if isinstance(q_d, DiscreteDistribution):
        _check_q(q_d, params)
        states = enumerate_states(q_d.n_visible)
        w = q_d.probabilities
        nz = w > 0
        entropy_term = float(np.sum(w[nz] * np.log(w[nz])))
        mean_logp_star = float(w[nz] @ log_unnormalized_marginal(params, states[nz]))
    else:
        Vd = np.atleast_2d(np.asarray(q_d, dtype=np.float64))
        if Vd.size == 0:
            raise ValueError("empty sample list")
        uniq, counts = np.unique(Vd, axis=0, return_counts=True)
        freq = counts / counts.sum()
        entropy_term = float(np.sum(freq * np.log(freq)))
        mean_logp_star = float(freq @ log_unnormalized_marginal(params, uniq))
    nll = ln_z - mean_logp_star
    return entropy_term + nll, nll
