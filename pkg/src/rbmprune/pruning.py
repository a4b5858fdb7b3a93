"""Hidden-unit removal: costs, cost gradients, update rules, and the run loop.

The removal cost of hidden unit k is the KLD increase caused by deleting it.
Since its exact form is hard to estimate by sampling, the run loop works
with an upper bound whose two terms are plain sample means, removes a unit
only when the bound plus a confidence margin is non-positive, and otherwise
descends the bound jointly with the KLD via a sign-gated stochastic update.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import (
    DiscreteDistribution,
    RbmParams,
    enumerate_states,
    exact_visible_distribution,
    remove_hidden_unit,
    sigmoid,
    softplus,
)
from .objective import (
    GradientSet,
    GradientStats,
    _as_vh_arrays,
    _check_q,
    _cycle_to,
    _model_moments,
    _stats_from_contributions,
)
from .sampling import ChainPool, TemperedSchedule

_T_SATURATE = 1e6  # stand-in for an infinite mean/std ratio


@dataclass(frozen=True)
class RemovalCostEstimate:
    """Sampled effective removal cost of one hidden unit."""

    unit_index: int
    mean: float
    unbiased_std: float
    sample_count: int
    components: tuple  # (unbiased var of ln p(h_k=0|v), unbiased var of h_k)


@dataclass(frozen=True)
class PruneConfig:
    a: float = 3.0
    nu: float = 1e-2
    samples_per_step: int = 1000
    pcd_steps: int = 5
    tempered: TemperedSchedule = field(default_factory=TemperedSchedule)
    max_steps: int = 1000
    rng_seed: int = 0

    def __post_init__(self):
        if self.a < 0:
            raise ValueError("confidence multiplier a must be >= 0")
        if self.nu <= 0:
            raise ValueError("parameter change rate nu must be positive")
        if self.samples_per_step < 2:
            raise ValueError("need at least two samples per step")
        if self.pcd_steps < 1:
            raise ValueError("pcd_steps must be >= 1")


class PruneTrace:
    """Per-step record of a removal run.

    Arrays are parallel over executed steps: the hidden-unit count, the
    persistent id of the argmin-cost unit, and its cost mean/std before the
    descent update.  Removal events and optional evaluation snapshots are
    kept separately.
    """

    def __init__(self, max_steps: int):
        self._cap = max_steps
        self.n_hidden = np.zeros(max_steps, dtype=np.int32)
        self.target_unit = np.full(max_steps, -1, dtype=np.int32)
        self.cost_mean = np.full(max_steps, np.nan)
        self.cost_std = np.full(max_steps, np.nan)
        self.steps_run = 0
        self.start_step = 0
        self.removals = []  # dicts: step, unit_id, cost_mean, cost_std, accept_frac
        self.evals = []     # dicts: step + whatever the eval hook returned
        self.notes = []
        self.unit_ids = []  # surviving persistent unit ids, filled at run end

    def record(self, n_hidden, target_unit, cost_mean, cost_std):
        i = self.steps_run
        self.n_hidden[i] = n_hidden
        self.target_unit[i] = target_unit
        self.cost_mean[i] = cost_mean
        self.cost_std[i] = cost_std
        self.steps_run += 1

    def trim(self):
        for name in ("n_hidden", "target_unit", "cost_mean", "cost_std"):
            setattr(self, name, getattr(self, name)[: self.steps_run])

    def records(self):
        """One dict per executed step, suitable for JSONL serialization."""
        for i in range(self.steps_run):
            yield {
                "step": self.start_step + i,
                "n_hidden": int(self.n_hidden[i]),
                "target_unit": int(self.target_unit[i]),
                "cost_mean": float(self.cost_mean[i]),
                "cost_std": float(self.cost_std[i]),
            }


def _hidden_off_logprob(params: RbmParams, vectors: np.ndarray, k: int):
    """ln p(h_k = 0 | v) for a batch of visible vectors."""
    act = params.hidden_bias[k] + vectors @ params.weights[:, k]
    return -softplus(act)


def _check_unit(params: RbmParams, k: int):
    if not 0 <= k < params.n_hidden:
        raise IndexError(f"hidden unit {k} out of range [0, {params.n_hidden})")


def removal_cost_exact(q: DiscreteDistribution, params: RbmParams, k: int) -> float:
    """C_k = -sum_v q(v) ln p(h_k=0|v) + ln p(h_k=0), by enumeration."""
    _check_q(q, params)
    _check_unit(params, k)
    states = enumerate_states(params.n_visible)
    lp0 = _hidden_off_logprob(params, states, k)
    p = exact_visible_distribution(params).probabilities
    return float(-(q.probabilities @ lp0) + np.log(p @ np.exp(lp0)))


def multi_removal_cost_exact(q: DiscreteDistribution, params: RbmParams, ks) -> float:
    """Joint removal cost of several hidden units, by enumeration."""
    ks = list(ks)
    if len(set(ks)) != len(ks):
        raise ValueError(f"duplicate unit indices in {ks}")
    for k in ks:
        _check_unit(params, k)
    states = enumerate_states(params.n_visible)
    lp0 = np.zeros(states.shape[0])
    for k in ks:
        lp0 += _hidden_off_logprob(params, states, k)
    p = exact_visible_distribution(params).probabilities
    return float(-(q.probabilities @ lp0) + np.log(p @ np.exp(lp0)))


def removal_cost_gradient_exact(q: DiscreteDistribution, params: RbmParams,
                                k: int) -> GradientSet:
    """Exact gradient of C_k, with clamped expectations by enumeration.

    Expectations under p(v, h_{\\k} | h_k = 0) equal those of the model with
    unit k removed, re-embedded with zeros at position k.
    """
    _check_q(q, params)
    _check_unit(params, k)
    mv, mh, mvh = _model_moments(params)
    reduced = remove_hidden_unit(params, k)
    bv, bh_r, bvh_r = _model_moments(reduced)
    bh = np.insert(bh_r, k, 0.0)
    bvh = np.insert(bvh_r, k, 0.0, axis=1)

    states = enumerate_states(params.n_visible)
    pk = sigmoid(params.hidden_bias[k] + states @ params.weights[:, k])
    qv = q.probabilities
    db = bv - mv
    dc = bh - mh
    dc[k] += qv @ pk
    dw = bvh - mvh
    dw[:, k] += states.T @ (qv * pk)
    return GradientSet(db, dc, dw)


def removal_cost_gradient_estimate(minibatch, model_samples, clamped_samples,
                                   params: RbmParams, k: int) -> GradientStats:
    """Sampled gradient of C_k with per-parameter means and unbiased stds.

    Sample alpha pairs the data vector alpha (Kronecker-delta terms), the
    clamped chain alpha, and the unclamped chain alpha, cycling shorter
    lists.  clamped_samples must have h_k = 0 throughout.
    """
    _check_unit(params, k)
    Vd = np.atleast_2d(np.asarray(minibatch, dtype=np.float64))
    Vm, Hm = _as_vh_arrays(model_samples, params)
    Vc, Hc = _as_vh_arrays(clamped_samples, params)
    if Vd.size == 0 or Vm.size == 0 or Vc.size == 0:
        raise ValueError("all three sample lists must be non-empty")
    if np.any(Hc[:, k] != 0):
        raise ValueError(f"clamped samples contain h_{k} = 1")
    s = max(Vd.shape[0], Vm.shape[0], Vc.shape[0])
    Vd, Vm, Hm = _cycle_to(Vd, s), _cycle_to(Vm, s), _cycle_to(Hm, s)
    Vc, Hc = _cycle_to(Vc, s), _cycle_to(Hc, s)

    pk = sigmoid(params.hidden_bias[k] + Vd @ params.weights[:, k])
    db = Vc - Vm
    dc = Hc - Hm
    dc = dc.copy()
    dc[:, k] += pk
    ek = np.zeros((s, params.n_hidden))
    ek[:, k] = 1.0
    pieces = [(Vc, Hc), (-Vm, Hm), (Vd * pk[:, None], ek)]
    return _stats_from_contributions(db, dc, pieces, s)


def effective_removal_cost(minibatch, model_samples, params: RbmParams,
                           k: int) -> RemovalCostEstimate:
    """Sampled upper-bound removal cost C'_k with its unbiased std.

    mean = -(1/S) sum_a ln p(h_k=0|v^a) - (1/S) sum_a h_k^a, the first sum
    over data vectors, the second over model-chain hidden bits; the std
    combines the unbiased variances of the two averaged quantities.
    """
    _check_unit(params, k)
    Vd = np.atleast_2d(np.asarray(minibatch, dtype=np.float64))
    Vm, Hm = _as_vh_arrays(model_samples, params)
    s = Vd.shape[0]
    if Vm.shape[0] != s:
        raise ValueError("minibatch and model samples must share one sample count S")
    if s < 2:
        raise ValueError("need S >= 2")
    lp0 = _hidden_off_logprob(params, Vd, k)
    hk = Hm[:, k]
    var1 = float(lp0.var(ddof=1))
    var2 = float(hk.var(ddof=1))
    mean = float(-lp0.mean() - hk.mean())
    return RemovalCostEstimate(
        unit_index=k,
        mean=mean,
        unbiased_std=float(np.sqrt((var1 + var2) / s)),
        sample_count=s,
        components=(var1, var2),
    )


def removal_criterion(est: RemovalCostEstimate, a: float) -> bool:
    """True when the confidence-adjusted cost allows removal."""
    return est.mean + a * est.unbiased_std <= 0.0


def naive_update(dD: GradientSet, dC: GradientSet, nu: float) -> GradientSet:
    """Sign-gated descent step: move along -dD only where dD and dC agree.

    The gate is open at exact zero products, so the update is zero exactly
    when every open-gate component of dD is zero.
    """
    if nu <= 0:
        raise ValueError("nu must be positive")
    def one(d, c):
        gate = (d * c) >= 0.0
        return -nu * gate * d
    return GradientSet(
        one(dD.d_visible_bias, dC.d_visible_bias),
        one(dD.d_hidden_bias, dC.d_hidden_bias),
        one(dD.d_weights, dC.d_weights),
    )


def _t_ratios(mean, std, s):
    """sqrt(S) * mean / std, with saturation for zero std and 0/0 flags."""
    zero_over_zero = (mean == 0.0) & (std == 0.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.sqrt(s) * mean / std
    t = np.where(std == 0.0, np.sign(mean) * _T_SATURATE, t)
    t[zero_over_zero] = 0.0
    return t, zero_over_zero


def _gated_delta(mean_d, std_d, mean_c, std_c, s, nu, rng):
    t_d, zz_d = _t_ratios(mean_d, std_d, s)
    t_c, zz_c = _t_ratios(mean_c, std_c, s)
    with np.errstate(over="ignore"):
        prod = np.clip(t_d, -_T_SATURATE, _T_SATURATE) * np.clip(t_c, -_T_SATURATE, _T_SATURATE)
    # an infinite ratio times a zero-mean ratio counts as an even bet
    prod = np.where((t_d == 0.0) | (t_c == 0.0), 0.0, prod)
    p_accept = sigmoid(np.clip(prod, -700.0, 700.0))
    z = rng.random(mean_d.shape) < p_accept
    z |= zz_d | zz_c  # 0/0 from rounding: approve the update
    return -nu * z * mean_d


def stochastic_update(dD_stats: GradientStats, dC_stats: GradientStats,
                      nu: float, rng) -> GradientSet:
    """Randomized sign gate: accept component i with probability
    sig(t_D,i * t_C,i), where t = sqrt(S) * mean / std, and move along the
    mean KLD gradient on accepted components."""
    if nu <= 0:
        raise ValueError("nu must be positive")
    if dD_stats.sample_count != dC_stats.sample_count:
        raise ValueError("gradient statistics must share the sample count S")
    s = dD_stats.sample_count
    parts = []
    for attr in ("d_visible_bias", "d_hidden_bias", "d_weights"):
        parts.append(_gated_delta(
            getattr(dD_stats.mean, attr), getattr(dD_stats.unbiased_std, attr),
            getattr(dC_stats.mean, attr), getattr(dC_stats.unbiased_std, attr),
            s, nu, rng,
        ))
    return GradientSet(*parts)


def prune_run(params: RbmParams, draw_batch, cfg: PruneConfig, pool: ChainPool,
              clamped_pool: ChainPool | None = None, rng=None, unit_ids=None,
              eval_hook=None, checkpoint_hook=None, start_step: int = 0):
    """Greedy hidden-unit removal loop.

    Per step: draw a data minibatch and S PCD-n chain realizations, compute
    the sampled cost bound for every remaining unit, remove argmin units
    while the confidence criterion holds (refreshing all chains by tempered
    transitions after each removal), then descend the cheapest unit's cost
    via the stochastic sign-gated update.

    draw_batch(rng, size) must return a (size, M) 0/1 array.  Hooks may
    return a dict (recorded in the trace) or None.  Returns (params, trace).
    """
    if rng is None:
        rng = np.random.default_rng(cfg.rng_seed)
    if unit_ids is None:
        unit_ids = list(range(params.n_hidden))
    if clamped_pool is None:
        clamped_pool = ChainPool(params, pool.size, cfg.rng_seed + 1)
        clamped_pool.reseed_from(pool)
    trace = PruneTrace(cfg.max_steps)
    trace.start_step = start_step
    s = cfg.samples_per_step
    clamp_target = clamped_pool.clamp

    for step_i in range(cfg.max_steps):
        step = start_step + step_i
        if params.n_hidden == 0:
            trace.notes.append(f"step {step}: all hidden units removed")
            break

        # inner repeat: evaluate costs, remove while the criterion holds
        while True:
            minibatch = draw_batch(rng, s)
            pool.advance(params, cfg.pcd_steps)
            act = params.hidden_bias + minibatch @ params.weights
            lp0 = -softplus(act)                      # ln p(h_j=0|v) per unit
            costs = -lp0.mean(axis=0) - pool.H.mean(axis=0)
            k = int(np.argmin(costs))                 # ties: lowest index
            var1 = lp0[:, k].var(ddof=1)
            var2 = pool.H[:, k].var(ddof=1)
            cost_std = float(np.sqrt((var1 + var2) / s))
            cost_mean = float(costs[k])
            if cost_mean + cfg.a * cost_std <= 0.0:
                removed_id = unit_ids.pop(k)
                params = remove_hidden_unit(params, k)
                pool.drop_hidden_unit(k)
                clamped_pool.drop_hidden_unit(k)
                clamp_target = None
                accept = pool.tempered_refresh(params, cfg.tempered)
                trace.removals.append({
                    "step": step, "unit_id": removed_id,
                    "cost_mean": cost_mean, "cost_std": cost_std,
                    "n_hidden_after": params.n_hidden,
                    "tempered_accept": accept,
                })
                if params.n_hidden == 0:
                    break
            else:
                break

        if params.n_hidden == 0:
            trace.record(0, -1, np.nan, np.nan)
            trace.notes.append(f"step {step}: all hidden units removed")
            break

        trace.record(params.n_hidden, unit_ids[k], cost_mean, cost_std)

        # clamped pool tracks the current target unit
        if clamp_target != k:
            clamped_pool.reseed_from(pool, clamp=k)
            clamped_pool.tempered_refresh(params, cfg.tempered)
            clamp_target = k
        clamped_pool.advance(params, cfg.pcd_steps)

        dD = _kld_gradient_stats(minibatch, pool, params)
        dC = _cost_gradient_stats(minibatch, pool, clamped_pool, params, k, act)
        delta = _apply_update(dD, dC, cfg.nu, rng)
        params = RbmParams(
            params.visible_bias + delta.d_visible_bias,
            params.hidden_bias + delta.d_hidden_bias,
            params.weights + delta.d_weights,
        )

        if eval_hook is not None:
            rec = eval_hook(step, params)
            if rec is not None:
                trace.evals.append({"step": step, **rec})
        if checkpoint_hook is not None:
            checkpoint_hook(step, params, pool, clamped_pool, rng, unit_ids)

    trace.trim()
    trace.unit_ids = list(unit_ids)
    return params, trace


def _kld_gradient_stats(Vd, pool, params):
    Pd = sigmoid(params.hidden_bias + Vd @ params.weights)
    db = -Vd + pool.V
    dc = -Pd + pool.H
    return _stats_from_contributions(db, dc, [(-Vd, Pd), (pool.V, pool.H)], Vd.shape[0])


def _cost_gradient_stats(Vd, pool, clamped_pool, params, k, act):
    s = Vd.shape[0]
    pk = sigmoid(act[:, k])
    db = clamped_pool.V - pool.V
    dc = clamped_pool.H - pool.H
    dc[:, k] += pk
    ek = np.zeros((s, params.n_hidden))
    ek[:, k] = 1.0
    pieces = [(clamped_pool.V, clamped_pool.H), (-pool.V, pool.H), (Vd * pk[:, None], ek)]
    return _stats_from_contributions(db, dc, pieces, s)


def _apply_update(dD, dC, nu, rng):
    return stochastic_update(dD, dC, nu, rng)
