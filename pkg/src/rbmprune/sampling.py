"""Monte Carlo machinery: block Gibbs, persistent chains, tempered transitions, AIS.

All randomness flows through numpy Generators seeded explicitly, so every
trajectory is reproducible bit for bit from a 64-bit seed.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .core import RbmParams, DimensionError, energy, sigmoid


@dataclass
class ChainState:
    """One Gibbs chain configuration (v, h)."""

    v: np.ndarray
    h: np.ndarray


@dataclass(frozen=True)
class TemperedSchedule:
    """Linear inverse-temperature ladder from 1 down to beta_low and back."""

    beta_low: float = 0.9
    steps: int = 100

    def __post_init__(self):
        if not 0.0 < self.beta_low <= 1.0:
            raise ValueError(f"beta_low must lie in (0, 1], got {self.beta_low}")
        if self.steps < 1:
            raise ValueError("need at least one ladder interval")

    def grid(self) -> np.ndarray:
        return np.linspace(1.0, self.beta_low, self.steps + 1)


@dataclass(frozen=True)
class AisConfig:
    num_samples: int = 100
    num_intervals: int = 10_000
    rng_seed: int = 0

    def __post_init__(self):
        if self.num_samples < 1 or self.num_intervals < 1:
            raise ValueError("num_samples and num_intervals must be positive")


def _bernoulli_from_logits(act, rng, out):
    """out[:] = 1 with probability sigmoid(act), elementwise; act is consumed.

    Uniform variates are drawn in float32: their 2^-24 grid shifts each
    Bernoulli probability by at most 6e-8, far below any statistical
    resolution reached here, and halves the generator cost.
    """
    np.negative(act, out=act)
    with np.errstate(over="ignore"):
        np.exp(act, out=act)
    act += 1.0
    np.reciprocal(act, out=act)
    np.less(rng.random(act.shape, dtype=np.float32), act, out=out)


def _update_h(params, V, H, rng, beta, clamp, act=None):
    if act is None:
        act = V @ params.weights
        act += params.hidden_bias
    else:
        act = act + params.hidden_bias
    if beta != 1.0:
        act *= beta
    _bernoulli_from_logits(act, rng, H)
    if clamp is not None:
        H[:, clamp] = 0.0


def _update_v(params, V, H, rng, beta):
    act = H @ params.weights.T
    act += params.visible_bias
    if beta != 1.0:
        act *= beta
    _bernoulli_from_logits(act, rng, V)


def _sweep(params, V, H, rng, beta=1.0, clamp=None, reverse=False):
    """One block Gibbs sweep on a batch, at inverse temperature beta.

    Forward order resamples h then v; reverse=True resamples v then h
    (the time-reversal of the forward sweep, used on the tempered
    down-ladder).  Arrays are updated in place.
    """
    if reverse:
        _update_v(params, V, H, rng, beta)
        _update_h(params, V, H, rng, beta, clamp)
    else:
        _update_h(params, V, H, rng, beta, clamp)
        _update_v(params, V, H, rng, beta)


class ChainPool:
    """A pool of persistent Gibbs chains stored as dense 0/1 arrays.

    If clamp is set to a hidden index k, every sweep forces h_k = 0, so the
    pool samples the model conditioned on that unit being off.
    """

    def __init__(self, params: RbmParams, size: int, rng_seed: int, clamp=None):
        if size < 1:
            raise ValueError("pool needs at least one chain")
        # SFC64 is the fastest numpy bit generator; pools burn through far
        # more variates than anything else here
        self.rng = np.random.Generator(np.random.SFC64(rng_seed))
        self.V = (self.rng.random((size, params.n_visible)) < 0.5).astype(np.float64)
        self.H = (self.rng.random((size, params.n_hidden)) < 0.5).astype(np.float64)
        self.clamp = clamp
        if clamp is not None:
            self.H[:, clamp] = 0.0

    @property
    def size(self) -> int:
        return self.V.shape[0]

    def states(self):
        return [ChainState(self.V[i].copy(), self.H[i].copy()) for i in range(self.size)]

    def advance(self, params: RbmParams, n: int):
        """n persistent block Gibbs sweeps on every chain."""
        self._check_dims(params)
        for _ in range(n):
            _sweep(params, self.V, self.H, self.rng, clamp=self.clamp)

    def drop_hidden_unit(self, k: int):
        self.H = np.delete(self.H, k, axis=1)
        if self.clamp is not None:
            if self.clamp == k:
                self.clamp = None
            elif self.clamp > k:
                self.clamp -= 1

    def reseed_from(self, other: "ChainPool", clamp=None):
        """Copy chain states from another pool, optionally clamping a unit."""
        self.V = other.V.copy()
        self.H = other.H.copy()
        self.clamp = clamp
        if clamp is not None:
            self.H[:, clamp] = 0.0

    def tempered_refresh(self, params: RbmParams, sched: TemperedSchedule) -> float:
        """One tempered transition per chain; returns the acceptance fraction."""
        self._check_dims(params)
        accepted = _tempered_batch(params, self.V, self.H, sched, self.rng, self.clamp)
        return float(np.mean(accepted))

    def _check_dims(self, params):
        if self.V.shape[1] != params.n_visible or self.H.shape[1] != params.n_hidden:
            raise DimensionError("pool dimensions do not match the model")


def gibbs_sweep(params: RbmParams, state: ChainState, rng, beta: float = 1.0,
                clamp=None) -> ChainState:
    """One block Gibbs sweep (h then v) on a single chain state."""
    V = np.atleast_2d(np.asarray(state.v, dtype=np.float64)).copy()
    H = np.atleast_2d(np.asarray(state.h, dtype=np.float64)).copy()
    if V.shape[1] != params.n_visible or H.shape[1] != params.n_hidden:
        raise DimensionError("chain state does not match the model dimensions")
    _sweep(params, V, H, rng, beta=beta, clamp=clamp)
    return ChainState(V[0], H[0])


def pcd_draw(params: RbmParams, pool: ChainPool, n: int):
    """Advance every chain by n sweeps (persistently) and return the states."""
    if n < 1:
        raise ValueError("n must be >= 1")
    pool.advance(params, n)
    return pool.states()


def _tempered_batch(params, V, H, sched, rng, clamp=None):
    """Tempered transition on a batch of chains, accept/reject per chain.

    Up the ladder with forward sweeps, down with reversed sweeps; the
    Metropolis log-ratio accumulates the energy differences between
    neighbouring rungs, evaluated before each up-sweep and after each
    down-sweep.  Rejected chains are restored to their input state.
    """
    grid = sched.grid()
    steps = sched.steps
    V0, H0 = V.copy(), H.copy()
    logr = np.zeros(V.shape[0])
    w = params.weights

    def energy_from(vw):
        # reuses the V @ W product the h-update needs anyway
        return -(V @ params.visible_bias) - (H @ params.hidden_bias) \
            - np.einsum("ij,ij->i", vw, H)

    for t in range(1, steps + 1):
        vw = V @ w
        logr += (grid[t - 1] - grid[t]) * energy_from(vw)
        _update_h(params, V, H, rng, grid[t], clamp, act=vw)
        _update_v(params, V, H, rng, grid[t])
    for t in range(steps, 0, -1):
        _update_v(params, V, H, rng, grid[t])
        vw = V @ w
        _update_h(params, V, H, rng, grid[t], clamp, act=vw)
        logr += (grid[t] - grid[t - 1]) * energy_from(vw)
    accept = np.log(rng.random(V.shape[0])) < logr
    V[~accept] = V0[~accept]
    H[~accept] = H0[~accept]
    return accept


def tempered_transition(params: RbmParams, state: ChainState,
                        sched: TemperedSchedule, rng, clamp=None):
    """Neal-style tempered transition on one chain.

    Returns (new_state, accepted); on rejection the input state is returned.
    """
    V = np.atleast_2d(np.asarray(state.v, dtype=np.float64)).copy()
    H = np.atleast_2d(np.asarray(state.h, dtype=np.float64)).copy()
    accept = _tempered_batch(params, V, H, sched, rng, clamp)
    return ChainState(V[0], H[0]), bool(accept[0])


def ais_log_partition(params: RbmParams, cfg: AisConfig, rng=None):
    """Annealed importance sampling estimate of ln Z.

    Intermediate distributions are p_beta*(v, h) = exp(-beta E(v, h)) with
    the beta = 0 base uniform over all (v, h), so ln Z_0 = (M + N) ln 2.
    Returns (lnZ_estimate, delta-method standard deviation of lnZ).
    """
    if rng is None:
        rng = np.random.default_rng(cfg.rng_seed)
    m, n = params.n_visible, params.n_hidden
    s = cfg.num_samples
    V = (rng.random((s, m)) < 0.5).astype(np.float64)
    H = (rng.random((s, n)) < 0.5).astype(np.float64)
    betas = np.linspace(0.0, 1.0, cfg.num_intervals + 1)
    logw = np.zeros(s)
    w = params.weights
    db = betas[1] - betas[0]
    for t in range(1, cfg.num_intervals + 1):
        vw = V @ w
        logw += db * ((V @ params.visible_bias) + (H @ params.hidden_bias)
                      + np.einsum("ij,ij->i", vw, H))
        _update_h(params, V, H, rng, betas[t], None, act=vw)
        _update_v(params, V, H, rng, betas[t])
    ln_z0 = (m + n) * np.log(2.0)
    ln_mean_w = logsumexp(logw) - np.log(s)
    ln_z = ln_z0 + ln_mean_w
    # delta method: sd(ln Zhat) ~ sd(w) / (mean(w) sqrt(S)), in shifted space
    shift = logw.max()
    w = np.exp(logw - shift)
    if s > 1 and w.mean() > 0:
        std = float(w.std(ddof=1) / (w.mean() * np.sqrt(s)))
    else:
        std = 0.0
    return float(ln_z), std
