"""Shared oracles for the test suite.

The oracles here recompute model quantities from first principles (full
joint enumeration, finite differences) without going through the library
code paths they are used to check.
"""
import itertools

import numpy as np
import pytest

from rbmprune import RbmParams


def joint_table(params):
    """Exact p(v, h) by brute-force enumeration of every configuration.

    Returns (vs, hs, p) where p[i, j] is the probability of visible
    configuration vs[i] with hidden configuration hs[j].
    """
    m, n = params.n_visible, params.n_hidden
    vs = np.array(list(itertools.product([0.0, 1.0], repeat=m)))[:, ::-1].copy()
    hs = np.array(list(itertools.product([0.0, 1.0], repeat=n)))[:, ::-1].copy()
    if n == 0:
        hs = np.zeros((1, 0))
    e = np.empty((vs.shape[0], hs.shape[0]))
    for i, v in enumerate(vs):
        for j, h in enumerate(hs):
            e[i, j] = -(v @ params.visible_bias) - (h @ params.hidden_bias) \
                - v @ params.weights @ h
    w = np.exp(-(e - e.min()))
    return vs, hs, w / w.sum()


def brute_visible_marginal(params):
    """Exact p(v) over little-endian-indexed states, via the joint table."""
    vs, hs, p = joint_table(params)
    marg = p.sum(axis=1)
    # vs rows are already in little-endian index order by construction
    return vs, marg


def brute_kld(q_probs, params):
    """D(q || p) from the brute-force marginal."""
    _, p = brute_visible_marginal(params)
    nz = q_probs > 0
    return float(np.sum(q_probs[nz] * (np.log(q_probs[nz]) - np.log(p[nz]))))


def central_difference(f, params, step=1e-5):
    """Central finite differences of a scalar f(RbmParams) for every entry."""
    def perturbed(b, c, w):
        return RbmParams(b, c, w)

    b0, c0, w0 = params.visible_bias, params.hidden_bias, params.weights

    def fd(get, set_):
        base = get().copy()
        out = np.empty_like(base)
        flat = out.ravel()
        bflat = base.ravel()
        for i in range(bflat.size):
            orig = bflat[i]
            bflat[i] = orig + step
            hi = f(set_(base))
            bflat[i] = orig - step
            lo = f(set_(base))
            bflat[i] = orig
            flat[i] = (hi - lo) / (2 * step)
        return out

    db = fd(lambda: b0, lambda b: perturbed(b, c0, w0))
    dc = fd(lambda: c0, lambda c: perturbed(b0, c, w0))
    dw = fd(lambda: w0, lambda w: perturbed(b0, c0, w))
    return db, dc, dw


def random_distribution(m, rng):
    from rbmprune import DiscreteDistribution
    p = rng.random(2 ** m)
    return DiscreteDistribution(p / p.sum())


@pytest.fixture
def rng():
    return np.random.default_rng(20260826)


# acceptance criteria report: collected lines printed in the summary
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
