"""Gradient estimators: identities, audits, variance trackers."""

import itertools
import math

import numpy as np
import pytest

from bregopt.estimators import (
    SAGA,
    SARAH,
    FullGradient,
    MinibatchSGD,
    check_geometric_decay,
    estimate_sample_lipschitz,
    make_estimator,
)
from bregopt.kernels import FactorPair
from bregopt.numeric import make_rng
from bregopt.problems import GraphRegularizedNMF, build_problem

from .test_kernels import random_pair


@pytest.fixture
def gnmf_problem():
    rng = make_rng(100)
    m_data = rng.uniform(0.1, 1.0, (6, 20))
    return build_problem("gnmf", m_data, 3)


def random_walk(problem, rng, steps=10, scale=0.05):
    m, r, d = problem.shape
    x = random_pair(rng, m, r, d, 0.1, 1.0)
    points = [x]
    for _ in range(steps):
        x = FactorPair(
            np.abs(x.u + scale * rng.standard_normal(x.u.shape)),
            np.abs(x.v + scale * rng.standard_normal(x.v.shape)),
        )
        points.append(x)
    return points


# -- construction -----------------------------------------------------------


def test_make_estimator_names_and_defaults(gnmf_problem):
    est = make_estimator("full", gnmf_problem)
    assert isinstance(est, FullGradient) and est.batch_size == 20
    est = make_estimator("sgd", gnmf_problem, rng=make_rng(0))
    assert isinstance(est, MinibatchSGD) and est.batch_size == 1  # 5% of 20
    est = make_estimator("saga", gnmf_problem, batch_size=4, rng=make_rng(0))
    assert isinstance(est, SAGA)
    est = make_estimator("sarah", gnmf_problem, batch_size=4, rng=make_rng(0))
    assert isinstance(est, SARAH)
    assert est.restart_prob == pytest.approx(1.0 / 5.0)  # ceil(20/4) steps
    with pytest.raises(ValueError, match="rng"):
        make_estimator("sgd", gnmf_problem)
    with pytest.raises(ValueError, match="unknown"):
        make_estimator("svrg", gnmf_problem, rng=make_rng(0))


def test_batch_size_bounds(gnmf_problem):
    with pytest.raises(ValueError):
        MinibatchSGD(gnmf_problem, 21, make_rng(0))
    with pytest.raises(ValueError):
        SAGA(gnmf_problem, 0, make_rng(0))
    with pytest.raises(ValueError):
        SARAH(gnmf_problem, 2, 0.0, make_rng(0))


# -- exact identities -------------------------------------------------------


def test_saga_full_batch_is_bitwise_full_gradient(gnmf_problem):
    rng = make_rng(7)
    est = SAGA(gnmf_problem, gnmf_problem.n_samples, make_rng(1))
    points = random_walk(gnmf_problem, rng, steps=25)
    est.initialize(points[0])
    for x in points:
        g = est.estimate(x)
        full = gnmf_problem.full_gradient(x)
        assert np.array_equal(g.u, full.u)
        assert np.array_equal(g.v, full.v)


def test_sarah_always_restart_is_bitwise_full_gradient(gnmf_problem):
    rng = make_rng(8)
    est = SARAH(gnmf_problem, 3, 1.0, make_rng(1))
    for x in random_walk(gnmf_problem, rng, steps=25):
        g = est.estimate(x)
        full = gnmf_problem.full_gradient(x)
        assert np.array_equal(g.u, full.u)
        assert np.array_equal(g.v, full.v)


def test_identities_hold_with_graph_term():
    rng = make_rng(9)
    m_data = rng.uniform(0.1, 1.0, (5, 8))
    lap = np.diag([1.0, 2.0, 1.0, 2.0, 2.0]).copy()
    lap[0, 1] = lap[1, 0] = -1.0
    lap[1, 2] = lap[2, 1] = -1.0
    lap[3, 4] = lap[4, 3] = -2.0
    prob = GraphRegularizedNMF(m_data, 2, mu0=0.4, laplacian=lap)
    x = random_pair(rng, 5, 2, 8, 0.1, 1.0)
    full = prob.full_gradient(x)
    saga = SAGA(prob, 8, make_rng(2))
    saga.initialize(x)
    g = saga.estimate(x)
    assert np.array_equal(g.u, full.u) and np.array_equal(g.v, full.v)
    sarah = SARAH(prob, 2, 1.0, make_rng(2))
    g = sarah.estimate(x)
    assert np.array_equal(g.u, full.u) and np.array_equal(g.v, full.v)


def test_minibatch_exhaustive_mean_is_unbiased(gnmf_problem):
    # All size-2 batches of a 6-column restriction average to the full
    # data gradient.
    rng = make_rng(10)
    m_small = gnmf_problem.m_data[:, :6]
    prob = build_problem("gnmf", m_small, 3)
    x = random_pair(rng, 6, 3, 6, 0.1, 1.0)
    acc = FactorPair(np.zeros_like(x.u), np.zeros_like(x.v))
    combos = list(itertools.combinations(range(6), 2))
    for idx in combos:
        acc = acc + prob.minibatch_data_gradient(x, np.array(idx))
    acc = acc.scale(1.0 / len(combos))
    full = prob.data_gradient(x)
    assert np.allclose(acc.u, full.u, atol=1e-12)
    assert np.allclose(acc.v, full.v, atol=1e-12)


# -- audits -----------------------------------------------------------------


def test_full_gradient_audit_is_zero(gnmf_problem):
    est = FullGradient(gnmf_problem)
    x = random_pair(make_rng(11), 6, 3, 20, 0.1, 1.0)
    aud = est.audit(x, est.estimate(x))
    assert aud.gamma == 0.0 and aud.upsilon == 0.0
    assert aud.realized_sq_error == 0.0


def test_sgd_audit_reports_realized_error_only(gnmf_problem):
    est = MinibatchSGD(gnmf_problem, 2, make_rng(3))
    x = random_pair(make_rng(12), 6, 3, 20, 0.1, 1.0)
    g = est.estimate(x)
    aud = est.audit(x, g)
    assert aud.gamma is None and aud.upsilon is None
    assert aud.realized_sq_error > 0.0


def test_saga_audit_zero_when_table_fresh(gnmf_problem):
    est = SAGA(gnmf_problem, gnmf_problem.n_samples, make_rng(4))
    x = random_pair(make_rng(13), 6, 3, 20, 0.1, 1.0)
    est.initialize(x)
    g = est.estimate(x)
    aud = est.audit(x, g)
    assert aud.gamma == 0.0 and aud.upsilon == 0.0 and aud.realized_sq_error == 0.0


def test_saga_audit_positive_when_table_stale(gnmf_problem):
    est = SAGA(gnmf_problem, 2, make_rng(5))
    points = random_walk(gnmf_problem, make_rng(14), steps=5)
    est.initialize(points[0])
    for x in points[1:]:
        est.estimate(x)
    aud = est.audit(points[-1], None)
    assert aud.gamma > 0.0
    assert aud.upsilon > 0.0
    assert aud.realized_sq_error is None
    # Cauchy-Schwarz ties the two trackers: upsilon^2 <= n/b * gamma... the
    # cheap direction that must always hold is upsilon^2 <= n * gamma / 1.
    assert aud.upsilon**2 <= gnmf_problem.n_samples * aud.gamma + 1e-9


def test_saga_audit_requires_initialization(gnmf_problem):
    est = SAGA(gnmf_problem, 2, make_rng(6))
    with pytest.raises(RuntimeError):
        est.audit(random_pair(make_rng(15), 6, 3, 20))


def test_saga_running_average_stays_synced(gnmf_problem):
    est = SAGA(gnmf_problem, 3, make_rng(16), resync_every=10**9)
    points = random_walk(gnmf_problem, make_rng(17), steps=40)
    est.initialize(points[0])
    for x in points[1:]:
        est.estimate(x)
    assert est.average_drift() < 1e-8


def test_saga_matches_dense_reference_implementation(gnmf_problem):
    # Replay the same batch draws against a dense per-sample table.
    n = gnmf_problem.n_samples
    b = 4
    est = SAGA(gnmf_problem, b, make_rng(18))
    points = random_walk(gnmf_problem, make_rng(19), steps=12)
    est.initialize(points[0])

    ref_rng = make_rng(18)
    table = [gnmf_problem.minibatch_data_gradient(points[0], [i]) for i in range(n)]
    for x in points[1:]:
        got = est.estimate(x)
        idx = np.sort(ref_rng.choice(n, size=b, replace=False, shuffle=False))
        avg = FactorPair(
            np.mean([t.u for t in table], axis=0),
            np.mean([t.v for t in table], axis=0),
        )
        fresh = {i: gnmf_problem.minibatch_data_gradient(x, [i]) for i in idx}
        corr = FactorPair(np.zeros_like(x.u), np.zeros_like(x.v))
        for i in idx:
            corr = corr + (fresh[i] - table[i])
        want = corr.scale(1.0 / b) + avg
        assert np.allclose(got.u, want.u, rtol=1e-10, atol=1e-12)
        assert np.allclose(got.v, want.v, rtol=1e-10, atol=1e-12)
        for i in idx:
            table[i] = fresh[i]


def test_sarah_recursion_matches_dense_reference(gnmf_problem):
    n = gnmf_problem.n_samples
    b = 5
    est = SARAH(gnmf_problem, b, 0.5, make_rng(20))
    points = random_walk(gnmf_problem, make_rng(21), steps=15)

    ref_rng = make_rng(20)
    prev_est = None
    prev_x = None
    for x in points:
        got = est.estimate(x)
        coin = ref_rng.random()
        if prev_est is None or coin < 0.5:
            want = gnmf_problem.data_gradient(x)
        else:
            idx = np.sort(ref_rng.choice(n, size=b, replace=False, shuffle=False))
            # (1/b) sum_{i in B} (grad f_i(x) - grad f_i(x_prev)) is exactly
            # the difference of the two n/b-scaled minibatch gradients.
            diff = gnmf_problem.minibatch_data_gradient(
                x, idx
            ) - gnmf_problem.minibatch_data_gradient(prev_x, idx)
            want = prev_est + diff
        assert np.allclose(got.u, want.u, rtol=1e-10, atol=1e-12)
        assert np.allclose(got.v, want.v, rtol=1e-10, atol=1e-12)
        prev_est, prev_x = want, x


def test_sarah_audit_zero_after_restart(gnmf_problem):
    est = SARAH(gnmf_problem, 2, 1.0, make_rng(22))
    x = random_pair(make_rng(23), 6, 3, 20, 0.1, 1.0)
    est.estimate(x)
    aud = est.audit(x, None)
    assert aud.gamma == 0.0
    # Query at a different point: the stored estimate no longer matches.
    y = random_pair(make_rng(24), 6, 3, 20, 0.1, 1.0)
    assert est.audit(y, None).gamma > 0.0


# -- decay check ------------------------------------------------------------


def synthetic_records(n_seeds, length, tau, v, rng, noise=0.0):
    """Records that satisfy the decay recursion with equality in the mean."""
    records = []
    for _ in range(n_seeds):
        step_sq = rng.uniform(0.5, 1.0, size=length)
        gamma = np.empty(length)
        gamma[0] = 10.0
        for j in range(1, length):
            clean = (1.0 - tau) * gamma[j - 1] + v * (
                step_sq[j - 1] + (step_sq[j - 2] if j >= 2 else 0.0)
            )
            gamma[j] = clean * (1.0 + noise * rng.uniform(-1.0, 1.0))
        records.append((gamma, step_sq))
    return records


def test_decay_check_passes_on_conforming_records():
    rng = make_rng(30)
    records = synthetic_records(8, 40, tau=0.2, v=1.0, rng=rng, noise=0.02)
    rep = check_geometric_decay(records, tau=0.2, v_gamma=1.0)
    assert rep.passed
    assert rep.checked == 38


def test_decay_check_fails_on_slower_decay():
    # Records built for tau = 0.05 but tested against tau = 0.9: the claimed
    # contraction is far too strong and the mean violates it everywhere.
    rng = make_rng(31)
    records = synthetic_records(8, 40, tau=0.05, v=1.0, rng=rng, noise=0.02)
    rep = check_geometric_decay(records, tau=0.9, v_gamma=1.0)
    assert not rep.passed
    assert rep.violation_fraction > 0.5


def test_decay_check_validation():
    rng = make_rng(32)
    records = synthetic_records(2, 10, 0.2, 1.0, rng)
    with pytest.raises(ValueError):
        check_geometric_decay(records, tau=0.0, v_gamma=1.0)
    with pytest.raises(ValueError):
        check_geometric_decay(records, tau=0.5, v_gamma=-1.0)
    with pytest.raises(ValueError):
        check_geometric_decay([], tau=0.5, v_gamma=1.0)
    short = [(np.ones(2), np.ones(2))]
    with pytest.raises(ValueError):
        check_geometric_decay(short, tau=0.5, v_gamma=1.0)


# -- empirical lipschitz ----------------------------------------------------


def test_estimate_sample_lipschitz_bounds_observed_ratios(gnmf_problem):
    points = random_walk(gnmf_problem, make_rng(33), steps=8)
    m1 = estimate_sample_lipschitz(gnmf_problem, points)
    assert m1 > 0.0
    # The estimate must dominate every consecutive per-sample ratio it saw.
    for x, y in zip(points, points[1:]):
        dist = (y - x).norm()
        for i in range(gnmf_problem.n_samples):
            gx = gnmf_problem.minibatch_data_gradient(x, [i])
            gy = gnmf_problem.minibatch_data_gradient(y, [i])
            assert (gy - gx).norm() <= m1 * dist + 1e-8


def test_estimate_sample_lipschitz_needs_two_points(gnmf_problem):
    with pytest.raises(ValueError):
        estimate_sample_lipschitz(
            gnmf_problem, [random_pair(make_rng(34), 6, 3, 20)]
        )
