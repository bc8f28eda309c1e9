"""Problem kinds: objectives, gradients, kernels, and the closed-form prox."""

import math

import numpy as np
import pytest

from bregopt.kernels import FactorPair, KernelSpec
from bregopt.numeric import hard_threshold, make_rng
from bregopt.problems import (
    GraphRegularizedNMF,
    SparseNMF,
    WeaklyConvexMF,
    build_knn_laplacian,
    build_problem,
    factored_sq_diffs,
    hard_threshold_axis,
    validate_indices,
)

from .test_kernels import fd_gradient, random_pair


def make_laplacian_path_graph():
    # Path graph 0 - 1 - 2 with unit weights.
    return np.array(
        [[1.0, -1.0, 0.0], [-1.0, 2.0, -1.0], [0.0, -1.0, 1.0]]
    )


# -- helpers ----------------------------------------------------------------


def test_validate_indices():
    out = validate_indices([3, 1, 2], 5)
    assert np.array_equal(out, [1, 2, 3])
    with pytest.raises(ValueError):
        validate_indices([], 5)
    with pytest.raises(ValueError):
        validate_indices([0, 0], 5)
    with pytest.raises(ValueError):
        validate_indices([5], 5)
    with pytest.raises(ValueError):
        validate_indices([-1], 5)


def test_hard_threshold_axis_matches_1d_rule():
    rng = make_rng(2)
    a = rng.standard_normal((5, 4))
    for s in (1, 2, 5):
        got = hard_threshold_axis(a, s, axis=0)
        for j in range(a.shape[1]):
            assert np.array_equal(got[:, j], hard_threshold(a[:, j], s))
    got = hard_threshold_axis(a, 2, axis=1)
    for i in range(a.shape[0]):
        assert np.array_equal(got[i], hard_threshold(a[i], 2))


def test_hard_threshold_axis_tie_rule():
    a = np.array([[1.0, 1.0, 1.0]])
    assert np.array_equal(hard_threshold_axis(a, 2, axis=1), [[1.0, 1.0, 0.0]])


def test_factored_sq_diffs_against_dense():
    rng = make_rng(6)
    m_data = rng.uniform(0.1, 1.0, (4, 5))
    prob = build_problem("gnmf", m_data, 2)
    x = random_pair(rng, 4, 2, 5, 0.0, 1.0)
    y = random_pair(rng, 4, 2, 5, 0.0, 1.0)
    tx, ty = prob.gradient_table(x), prob.gradient_table(y)
    sq = factored_sq_diffs(tx, ty)
    n = prob.n_samples
    for i in range(n):
        gx = prob.minibatch_data_gradient(x, [i])
        gy = prob.minibatch_data_gradient(y, [i])
        dense = (gx - gy).norm_sq()
        assert sq[i] == pytest.approx(dense, rel=1e-10, abs=1e-10)


# -- construction and validation --------------------------------------------


def test_build_problem_dispatch_and_unknown_kind():
    m_data = np.ones((3, 3))
    assert isinstance(build_problem("gnmf", m_data, 1), GraphRegularizedNMF)
    assert isinstance(
        build_problem("wcmf", m_data, 1, lambda1=0.1, lambda2=0.0), WeaklyConvexMF
    )
    assert isinstance(build_problem("ssnmf", m_data, 1, s1=1, s2=1), SparseNMF)
    with pytest.raises(ValueError, match="unknown problem kind"):
        build_problem("nmf", m_data, 1)


def test_problem_rejects_bad_rank_and_zero_data():
    with pytest.raises(ValueError):
        build_problem("gnmf", np.ones((3, 3)), 4)
    with pytest.raises(ValueError):
        build_problem("gnmf", np.ones((3, 3)), 0)
    with pytest.raises(ValueError):
        build_problem("gnmf", np.zeros((3, 3)), 1)


def test_gnmf_requires_laplacian_when_weighted():
    m_data = np.ones((3, 4))
    with pytest.raises(ValueError, match="laplacian"):
        GraphRegularizedNMF(m_data, 2, mu0=0.5)
    bad = np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]])
    with pytest.raises(ValueError, match="sum to zero"):
        GraphRegularizedNMF(m_data, 2, mu0=0.5, laplacian=bad)
    asym = make_laplacian_path_graph()
    asym[0, 1] = -2.0
    with pytest.raises(ValueError, match="symmetric"):
        GraphRegularizedNMF(m_data, 2, mu0=0.5, laplacian=asym)


def test_wcmf_requires_dominant_l1():
    m_data = np.ones((2, 2))
    with pytest.raises(ValueError, match="lambda1 > lambda2"):
        WeaklyConvexMF(m_data, 1, lambda1=0.1, lambda2=0.2)
    WeaklyConvexMF(m_data, 1, lambda1=0.1, lambda2=0.0)  # plain l1 is fine


def test_ssnmf_budget_validation():
    m_data = np.ones((3, 4))
    with pytest.raises(ValueError):
        SparseNMF(m_data, 2, s1=0, s2=1)
    with pytest.raises(ValueError):
        SparseNMF(m_data, 2, s1=1, s2=5)


# -- objective values -------------------------------------------------------


def test_gnmf_objective_hand_value():
    prob = build_problem("gnmf", [[2.0]], 1)
    x = FactorPair([[1.0]], [[1.0]])
    assert prob.smooth_value(x) == pytest.approx(0.5)  # (2 - 1)^2 / 2
    assert prob.objective(x) == pytest.approx(0.5)
    assert prob.objective(FactorPair([[-1.0]], [[1.0]])) == math.inf


def test_gnmf_graph_term_hand_value():
    lap = make_laplacian_path_graph()
    m_data = np.ones((3, 2))
    prob = GraphRegularizedNMF(m_data, 1, mu0=2.0, laplacian=lap)
    u = np.array([[1.0], [0.0], [0.0]])
    x = FactorPair(u, np.ones((1, 2)))
    # tr(u^T L u) = 1 for this u; graph value = mu0/2 * 1.
    data = 0.5 * np.sum((u @ np.ones((1, 2)) - m_data) ** 2)
    assert prob.smooth_value(x) == pytest.approx(data + 1.0)


def test_wcmf_objective_hand_value():
    prob = build_problem("wcmf", [[1.0]], 1, lambda1=0.5, lambda2=0.25)
    x = FactorPair([[-2.0]], [[1.0]])
    # data (1 - (-2))^2/2 = 4.5, h = 0.5*2 - 0.125*4 = 0.5
    assert prob.objective(x) == pytest.approx(5.0)
    assert prob.weak_convexity == 0.25


def test_ssnmf_objective_infinite_off_budget():
    prob = build_problem("ssnmf", np.ones((3, 3)), 2, s1=1, s2=3)
    u = np.zeros((3, 2))
    u[0, 0] = u[1, 0] = 1.0  # two nonzeros in column 0 > s1
    x = FactorPair(u, np.zeros((2, 3)))
    assert not prob.is_feasible(x)
    assert prob.objective(x) == math.inf
    u2 = np.zeros((3, 2))
    u2[0, 0] = 1.0
    assert prob.is_feasible(FactorPair(u2, np.zeros((2, 3))))


# -- gradients --------------------------------------------------------------


@pytest.mark.parametrize(
    "kind,params",
    [
        ("gnmf", {}),
        ("wcmf", {"lambda1": 0.3, "lambda2": 0.1}),
        ("ssnmf", {"s1": 2, "s2": 3}),
    ],
)
def test_full_gradient_matches_finite_differences(kind, params):
    rng = make_rng(17)
    m_data = rng.uniform(0.1, 1.0, (4, 5))
    prob = build_problem(kind, m_data, 2, **params)
    for _ in range(5):
        x = random_pair(rng, 4, 2, 5, 0.1, 1.0)
        got = prob.full_gradient(x)
        want = fd_gradient(prob.smooth_value, x)
        assert np.allclose(got.u, want.u, rtol=1e-5, atol=1e-6)
        assert np.allclose(got.v, want.v, rtol=1e-5, atol=1e-6)


def test_graph_gradient_matches_finite_differences():
    rng = make_rng(18)
    m_data = rng.uniform(0.1, 1.0, (3, 4))
    lap = make_laplacian_path_graph()
    prob = GraphRegularizedNMF(m_data, 2, mu0=0.7, laplacian=lap)
    x = random_pair(rng, 3, 2, 4, 0.1, 1.0)
    got = prob.full_gradient(x)
    want = fd_gradient(prob.smooth_value, x)
    assert np.allclose(got.u, want.u, rtol=1e-5, atol=1e-6)
    assert np.allclose(got.v, want.v, rtol=1e-5, atol=1e-6)


def test_minibatch_gradient_full_batch_equals_data_gradient():
    rng = make_rng(19)
    m_data = rng.uniform(0.1, 1.0, (4, 6))
    prob = build_problem("gnmf", m_data, 2)
    x = random_pair(rng, 4, 2, 6, 0.0, 1.0)
    full = prob.data_gradient(x)
    batch = prob.minibatch_data_gradient(x, np.arange(6))
    assert np.allclose(batch.u, full.u, rtol=1e-12, atol=1e-12)
    assert np.allclose(batch.v, full.v, rtol=1e-12, atol=1e-12)


def test_gradient_tables_match_minibatch_gradients():
    rng = make_rng(20)
    m_data = rng.uniform(0.1, 1.0, (4, 6))
    prob = build_problem("gnmf", m_data, 2)
    x = random_pair(rng, 4, 2, 6, 0.0, 1.0)
    a, v, w = prob.gradient_table(x)
    for i in range(6):
        g = prob.minibatch_data_gradient(x, [i])
        assert np.allclose(np.outer(a[:, i], v[:, i]), g.u, atol=1e-12)
        assert np.allclose(w[:, i], g.v[:, i], atol=1e-12)
    idx = np.array([1, 4])
    ab, vb, wb = prob.batch_table(x, idx)
    assert np.array_equal(ab, a[:, idx])
    assert np.array_equal(wb, w[:, idx])


# -- kernels per kind -------------------------------------------------------


def test_prescribed_kernels():
    rng = make_rng(23)
    m_data = rng.uniform(0.1, 1.0, (4, 5))
    norm_m = np.linalg.norm(m_data)

    k = build_problem("gnmf", m_data, 2).kernel()
    assert (k.quartic, k.u_quadratic) == (3.0, 0.0)
    assert k.quadratic == pytest.approx(norm_m)

    lap = np.array([[1.0, -1.0], [-1.0, 1.0]])
    prob = GraphRegularizedNMF(m_data[:2], 1, mu0=0.5, laplacian=lap)
    assert prob.kernel().quadratic == pytest.approx(
        np.linalg.norm(m_data[:2]) + 0.5 * np.linalg.norm(lap)
    )

    k = build_problem("wcmf", m_data, 2, lambda1=0.4, lambda2=0.2).kernel(0.3)
    assert k.u_quadratic == pytest.approx(0.3 * 0.2)

    k = build_problem("ssnmf", m_data, 2, s1=1, s2=1).kernel(0.7)
    assert k.u_quadratic == 0.0


def test_local_lipschitz_matches_direct_norms():
    rng = make_rng(24)
    m_data = rng.uniform(0.1, 1.0, (4, 5))
    prob = build_problem("gnmf", m_data, 2)
    x = random_pair(rng, 4, 2, 5, 0.0, 1.0)
    want = max(
        np.linalg.norm(x.v @ x.v.T, 2), np.linalg.norm(x.u.T @ x.u, 2)
    )
    assert prob.local_lipschitz(x, rng=make_rng(0)) == pytest.approx(want, rel=1e-6)


# -- proximal step ----------------------------------------------------------
#
# The frozen expectations below were produced by an out-of-band oracle:
# bisection (bracket width 1e-15) for the cubic radius and a dense grid /
# support search over the subproblem objective confirming the minimizer.


def test_prox_gnmf_frozen_instance():
    prob = build_problem("gnmf", [[1.0]], 1)
    kern = prob.kernel(1.0)
    assert kern == KernelSpec(3.0, 1.0, 0.0)
    x_bar = FactorPair([[1.0]], [[1.0]])
    g = FactorPair([[6.0]], [[6.0]])
    out = prob.prox_step(kern, g, x_bar, 1.0)
    t = 0.4506988250302091  # root of 6 t^3 + t = 1
    assert out.u[0, 0] == pytest.approx(t, abs=1e-12)
    assert out.v[0, 0] == pytest.approx(t, abs=1e-12)


def test_prox_wcmf_frozen_instance():
    prob = build_problem("wcmf", [[1.0]], 1, lambda1=0.5, lambda2=0.25)
    kern = prob.kernel(1.0)
    assert kern.u_quadratic == pytest.approx(0.25)
    x_bar = FactorPair([[1.0]], [[1.0]])
    g = FactorPair([[6.85]], [[6.0]])
    out = prob.prox_step(kern, g, x_bar, 1.0)
    # U lands inside the soft-threshold dead zone; V solves 3 t^3 + t = 1.
    assert out.u[0, 0] == 0.0
    assert out.v[0, 0] == pytest.approx(0.5365651646722234, abs=1e-12)


def test_prox_ssnmf_frozen_instance():
    prob = build_problem("ssnmf", [[1.0, 0.0], [0.0, 0.0]], 1, s1=1, s2=1)
    x_bar = FactorPair([[1.0], [1.0]], [[1.0, 1.0]])
    g = FactorPair([[12.2], [12.5]], [[12.4, 12.1]])
    out = prob.prox_step(prob.kernel(1.0), g, x_bar, 1.0)
    # Shapes (0.8, 0) and (0, 0.9) scaled by the root of 4.35 t^3 + t = 1.
    assert out.u[0, 0] == pytest.approx(0.3916565793194554, abs=1e-12)
    assert out.u[1, 0] == 0.0
    assert out.v[0, 0] == 0.0
    assert out.v[0, 1] == pytest.approx(0.4406136517343873, abs=1e-12)


def batched_model_values(prob, kern, g, x_bar, eta, cands):
    return np.array(
        [prob.prox_model_value(kern, g, x_bar, eta, c) for c in cands]
    )


@pytest.mark.parametrize(
    "kind,params",
    [
        ("gnmf", {}),
        ("wcmf", {"lambda1": 0.2, "lambda2": 0.05}),
        ("ssnmf", {"s1": 2, "s2": 3}),
    ],
)
def test_prox_beats_random_candidates(kind, params):
    rng = make_rng(29)
    m_data = rng.uniform(0.1, 1.0, (3, 4))
    prob = build_problem(kind, m_data, 2, **params)
    for trial in range(3):
        x_bar = random_pair(rng, 3, 2, 4, 0.05, 1.0)
        eta = float(rng.uniform(0.1, 1.0))
        kern = prob.kernel(eta)
        g = prob.full_gradient(x_bar)
        out = prob.prox_step(kern, g, x_bar, eta)
        assert prob.is_feasible(out)
        val = prob.prox_model_value(kern, g, x_bar, eta, out)
        cands = [
            FactorPair(
                np.abs(out.u + 0.1 * rng.standard_normal(out.u.shape)),
                np.abs(out.v + 0.1 * rng.standard_normal(out.v.shape)),
            )
            for _ in range(200)
        ]
        cands += [x_bar, out.scale(0.9), out.scale(1.1)]
        vals = batched_model_values(prob, kern, g, x_bar, eta, cands)
        assert val <= vals.min() + 1e-8


def test_prox_ssnmf_output_meets_budgets_exactly():
    rng = make_rng(33)
    m_data = rng.uniform(0.1, 1.0, (5, 6))
    prob = build_problem("ssnmf", m_data, 3, s1=2, s2=3)
    for _ in range(10):
        x_bar = random_pair(rng, 5, 3, 6, 0.0, 1.0)
        g = prob.full_gradient(x_bar)
        out = prob.prox_step(prob.kernel(0.5), g, x_bar, 0.5)
        assert out.u.min() >= 0.0 and out.v.min() >= 0.0
        assert (out.u != 0).sum(axis=0).max() <= 2
        assert (out.v != 0).sum(axis=1).max() <= 3


def test_prox_rejects_wrong_kernel_and_eta():
    prob = build_problem("wcmf", [[1.0]], 1, lambda1=0.5, lambda2=0.25)
    x = FactorPair([[1.0]], [[1.0]])
    with pytest.raises(ValueError, match="eta"):
        prob.prox_step(prob.kernel(1.0), x, x, 0.0)
    with pytest.raises(ValueError, match="U-quadratic"):
        # Kernel built for a different step size than the one applied.
        prob.prox_step(prob.kernel(1.0), x, x, 0.5)
    gprob = build_problem("gnmf", [[1.0]], 1)
    with pytest.raises(ValueError, match="without"):
        gprob.prox_step(KernelSpec(3.0, 1.0, 0.5), x, x, 1.0)


# -- knn laplacian ----------------------------------------------------------


def test_knn_laplacian_hand_case():
    # Three collinear points; each connects to its single nearest neighbor,
    # symmetrized: edges {0,1} and {1,2}.
    pts = np.array([[0.0], [1.0], [3.0]])
    lap = build_knn_laplacian(pts, p_neighbors=1)
    assert np.array_equal(lap, make_laplacian_path_graph())


def test_knn_laplacian_is_a_valid_laplacian():
    rng = make_rng(41)
    pts = rng.standard_normal((10, 3))
    for weighting in ("binary", "heat"):
        lap = build_knn_laplacian(pts, p_neighbors=3, weighting=weighting)
        assert np.allclose(lap, lap.T)
        assert np.allclose(lap.sum(axis=1), 0.0, atol=1e-12)
        off = lap - np.diag(np.diag(lap))
        assert off.max() <= 0.0
        # Positive semidefinite up to roundoff.
        assert np.linalg.eigvalsh(lap).min() >= -1e-10


def test_knn_laplacian_heat_weights():
    pts = np.array([[0.0], [1.0], [3.0]])
    lap = build_knn_laplacian(pts, p_neighbors=1, weighting="heat", sigma=2.0)
    w01 = np.exp(-1.0 / 2.0)  # squared distance 1
    w12 = np.exp(-4.0 / 2.0)  # squared distance 4
    assert -lap[0, 1] == pytest.approx(w01)
    assert -lap[1, 2] == pytest.approx(w12)
    assert lap[1, 1] == pytest.approx(w01 + w12)


def test_knn_laplacian_validation():
    pts = np.ones((3, 2))
    with pytest.raises(ValueError):
        build_knn_laplacian(pts, p_neighbors=3)
    with pytest.raises(ValueError):
        build_knn_laplacian(pts, p_neighbors=1, weighting="gauss")
    with pytest.raises(ValueError):
        build_knn_laplacian(pts, p_neighbors=1, weighting="heat", sigma=-1.0)


def test_gnmf_accepts_its_own_knn_laplacian():
    rng = make_rng(43)
    m_data = rng.uniform(0.0, 1.0, (8, 6))
    lap = build_knn_laplacian(m_data, p_neighbors=2)
    prob = GraphRegularizedNMF(m_data, 2, mu0=0.3, laplacian=lap)
    assert prob.kernel().quadratic > np.linalg.norm(m_data)
