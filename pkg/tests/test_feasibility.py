import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as hst
from scipy.linalg import solve_triangular
from scipy.optimize import nnls

from onebit import feasibility as fz


def _consistent(M=100, d=10, seed=0, margin=0.1):
    rng = np.random.default_rng(seed)
    C = rng.standard_normal((M, d))
    x = rng.standard_normal(d)
    b = C @ x - margin * rng.random(M)
    return C, b, x


def test_rka_step_equality_1d():
    prov = fz.DenseRows(np.array([[1.0]]), np.array([2.0]), equality=True)
    np.testing.assert_allclose(fz.rka_step(np.zeros(1), 0, prov), [2.0])


def test_rka_step_satisfied_row_unchanged():
    prov = fz.DenseRows(np.array([[1.0, 0.0]]), np.array([1.0]))
    x = np.array([3.0, -1.0])
    np.testing.assert_array_equal(fz.rka_step(x, 0, prov), x)


def test_rka_step_halfspace_projection():
    prov = fz.DenseRows(np.array([[3.0, 4.0]]), np.array([10.0]))
    x = fz.rka_step(np.zeros(2), 0, prov)
    np.testing.assert_allclose(x, [1.2, 1.6])
    assert abs(prov.residual(x)[0]) < 1e-12


def test_rka_zero_row_skipped():
    prov = fz.DenseRows(np.array([[0.0, 0.0], [1.0, 0.0]]), np.array([1.0, 1.0]))
    np.testing.assert_array_equal(fz.rka_step(np.zeros(2), 0, prov), np.zeros(2))


def test_rka_identity_equalities():
    d = 6
    b = np.arange(1.0, d + 1)
    prov = fz.DenseRows(np.eye(d), b, equality=True)
    x, trace = fz.rka_solve(prov, fz.SolverConfig(max_iters=400, seed=1, tol=1e-12, check_every=1))
    # converged once all d rows were visited
    assert len(set(trace.indices.tolist())) == d
    np.testing.assert_allclose(x, b)


def test_rka_consistent_system_feasible():
    C, b, _ = _consistent(seed=1)
    prov = fz.DenseRows(C, b)
    x, trace = fz.rka_solve(prov, fz.SolverConfig(max_iters=50_000, seed=2, tol=1e-8))
    assert trace.converged
    assert np.max(b - C @ x) <= 1e-8


def test_rka_selection_probabilities():
    C = np.array([[1.0, 0.0], [0.0, 3.0]])
    prov = fz.DenseRows(C, np.array([5.0, 5.0]))
    cfg = fz.SolverConfig(max_iters=20_000, seed=3, tol=-1.0, record_every=None)
    _, trace = fz.rka_solve(prov, cfg)
    frac = np.mean(trace.indices == 1)
    assert abs(frac - 0.9) < 0.01


def test_skm_full_sample_is_greedy():
    C, b, _ = _consistent(M=60, d=5, seed=4)
    prov = fz.DenseRows(C, b)
    cfg = fz.SolverConfig(max_iters=1, sample_size=60, seed=0, tol=-1.0)
    x0 = np.zeros(5)
    x, trace = fz.skm_solve(prov, cfg, x0=x0)
    res = b - C @ x0
    assert trace.indices[0] == int(np.argmax(res))


def test_skm_consistent_system_feasible():
    C, b, _ = _consistent(seed=5)
    x, trace = fz.skm_solve(fz.DenseRows(C, b), fz.SolverConfig(max_iters=20_000, seed=5))
    assert trace.converged and np.max(b - C @ x) <= 1e-8


def test_qr_precondition_orthonormal_input():
    Q0, _ = np.linalg.qr(np.random.default_rng(6).standard_normal((30, 4)))
    Q, R = fz.qr_precondition(Q0)
    np.testing.assert_allclose(np.abs(R), np.eye(4), atol=1e-12)
    np.testing.assert_allclose(Q.T @ Q, np.eye(4), atol=1e-12)


def test_qr_precondition_rank_deficient():
    C = np.ones((10, 3))
    with pytest.raises(np.linalg.LinAlgError):
        fz.qr_precondition(C)


def test_sketch_identity_test_matrix():
    Q0, _ = np.linalg.qr(np.random.default_rng(7).standard_normal((20, 3)))
    R = fz.sketch_precondition(Q0, test_matrix=np.eye(20))
    np.testing.assert_allclose(R, np.eye(3), atol=1e-12)


def test_prskm_orthonormal_matches_skm():
    rng = np.random.default_rng(8)
    Q0, _ = np.linalg.qr(rng.standard_normal((80, 6)))
    b = Q0 @ rng.standard_normal(6) - 0.05 * rng.random(80)
    prov = fz.DenseRows(Q0, b)
    # short run: near convergence round-off decides residual ties
    cfg = fz.SolverConfig(max_iters=12, seed=9, tol=-1.0)
    x1, t1 = fz.skm_solve(prov, cfg)
    x2, t2 = fz.prskm_solve(prov, cfg, selection="residual")
    np.testing.assert_array_equal(t1.indices, t2.indices)
    np.testing.assert_allclose(x1, x2, atol=1e-10)


def test_prskm_feasible_output():
    C, b, _ = _consistent(seed=10)
    C = C * np.linspace(0.1, 10, 10)
    prov = fz.DenseRows(C, b)
    x, trace = fz.prskm_solve(prov, fz.SolverConfig(max_iters=20_000, seed=10, tol=1e-8))
    assert np.all(C @ x >= b - 1e-7)


def test_block_skm_kprime_one_is_motzkin_step():
    C, b, _ = _consistent(M=40, d=5, seed=11)
    prov = fz.DenseRows(C, b, block_size=40)
    cfg = fz.SolverConfig(max_iters=1, block_rows=1, seed=0, tol=-1.0)
    x, _ = fz.block_skm_solve(prov, cfg)
    res = b
    j = int(np.argmax(res))
    expect = res[j] / (C[j] @ C[j]) * C[j]
    np.testing.assert_allclose(x, expect)


def test_block_skm_satisfied_unchanged():
    C, b, _ = _consistent(M=40, d=5, seed=12)
    prov = fz.DenseRows(C, b - 100.0, block_size=20)
    x, trace = fz.block_skm_solve(prov, fz.SolverConfig(max_iters=5, block_rows=3, seed=0, tol=-1.0))
    np.testing.assert_array_equal(x, np.zeros(5))


def test_block_projection_satisfies_selected_rows():
    rng = np.random.default_rng(13)
    Bs = rng.standard_normal((4, 8))
    v = np.abs(rng.standard_normal(4))
    w = fz._halfspace_weights(Bs, v)
    assert np.all(w >= 0)
    assert np.all(Bs @ (Bs.T @ w) >= v - 1e-10)
    # the pseudoinverse step forces equality on every selected row
    wp = fz._pinv_weights(Bs, v)
    np.testing.assert_allclose(Bs @ (Bs.T @ wp), v)


@settings(max_examples=60, deadline=None)
@given(seed=hst.integers(0, 2**31 - 1), k=hst.integers(2, 30), corr=hst.floats(0.0, 0.95))
def test_gram_nnls_matches_scipy(seed, k, corr):
    rng = np.random.default_rng(seed)
    # correlated rows make many dual constraints active
    base = rng.standard_normal(40)
    Bs = corr * base + (1 - corr) * rng.standard_normal((k, 40))
    v = rng.standard_normal(k)
    G = Bs @ Bs.T
    mu = fz._nnls_gram(G, v)
    assert mu is not None
    L = np.linalg.cholesky(G)
    ref, _ = nnls(L.T, solve_triangular(L, v, lower=True))
    obj = lambda m: 0.5 * m @ G @ m - m @ v
    assert np.all(mu >= 0)
    assert obj(mu) <= obj(ref) + 1e-9 * max(1.0, abs(obj(ref)))


def test_block_skm_consistent_feasible():
    C, b, _ = _consistent(M=200, d=10, seed=14)
    prov = fz.DenseRows(C, b, block_size=50)
    x, trace = fz.block_skm_solve(prov, fz.SolverConfig(max_iters=5000, seed=14))
    assert trace.converged and np.max(b - C @ x) <= 1e-8


def test_block_skm_rank_deficient_shrinks():
    row = np.array([[1.0, 2.0, 0.0]])
    C = np.vstack([row, row, row, [[0.0, 0.0, 1.0]]])
    b = np.array([1.0, 1.0, 1.0, 1.0])
    prov = fz.DenseRows(C, b, block_size=4)
    x, trace = fz.block_skm_solve(prov, fz.SolverConfig(max_iters=3, block_rows=2, seed=0, tol=-1.0))
    assert any("rank-deficient" in msg for _, msg in trace.flags)
    assert np.all(np.isfinite(x))


def test_nearest_rank_quantile():
    assert fz.nearest_rank_quantile([4, 1, 3, 2], 0.5) == 2
    assert fz.nearest_rank_quantile([4, 1, 3, 2], 1e-9) == 1


def test_quantile_small_q_matches_rka():
    C, b, _ = _consistent(M=50, d=4, seed=15)
    prov = fz.DenseRows(C, b)
    cfg = fz.SolverConfig(max_iters=200, seed=16, quantile=1e-9, tol=-1.0)
    x1, _ = fz.quantile_rka_solve(prov, cfg)
    x2, _ = fz.rka_solve(prov, cfg)
    np.testing.assert_allclose(x1, x2)


def test_noisy_bound():
    assert fz.noisy_rka_error_bound(2.0, 1.0, 10, 0.0) == pytest.approx(0.75**5)
    assert fz.noisy_rka_error_bound(2.0, 1.0, 10**6, 0.3) == pytest.approx(0.6)
    with pytest.raises(ValueError):
        fz.noisy_rka_error_bound(0.5, 1.0, 1, 0.0)


def test_config_validation():
    with pytest.raises(ValueError):
        fz.SolverConfig(relaxation=2.0)
    with pytest.raises(ValueError):
        fz.SolverConfig(block_update="lsq")
    with pytest.raises(ValueError):
        fz.DenseRows(np.ones((3, 2)), np.ones(4))


def test_trace_csv(tmp_path):
    C, b, x_true = _consistent(M=30, d=3, seed=17)
    _, trace = fz.rka_solve(fz.DenseRows(C, b), fz.SolverConfig(max_iters=50, seed=1, tol=-1.0), x_ref=x_true)
    path = tmp_path / "trace.csv"
    trace.to_csv(path)
    lines = path.read_text().splitlines()
    assert lines[0] == "iteration,dist_sq,max_residual"
    assert len(lines) == len(trace.iterations) + 1
    assert all(v >= 0 for v in trace.dist_sq)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_non_finite_iterate_raises():
    prov = fz.DenseRows(np.array([[1e-160, 0.0]]), np.array([1e300]))
    with pytest.raises(fz.NonFiniteIterateError):
        fz.rka_solve(prov, fz.SolverConfig(max_iters=5, seed=0, check_every=1))


def test_median_residual_non_increasing():
    curves = []
    for s in range(15):
        C, b, _ = _consistent(M=80, d=6, seed=100 + s)
        _, tr = fz.rka_solve(fz.DenseRows(C, b), fz.SolverConfig(max_iters=400, seed=s, tol=-1.0, record_every=50))
        curves.append(tr.max_residual)
    med = np.median(np.array(curves), axis=0)
    assert np.all(np.diff(med) <= 1e-12)


@settings(max_examples=25, deadline=None)
@given(seed=hst.integers(0, 2**31 - 1), lam=hst.floats(0.2, 1.0))
def test_rka_non_expansive_debug(seed, lam):
    C, b, x_hat = _consistent(M=40, d=5, seed=seed)
    cfg = fz.SolverConfig(max_iters=200, seed=seed, relaxation=lam, debug=True, tol=-1.0, record_every=None)
    _, trace = fz.rka_solve(fz.DenseRows(C, b), cfg, x_ref=x_hat)
    assert not any("increased" in msg for _, msg in trace.flags)


@settings(max_examples=25, deadline=None)
@given(seed=hst.integers(0, 2**31 - 1), k=hst.integers(1, 4))
def test_block_projection_non_expansive(seed, k):
    rng = np.random.default_rng(seed)
    C, b, x_hat = _consistent(M=30, d=5, seed=seed)
    prov = fz.DenseRows(C, b, block_size=10)
    x0 = 3 * rng.standard_normal(5)
    x, _ = fz.block_skm_solve(prov, fz.SolverConfig(max_iters=1, block_rows=k, seed=seed, tol=-1.0), x0=x0)
    assert np.linalg.norm(x - x_hat) <= np.linalg.norm(x0 - x_hat) + 1e-9
