import numpy as np
import pytest
from hypothesis import given, strategies as st

from sketchkrylov.operators import ImageGrid, LinearOperator, from_dense, perturb_adjoint
from sketchkrylov.problems import synthetic_decay
from sketchkrylov.sketch import countsketch, gaussian_sketch, identity_sketch
from sketchkrylov.solvers import (
    SOLVERS,
    FlexibleGolubKahan,
    GolubKahan,
    SolveHistory,
    SolverConfig,
    discrepancy_stop,
    flsmr,
    flsqr,
    lsmr,
    lsqr,
    sflsmr,
    sflsqr,
)
from sketchkrylov.truncate import randomized_rank_truncation, rank_truncation

from oracles import best_in_subspace, krylov_basis, normal_equations_solve


def random_problem(m, n, seed, cond=None):
    rng = np.random.default_rng(seed)
    M = rng.standard_normal((m, n))
    if cond is not None:
        U, _, Vt = np.linalg.svd(M, full_matrices=False)
        M = (U * np.geomspace(1, 1 / cond, n)) @ Vt
    return M, rng.standard_normal(m)


def rel(a, b):
    return np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-300)


# -- frozen regression values -----------------------------------------------

FROZEN_M, FROZEN_B = (lambda r: (r.standard_normal((12, 8)), r.standard_normal(12)))(
    np.random.default_rng(2024)
)


def test_frozen_lsqr_lsmr_residuals():
    A = from_dense(FROZEN_M)
    h = lsqr(A, FROZEN_B, SolverConfig(maxit=3))
    np.testing.assert_allclose(h.true_residual, [4.703711978653155, 4.445851208570098, 4.360117090113634],
                               rtol=1e-12)
    np.testing.assert_allclose(h.x[:3], [0.26878106853571343, 0.18037486364949198, -0.7218773556576478],
                               rtol=1e-10)
    h = lsmr(A, FROZEN_B, SolverConfig(maxit=3))
    np.testing.assert_allclose(h.true_residual, [4.734268696475905, 4.493672800363422, 4.3856477253781225],
                               rtol=1e-12)


def test_frozen_sketched_residuals():
    A = from_dense(FROZEN_M)
    h = sflsqr(A, FROZEN_B, SolverConfig(maxit=3, sketch=gaussian_sketch(7, 12, seed=5)))
    np.testing.assert_allclose(h.true_residual, [5.232231697440873, 5.280412415368489, 5.240482197142451],
                               rtol=1e-10)
    h = sflsmr(A, FROZEN_B, SolverConfig(maxit=3, sketch=countsketch(7, 8, seed=5)))
    np.testing.assert_allclose(h.true_residual, [4.709095017600143, 4.491223872119454, 4.407336154454463],
                               rtol=1e-10)


# -- lsqr / lsmr ------------------------------------------------------------

def test_lsqr_identity_converges_in_one_step():
    b = np.array([1.0, -2.0, 3.0])
    for f in (lsqr, lsmr):
        h = f(from_dense(np.eye(3)), b)
        assert h.n_iter == 1
        np.testing.assert_allclose(h.x, b)
        assert h.true_residual[0] < 1e-14


def test_lsqr_diagonal_exact_in_two_steps():
    h = lsqr(from_dense(np.diag([2.0, 1.0])), np.array([2.0, 1.0]), SolverConfig(maxit=5))
    assert h.n_iter <= 2
    np.testing.assert_allclose(h.x, [1.0, 1.0], atol=1e-12)


def test_lsqr_matches_dense_least_squares():
    M, b = random_problem(30, 20, 2)
    h = lsqr(from_dense(M), b, SolverConfig(maxit=20))
    r_ref = np.linalg.norm(M @ normal_equations_solve(M, b) - b)
    assert abs(h.true_residual[-1] - r_ref) / r_ref < 1e-8


@pytest.mark.parametrize("solver, weighted", [(lsqr, False), (lsmr, True)])
def test_iterates_match_krylov_oracle(solver, weighted):
    M, b = random_problem(30, 20, 3, cond=10)
    h = solver(from_dense(M), b, SolverConfig(maxit=6, store_iterates=True))
    for k in range(1, 7):
        V = krylov_basis(M, b, k)
        ref = best_in_subspace(M, b, V, weight=M.T if weighted else None)
        assert rel(h.iterates[k - 1], ref) < 1e-8


def test_lsmr_minimizes_normal_residual():
    M, b = random_problem(30, 20, 4)
    A = from_dense(M)
    hq = lsqr(A, b, SolverConfig(maxit=12, store_iterates=True))
    hm = lsmr(A, b, SolverConfig(maxit=12, store_iterates=True))
    for xq, xm in zip(hq.iterates, hm.iterates):
        assert np.linalg.norm(M.T @ (b - M @ xm)) <= np.linalg.norm(M.T @ (b - M @ xq)) * (1 + 1e-10)


def test_lsmr_finite_termination_square():
    M, b = random_problem(15, 15, 5, cond=5)
    h = lsmr(from_dense(M), b, SolverConfig(maxit=15, reorthogonalize=True))
    assert h.true_residual[-1] / np.linalg.norm(b) < 1e-8


@pytest.mark.parametrize("solver", [lsqr, lsmr])
def test_matched_solvers_refuse_unmatched(solver):
    A = perturb_adjoint(from_dense(np.eye(4)), 0.1, seed=0)
    with pytest.raises(ValueError, match="exact transpose"):
        solver(A, np.ones(4))


@pytest.mark.parametrize("name", sorted(SOLVERS))
def test_input_validation(name):
    A = from_dense(np.eye(3))
    with pytest.raises(ValueError):
        SOLVERS[name](A, np.zeros(3))
    with pytest.raises(ValueError):
        SOLVERS[name](A, np.ones(4))
    with pytest.raises(ValueError):
        SOLVERS[name](A, np.array([1.0, np.nan, 0.0]))


def test_sketch_domain_checked():
    A = from_dense(np.ones((6, 4)) + np.eye(6, 4))
    with pytest.raises(ValueError, match="R\\^6"):
        sflsqr(A, np.ones(6), SolverConfig(sketch=gaussian_sketch(3, 4, seed=0)))
    with pytest.raises(ValueError, match="R\\^4"):
        sflsmr(A, np.ones(6), SolverConfig(sketch=gaussian_sketch(3, 6, seed=0)))


@pytest.mark.parametrize("kwargs", [
    dict(maxit=0), dict(window=0), dict(tol=-1.0),
    dict(delta_e=1.0, eta=1.0), dict(delta_e=-1.0), dict(discrepancy_on="both"),
])
def test_config_validation(kwargs):
    with pytest.raises(ValueError):
        SolverConfig(**kwargs)


# -- factorizations ---------------------------------------------------------

def test_fgk_reduces_to_gkb():
    M, b = random_problem(40, 25, 6)
    A = from_dense(M)
    g, f = GolubKahan(A, b, 10), FlexibleGolubKahan(A, b, 10)
    for _ in range(10):
        g.step()
        f.step()
    H = f.H[:11, :10]
    assert np.max(np.abs(np.abs(H) - np.abs(g.H[:11, :10]))) < 1e-10
    # lower bidiagonal: nothing above the diagonal
    assert np.max(np.abs(np.triu(H, 1))) < 1e-10


def test_fgk_factorization_identities_and_orthogonality():
    M, b = random_problem(40, 25, 7)
    A = from_dense(M)
    f = FlexibleGolubKahan(A, b, 10)
    for _ in range(10):
        f.step()
    Z, W, P = f.Z[:, :10], f.W[:, :11], f.P[:, :11]
    scale = np.linalg.norm(M, 2)
    assert np.linalg.norm(M @ Z - W @ f.H[:11, :10]) <= 1e-10 * scale * np.linalg.norm(Z)
    assert np.linalg.norm(M.T @ W - P @ f.T[:11, :11]) <= 1e-10 * scale * np.linalg.norm(W)
    assert np.linalg.norm(W.T @ W - np.eye(11), 2) < 1e-10
    assert np.linalg.norm(P.T @ P - np.eye(11), 2) < 1e-10


@pytest.mark.parametrize("window", [1, 2, 3])
def test_fgk_band_structure(window):
    M, b = random_problem(40, 30, 8)
    f = FlexibleGolubKahan(from_dense(M), b, 12, window=window)
    for _ in range(12):
        f.step()
    H, T = f.H[:13, :12], f.T[:13, :13]
    for k in range(12):
        assert np.all(H[: max(0, k - window), k] == 0)
        assert np.all(H[k + 2:, k] == 0)
    for c in range(13):
        assert np.all(T[: max(0, c - window), c] == 0)
        assert np.all(T[c + 1:, c] == 0)
    # the factorization identity holds for any window
    Z, W = f.Z[:, :12], f.W[:, :13]
    assert np.linalg.norm(M @ Z - W @ H) < 1e-10 * np.linalg.norm(M, 2) * np.linalg.norm(Z)


def test_fgk_identities_with_truncation_and_unmatched_adjoint():
    grid = ImageGrid(6, 5)
    rng = np.random.default_rng(9)
    M = rng.standard_normal((40, 30))
    A = perturb_adjoint(from_dense(M), 0.05, seed=1)
    Asharp = A.adjoint_todense()
    b = rng.standard_normal(40)
    tau = rank_truncation(grid, 2)
    f = FlexibleGolubKahan(A, b, 8, tau=tau, window=2)
    for _ in range(8):
        f.step()
    Z, W, P = f.Z[:, :8], f.W[:, :9], f.P[:, :9]
    assert np.linalg.norm(M @ Z - W @ f.H[:9, :8]) < 1e-10 * np.linalg.norm(M, 2) * np.linalg.norm(Z)
    assert np.linalg.norm(Asharp @ W - P @ f.T[:9, :9]) < 1e-10 * np.linalg.norm(Asharp, 2) * 3
    for j in range(8):
        np.testing.assert_allclose(Z[:, j], tau(P[:, j], j), atol=1e-14)


def test_gkb_orthogonality_full_window_50_steps():
    M, b = random_problem(300, 120, 10, cond=20)
    f = FlexibleGolubKahan(from_dense(M), b, 50)
    for _ in range(50):
        f.step()
    assert np.linalg.norm(f.W.T @ f.W - np.eye(51), 2) < 1e-8
    assert np.linalg.norm(f.P.T @ f.P - np.eye(51), 2) < 1e-8


# -- flexible solvers -------------------------------------------------------

@pytest.mark.parametrize("flex, classic", [(flsqr, lsqr), (flsmr, lsmr)])
def test_flexible_identity_tau_equals_classic(flex, classic):
    M, b = random_problem(50, 30, 11)
    A = from_dense(M)
    hf = flex(A, b, SolverConfig(maxit=15, store_iterates=True))
    hc = classic(A, b, SolverConfig(maxit=15, store_iterates=True))
    for xf, xc in zip(hf.iterates, hc.iterates):
        assert rel(xf, xc) < 1e-8


def test_flexible_solvers_ignore_window():
    M, b = random_problem(50, 30, 12)
    A = from_dense(M)
    a = flsqr(A, b, SolverConfig(maxit=10, window=1))
    c = flsqr(A, b, SolverConfig(maxit=10, window=None))
    np.testing.assert_array_equal(a.x, c.x)


def test_flsqr_projected_residual_is_true_residual():
    M, b = random_problem(50, 36, 13)
    grid = ImageGrid(6, 6)
    h = flsqr(from_dense(M), b, SolverConfig(maxit=12, tau=rank_truncation(grid, 2)))
    np.testing.assert_allclose(h.sketched_residual, h.true_residual, rtol=1e-9)


def test_flsmr_projected_objective_is_normal_residual():
    M, b = random_problem(50, 36, 14)
    grid = ImageGrid(6, 6)
    h = flsmr(from_dense(M), b, SolverConfig(maxit=12, tau=rank_truncation(grid, 2), store_iterates=True))
    for obj, x in zip(h.sketched_residual, h.iterates):
        assert obj == pytest.approx(np.linalg.norm(M.T @ (b - M @ x)), rel=1e-9)


def test_flsmr_first_step_closed_form():
    M, b = random_problem(20, 10, 15)
    h = flsmr(from_dense(M), b, SolverConfig(maxit=1))
    z = h.basis[:, 0]
    g = M.T @ (M @ z)
    y = g @ (M.T @ b) / (g @ g)
    np.testing.assert_allclose(h.x, y * z, rtol=1e-12)


# -- sketched solvers -------------------------------------------------------

@pytest.mark.parametrize("sketched, classic", [(sflsqr, lsqr), (sflsmr, lsmr)])
def test_identity_sketch_reduces_to_classic(sketched, classic):
    M, b = random_problem(60, 40, 16)
    A = from_dense(M)
    hs = sketched(A, b, SolverConfig(maxit=20, window=None, store_iterates=True))
    hc = classic(A, b, SolverConfig(maxit=20, store_iterates=True))
    for xs, xc in zip(hs.iterates, hc.iterates):
        assert rel(xs, xc) < 1e-8


@pytest.mark.parametrize("window", [1, 2, None])
def test_sflsqr_matches_sketched_krylov_oracle(window):
    # the span of Z_k is the Krylov space for every window when tau is the identity
    M, b = random_problem(60, 30, 17, cond=5)
    S = gaussian_sketch(13, 60, seed=3)
    h = sflsqr(from_dense(M), b, SolverConfig(maxit=6, window=window, sketch=S, store_iterates=True))
    D = S.todense()
    for k in range(1, 7):
        ref = best_in_subspace(M, b, krylov_basis(M, b, k), weight=D)
        assert rel(h.iterates[k - 1], ref) < 1e-7


@pytest.mark.parametrize("window", [1, 2, None])
def test_sflsmr_matches_sketched_krylov_oracle(window):
    M, b = random_problem(60, 30, 18, cond=5)
    S = gaussian_sketch(13, 30, seed=4)
    h = sflsmr(from_dense(M), b, SolverConfig(maxit=6, window=window, sketch=S, store_iterates=True))
    weight = S.todense() @ M.T
    for k in range(1, 7):
        ref = best_in_subspace(M, b, krylov_basis(M, b, k), weight=weight)
        assert rel(h.iterates[k - 1], ref) < 1e-7


def test_sflsmr_exact_on_rank_deficient():
    rng = np.random.default_rng(19)
    M = rng.standard_normal((200, 10)) @ rng.standard_normal((10, 100))
    b = rng.standard_normal(200)
    r_opt = np.linalg.norm(b - M @ np.linalg.lstsq(M, b, rcond=None)[0])
    for seed in range(3):
        h = sflsmr(from_dense(M), b, SolverConfig(maxit=10, window=None,
                                                  sketch=gaussian_sketch(21, 100, seed=seed)))
        assert abs(h.true_residual[-1] - r_opt) / r_opt < 1e-8


def test_quasi_optimality_from_measured_distortion():
    M, b = random_problem(300, 80, 20, cond=100)
    A = from_dense(M)
    S = gaussian_sketch(61, 300, seed=5)
    h = sflsqr(A, b, SolverConfig(maxit=20, sketch=S))
    D = S.todense()
    for k in range(1, h.n_iter + 1):
        Z = h.basis[:, :k]
        Q, _ = np.linalg.qr(np.column_stack([M @ Z, b]))
        sv = np.linalg.svd(D @ Q, compute_uv=False)
        eps = max(1 - sv.min(), sv.max() - 1)
        assert eps < 1
        Qa, _ = np.linalg.qr(M @ Z)
        r_opt = np.linalg.norm(b - Qa @ (Qa.T @ b))
        assert h.true_residual[k - 1] <= (1 + eps) / (1 - eps) * r_opt * (1 + 1e-10)


def test_randomized_truncation_run_is_reproducible():
    grid = ImageGrid(8, 8)
    rng = np.random.default_rng(21)
    M, b = rng.standard_normal((80, 64)), rng.standard_normal(80)
    cfg = SolverConfig(maxit=8, tau=randomized_rank_truncation(grid, 2, seed=3),
                       sketch=gaussian_sketch(17, 80, seed=1))
    a = sflsqr(from_dense(M), b, cfg)
    c = sflsqr(from_dense(M), b, cfg)
    np.testing.assert_array_equal(a.x, c.x)


# -- monotonicity properties ------------------------------------------------

@given(st.integers(0, 2**32 - 1), st.integers(1, 3), st.sampled_from(["gaussian", "countsketch"]))
def test_sketched_objectives_nonincreasing(seed, window, kind):
    rng = np.random.default_rng(seed)
    M, b = rng.standard_normal((40, 25)), rng.standard_normal(40)
    A = from_dense(M)
    mk = gaussian_sketch if kind == "gaussian" else countsketch
    for solver, d in ((sflsqr, 40), (sflsmr, 25)):
        h = solver(A, b, SolverConfig(maxit=10, window=window, sketch=mk(21, d, seed=seed)))
        obj = np.array(h.sketched_residual)
        assert np.all(np.diff(obj) <= 1e-10 * obj[0])


@given(st.integers(0, 2**32 - 1))
def test_lsqr_residual_nonincreasing(seed):
    rng = np.random.default_rng(seed)
    M, b = rng.standard_normal((30, 20)), rng.standard_normal(30)
    r = np.array(lsqr(from_dense(M), b, SolverConfig(maxit=20)).true_residual)
    assert np.all(np.diff(r) <= 1e-10 * r[0])


# -- history, breakdown and stopping ----------------------------------------

def test_history_consistency():
    M, b = random_problem(30, 20, 22)
    x_true = np.ones(20)
    h = sflsqr(from_dense(M), b, SolverConfig(maxit=7, store_iterates=True,
                                               sketch=gaussian_sketch(15, 30, seed=0)), x_true=x_true)
    assert isinstance(h, SolveHistory)
    assert len(h.true_residual) == len(h.sketched_residual) == len(h.error) == h.n_iter == 7
    assert min(h.true_residual) >= 0 and min(h.sketched_residual) >= 0
    for k in range(1, 8):
        np.testing.assert_allclose(h.iterate(k), h.iterates[k - 1])
    np.testing.assert_allclose(h.x, h.iterates[-1])
    assert h.err_rel[-1] == pytest.approx(np.linalg.norm(h.x - x_true) / np.sqrt(20))
    with pytest.raises(IndexError):
        h.iterate(8)


def test_invariant_subspace_terminates_cleanly():
    A = from_dense(np.diag([1.0, 2.0, 3.0]))
    for name, f in SOLVERS.items():
        h = f(A, np.array([1.0, 0.0, 0.0]), SolverConfig(maxit=5))
        assert h.n_iter == 1, name
        np.testing.assert_allclose(h.x, [1.0, 0.0, 0.0], atol=1e-12)


def test_breakdown_before_first_step():
    A = from_dense(np.array([[1.0, 0.0], [0.0, 0.0]]))
    h = flsqr(A, np.array([0.0, 1.0]))
    assert h.stop_reason == "breakdown" and h.n_iter == 0
    np.testing.assert_array_equal(h.x, np.zeros(2))


def test_breakdown_mid_run_keeps_partial_history():
    # b lies in a 2-dimensional invariant subspace; the third direction vanishes
    A = from_dense(np.diag([1.0, 2.0, 3.0, 4.0]))
    h = flsqr(A, np.array([1.0, 1.0, 0.0, 0.0]), SolverConfig(maxit=10, tol=0.0))
    assert h.stop_reason == "breakdown"
    assert h.n_iter == 2
    np.testing.assert_allclose(h.x, [1.0, 0.5, 0.0, 0.0], atol=1e-12)


def test_discrepancy_stop_examples():
    hist = SolveHistory("x", 1.0, 1.0, true_residual=[3.0, 2.0, 1.5])
    assert discrepancy_stop(hist, 1.01, 1.0) is None
    hist = SolveHistory("x", 1.0, 1.0, true_residual=[3.0, 0.0, 0.0])
    assert discrepancy_stop(hist, 1.01, 0.0) == 2
    with pytest.raises(ValueError):
        discrepancy_stop(hist, 1.0, 0.1)
    with pytest.raises(ValueError):
        discrepancy_stop(hist, 1.1, -0.1)


def test_discrepancy_on_synthetic_problem():
    p = synthetic_decay(m=256, n=128, rho=1.05, delta=0.10, seed=3)
    full = lsqr(p.A, p.b, SolverConfig(maxit=40))
    k = discrepancy_stop(full, 1.01, p.delta_e)
    first = int(np.argmax(full.res_rel <= 0.101)) + 1
    assert k is not None and abs(k - first) <= 3
    stopped = lsqr(p.A, p.b, SolverConfig(maxit=40, delta_e=p.delta_e))
    assert stopped.stop_reason == "discrepancy" and stopped.stop_iteration == k == stopped.n_iter


def test_discrepancy_on_sketched_objective():
    p = synthetic_decay(m=256, n=128, rho=1.05, delta=0.10, seed=4)
    S = gaussian_sketch(61, 256, seed=0)
    h = sflsqr(p.A, p.b, SolverConfig(maxit=30, sketch=S, delta_e=p.delta_e, discrepancy_on="sketched"))
    assert h.stop_reason == "discrepancy"
    assert h.sketched_residual[-1] <= 1.01 * p.delta_e
    assert all(r > 1.01 * p.delta_e for r in h.sketched_residual[:-1])


def test_discrepancy_without_recorded_residuals():
    p = synthetic_decay(m=256, n=128, rho=1.05, delta=0.10, seed=5)
    a = flsqr(p.A, p.b, SolverConfig(maxit=30, delta_e=p.delta_e))
    c = flsqr(p.A, p.b, SolverConfig(maxit=30, delta_e=p.delta_e, record_residuals=False))
    assert a.stop_iteration == c.stop_iteration
    np.testing.assert_allclose(a.x, c.x)


def test_tolerance_stop_on_consistent_system():
    M, _ = random_problem(20, 20, 23, cond=3)
    b = M @ np.ones(20)
    h = sflsqr(from_dense(M), b, SolverConfig(maxit=40, window=None, tol=1e-10))
    assert h.stop_reason == "tol"
    np.testing.assert_allclose(h.x, np.ones(20), rtol=1e-6)


def test_identity_sketch_is_default():
    M, b = random_problem(20, 10, 24)
    A = from_dense(M)
    a = sflsqr(A, b, SolverConfig(maxit=5))
    c = sflsqr(A, b, SolverConfig(maxit=5, sketch=identity_sketch(20)))
    np.testing.assert_array_equal(a.x, c.x)


def test_matrix_free_operator_accepted():
    M, b = random_problem(25, 15, 25)
    op = LinearOperator(M.shape, lambda x: M @ x, lambda y: M.T @ y)
    np.testing.assert_allclose(lsqr(op, b, SolverConfig(maxit=5)).x,
                               lsqr(from_dense(M), b, SolverConfig(maxit=5)).x)


def test_full_window_orthogonality_survives_convergence():
    # well conditioned: A^T w lies almost in span(P) after convergence
    rng = np.random.default_rng(0)
    N, b = rng.standard_normal((120, 60)), rng.standard_normal(120)
    f = FlexibleGolubKahan(from_dense(N), b, 50, window=None)
    for _ in range(50):
        f.step()
    assert np.linalg.norm(f.P.T @ f.P - np.eye(51), 2) < 1e-12
    assert np.linalg.norm(N.T @ f.W - f.P @ f.T) < 1e-12 * np.linalg.norm(N)
