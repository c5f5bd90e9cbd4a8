import numpy as np
import pytest

from sdedrift.basis import BasisSet1D, Domain, TensorBasis, build_domain, make_basis_1d, make_tensor_basis
from sdedrift.dynamics import (DiagonalConstant, DiagonalFunction, Ensemble, FullConstant, FullFunction,
                               ScalarConstant, TimeGrid, UniformInit, simulate_ensemble)
from sdedrift.errors import Diverged
from sdedrift.estimator import (BasisDrift, NormalSystem, OptimizerConfig, assemble_diagonal_system,
                                assemble_quadratic, empirical_loss, fit_basis_drift, fit_general,
                                loss_gradient_coefficients, solve_system)


def random_walk(M, L, d, seed=0, T=1.0):
    rng = np.random.default_rng(seed)
    grid = TimeGrid.uniform(T, T / (L - 1))
    x0 = rng.uniform(0, 10, (M, 1, d))
    steps = rng.normal(0.05, 0.3, (M, L - 1, d))
    return Ensemble(grid, np.concatenate([x0, x0 + np.cumsum(steps, axis=1)], axis=1))


def constant_basis(lo=-1e3, hi=1e3, d=1):
    return TensorBasis(tuple(BasisSet1D("pwpoly", [lo, hi], 0) for _ in range(d)))


def brute_loss(f, ens, precision):
    total = 0.0
    for m in range(ens.M):
        for l in range(ens.L - 1):
            x = ens.states[m, l]
            g = f(x[None, :])[0]
            W = precision(x)
            dt = ens.grid.t[l + 1] - ens.grid.t[l]
            total += 0.5 * g @ W @ g * dt - g @ W @ (ens.states[m, l + 1] - x)
    return total / (ens.T * ens.M)


def full_state_cov():
    def D(X):
        a = 0.6 + 0.1 * np.sin(X[:, 0])
        c = 0.8 + 0.1 * np.cos(X[:, 1])
        off = 0.2 * np.ones(len(X))
        return np.stack([np.stack([a, off], -1), np.stack([off, c], -1)], -2)

    return FullFunction(D, 2)


class TestEmpiricalLoss:
    def test_zero_candidate(self):
        ens = random_walk(3, 20, 2)
        assert empirical_loss(lambda X: np.zeros_like(X), ens, DiagonalConstant([0.6, 0.8])) == 0.0

    def test_constant_drift(self):
        c, s2 = 1.7, 0.6
        grid = TimeGrid.uniform(1.0, 0.2)
        ens = Ensemble(grid, (3.0 + c * grid.t)[None, :, None])
        f = lambda X: np.full_like(X, c)
        loss = empirical_loss(f, ens, ScalarConstant(s2))
        assert loss == pytest.approx(brute_loss(f, ens, lambda x: np.eye(1) / s2), rel=1e-12)
        assert loss == pytest.approx(-c * c / (2 * s2), rel=1e-12)

    @pytest.mark.parametrize("cov", [DiagonalConstant([0.6, 0.8]), FullConstant([[0.6, 0.2], [0.2, 0.8]]),
                                     full_state_cov()])
    def test_matches_brute_force(self, cov):
        ens = random_walk(4, 12, 2, seed=5)
        f = lambda X: np.column_stack([np.sin(X[:, 0]), X[:, 0] * X[:, 1] / 10])
        prec = lambda x: np.linalg.inv(cov.matrix(x[None, :])[0])
        assert empirical_loss(f, ens, cov) == pytest.approx(brute_loss(f, ens, prec), rel=1e-12)

    def test_homogeneity(self):
        ens = random_walk(5, 30, 1, seed=2)
        f = lambda X: 0.3 * X - 1.0
        base = empirical_loss(f, ens, ScalarConstant(0.6))
        for c in (0.1, 2.0, 10.0):
            assert empirical_loss(f, ens, ScalarConstant(0.6 * c)) == pytest.approx(base / c, rel=1e-12)


class TestNormalSystem:
    def test_hand_example(self):
        grid = TimeGrid([0.0, 0.5, 1.0])
        ens = Ensemble(grid, np.array([[[0.0], [0.3], [0.5]]]))
        sys = assemble_diagonal_system(ens, constant_basis(), ScalarConstant(2.0))
        # A = (0.5 + 0.5) / 2, b = (0.3 + 0.2) / 2
        assert sys.A[0, 0, 0] == pytest.approx(0.5, rel=1e-15)
        assert sys.b[0, 0] == pytest.approx(0.25, rel=1e-15)
        assert solve_system(sys)[0, 0] == pytest.approx(0.5, rel=1e-14)

    def test_constant_drift_recovered(self):
        grid = TimeGrid.uniform(1.0, 0.01)
        ens = Ensemble(grid, (1.0 + 2.5 * grid.t)[None, :, None])
        coef = solve_system(assemble_diagonal_system(ens, constant_basis(), ScalarConstant(0.6)))
        assert coef[0, 0] == pytest.approx(2.5, rel=1e-12)

    def test_zero_increments(self):
        grid = TimeGrid.uniform(1.0, 0.1)
        ens = Ensemble(grid, np.tile(np.array([1.0, 4.0, 2.0])[:, None, None], (1, grid.L, 1)))
        tb = make_tensor_basis(build_domain(ens), "bspline", 4)
        assert np.all(assemble_diagonal_system(ens, tb, ScalarConstant(0.6)).b == 0.0)

    def test_duplication_invariance(self):
        ens = random_walk(7, 40, 2, seed=3)
        twice = Ensemble(ens.grid, np.concatenate([ens.states, ens.states]))
        tb = make_tensor_basis(build_domain(ens), "bspline", 16)
        cov = DiagonalConstant([0.6, 0.8])
        a, b = assemble_diagonal_system(ens, tb, cov), assemble_diagonal_system(twice, tb, cov)
        np.testing.assert_allclose(b.A, a.A, rtol=1e-13, atol=1e-16)
        np.testing.assert_allclose(b.b, a.b, rtol=1e-13, atol=1e-16)

    def test_symmetric(self):
        ens = random_walk(5, 30, 2, seed=4)
        tb = make_tensor_basis(build_domain(ens), "bspline", 25)
        sys = assemble_diagonal_system(ens, tb, DiagonalConstant([0.6, 0.8]))
        assert np.array_equal(sys.A, np.swapaxes(sys.A, 1, 2))

    def test_identity_solve(self):
        sys = NormalSystem(np.eye(4)[None], np.eye(4)[:1])
        np.testing.assert_array_equal(solve_system(sys)[:, 0], [1, 0, 0, 0])


def wls_oracle(ens, tb, variances):
    """Weighted least squares of per-step rates onto the basis, one column at a time."""
    X = ens.states[:, :-1].reshape(-1, ens.d)
    dX = np.diff(ens.states, axis=1).reshape(-1, ens.d)
    dt = np.tile(np.diff(ens.grid.t), ens.M)
    Psi = np.array([tb(x[None, :])[0] for x in X])
    out = np.empty((tb.n, ens.d))
    for k in range(ens.d):
        w = np.sqrt(dt / variances(X)[:, k])
        out[:, k] = np.linalg.lstsq(Psi * w[:, None], dX[:, k] / dt * w, rcond=None)[0]
    return out


class TestClosedForm:
    @pytest.mark.parametrize("cov", [DiagonalConstant([0.6, 0.8]),
                                     DiagonalFunction([lambda X: 0.5 + 0.1 * np.sin(X[:, 1]),
                                                       lambda X: 0.7 + 0.05 * X[:, 0] ** 2 / 100])])
    def test_weighted_least_squares_oracle(self, cov):
        ens = random_walk(10, 50, 2, seed=11)
        tb = make_tensor_basis(build_domain(ens), "bspline", 16)
        coef = fit_basis_drift(ens, tb, cov).coef
        ref = wls_oracle(ens, tb, cov.variances)
        assert np.max(np.abs(coef - ref)) <= 1e-8 * np.max(np.abs(ref))

    def test_exact_recovery_without_noise(self):
        # a linear drift lies in the span of quadratic B-splines
        f = lambda X: 1.0 - 0.2 * X
        ens = simulate_ensemble(f, ScalarConstant(1e-20), TimeGrid.uniform(1.0, 0.01), 20, UniformInit(0, 10), 0)
        model = fit_basis_drift(ens, make_tensor_basis(build_domain(ens), "bspline", 6), ScalarConstant(1e-20))
        X = ens.pooled_states()
        assert np.max(np.abs(model(X) - f(X))) <= 1e-6

    @pytest.mark.parametrize("c", [0.1, 10.0])
    def test_noise_scale_invariance(self, c):
        ens = simulate_ensemble(lambda X: 2 + 0.08 * X - 0.05 * np.sin(X), ScalarConstant(0.6),
                                TimeGrid.uniform(1.0, 0.001), 200, UniformInit(0, 10), 1)
        tb = make_tensor_basis(build_domain(ens), "bspline", 8)
        a = fit_basis_drift(ens, tb, ScalarConstant(0.6)).coef
        b = fit_basis_drift(ens, tb, ScalarConstant(0.6 * c)).coef
        assert np.max(np.abs(a - b)) <= 1e-10

    def test_decoupling(self):
        ens = random_walk(6, 40, 2, seed=8)
        lo, hi = build_domain(ens).lo, build_domain(ens).hi
        # the basis depends on x1 only, so editing x2 leaves the regressors alone
        tb = TensorBasis((make_basis_1d((lo[0], hi[0]), "bspline", 6), BasisSet1D("pwpoly", [lo[1], hi[1]], 0)))
        states = ens.states.copy()
        states[:, :, 1] += np.random.default_rng(0).normal(0, 0.1, states.shape[:2])
        cov = DiagonalConstant([0.6, 0.8])
        a = fit_basis_drift(ens, tb, cov).coef
        b = fit_basis_drift(Ensemble(ens.grid, states), tb, cov).coef
        assert np.array_equal(a[:, 0], b[:, 0])
        assert not np.allclose(a[:, 1], b[:, 1])

    def test_singular_falls_back_to_ridge(self):
        ens = random_walk(3, 20, 1, seed=1)
        lo, hi = build_domain(ens).lo[0], build_domain(ens).hi[0]
        # cells beyond the data never see a sample
        tb = TensorBasis((make_basis_1d((lo, hi + 3 * (hi - lo)), "pwpoly", 12, 2),))
        model = fit_basis_drift(ens, tb, ScalarConstant(0.6))
        assert model.report["ridge"][0] > 0
        assert np.all(np.isfinite(model.coef))
        np.testing.assert_array_equal(model.coef[-3:], 0.0)


class TestGradient:
    def test_vanishes_at_solution(self):
        ens = random_walk(10, 50, 2, seed=6)
        tb = make_tensor_basis(build_domain(ens), "bspline", 16)
        cov = DiagonalConstant([0.6, 0.8])
        sys = assemble_diagonal_system(ens, tb, cov)
        g = loss_gradient_coefficients(solve_system(sys), ens, tb, cov)
        assert np.max(np.abs(g)) <= 1e-8 * max(1.0, np.max(np.abs(sys.b)))

    def test_zero_case(self):
        grid = TimeGrid.uniform(1.0, 0.1)
        ens = Ensemble(grid, np.ones((2, grid.L, 2)))
        tb = constant_basis(d=2)
        assert np.all(loss_gradient_coefficients(np.zeros((1, 2)), ens, tb, FullConstant([[1, .5], [.5, 1]])) == 0)

    @pytest.mark.parametrize("cov", [FullConstant([[0.6, 0.2], [0.2, 0.8]]), full_state_cov()])
    def test_finite_differences(self, cov):
        ens = random_walk(4, 30, 2, seed=9)
        tb = make_tensor_basis(build_domain(ens), "bspline", 9)
        rng = np.random.default_rng(10)
        h = 1e-5
        for _ in range(20):
            coef = rng.normal(size=(tb.n, 2))
            g = loss_gradient_coefficients(coef, ens, tb, cov)
            fd = np.empty_like(coef)
            for idx in np.ndindex(coef.shape):
                e = np.zeros_like(coef)
                e[idx] = h
                fd[idx] = (empirical_loss(BasisDrift(tb, coef + e), ens, cov)
                           - empirical_loss(BasisDrift(tb, coef - e), ens, cov)) / (2 * h)
            assert np.max(np.abs(g - fd)) <= 1e-5 * np.max(np.abs(fd))

    def test_quadratic_form_agrees(self):
        ens = random_walk(6, 25, 2, seed=12)
        tb = make_tensor_basis(build_domain(ens), "bspline", 9)
        cov = full_state_cov()
        q = assemble_quadratic(ens, tb, cov)
        coef = np.random.default_rng(0).normal(size=(tb.n, 2))
        np.testing.assert_allclose(q.gradient(coef), loss_gradient_coefficients(coef, ens, tb, cov),
                                   rtol=1e-10, atol=1e-12)
        assert q.value(coef) == pytest.approx(empirical_loss(BasisDrift(tb, coef), ens, cov), rel=1e-10)

    def test_loss_is_parabola_along_lines(self):
        ens = random_walk(6, 25, 2, seed=13)
        tb = make_tensor_basis(build_domain(ens), "bspline", 9)
        cov = FullConstant([[0.6, 0.2], [0.2, 0.8]])
        rng = np.random.default_rng(1)
        c0, direction = rng.normal(size=(2, tb.n, 2))
        L = [empirical_loss(BasisDrift(tb, c0 + s * direction), ens, cov) for s in (-1, 0, 1, 2)]
        # a quadratic has zero third difference
        assert abs(L[3] - (L[0] - 3 * L[1] + 3 * L[2])) <= 1e-10 * max(map(abs, L))


class TestFitGeneral:
    def test_matches_closed_form_on_diagonal(self):
        ens = random_walk(10, 50, 2, seed=14)
        tb = make_tensor_basis(build_domain(ens), "bspline", 9)
        cov = DiagonalConstant([0.6, 0.8])
        ref = solve_system(assemble_diagonal_system(ens, tb, cov))
        got = fit_general(ens, tb, cov, OptimizerConfig("gd", iterations=2000)).coef
        assert np.max(np.abs(got - ref)) <= 1e-4

    @pytest.mark.parametrize("full", [FullConstant([[0.6, 0.2], [0.2, 0.8]]), full_state_cov()])
    def test_full_covariance_not_worse_than_diagonal_fit(self, full):
        f = lambda X: np.column_stack([0.4 * X[:, 0] - 0.1 * X[:, 0] * X[:, 1], -0.8 * X[:, 1] + 0.2 * X[:, 0] ** 2])
        ens = simulate_ensemble(f, full, TimeGrid.uniform(1.0, 0.001), 200, UniformInit(0, 10), 3)
        tb = make_tensor_basis(build_domain(ens), "bspline", 36)
        diag_fit = fit_basis_drift(ens, tb, DiagonalConstant([0.6, 0.8]))
        gd_fit = fit_general(ens, tb, full, OptimizerConfig("gd", iterations=2000))
        ref = empirical_loss(diag_fit, ens, full)
        # with constant D both fits share the same minimizer, so allow for rounding
        assert empirical_loss(gd_fit, ens, full) <= ref + 1e-12 * abs(ref)

    def test_plain_gradient_descent(self):
        ens = random_walk(10, 50, 1, seed=14)
        tb = make_tensor_basis(build_domain(ens), "bspline", 4)
        cov = ScalarConstant(0.6)
        ref = solve_system(assemble_diagonal_system(ens, tb, cov))
        opt = OptimizerConfig("gd", iterations=200000, tolerance=1e-20, precondition=False, accelerate=False)
        model = fit_general(ens, tb, cov, opt)
        assert np.max(np.abs(model.coef - ref)) <= 1e-4

    def test_zero_budget(self):
        ens = random_walk(2, 10, 2)
        tb = make_tensor_basis(build_domain(ens), "bspline", 9)
        model = fit_general(ens, tb, FullConstant([[0.6, 0.2], [0.2, 0.8]]), OptimizerConfig(iterations=0))
        assert np.all(model.coef == 0.0)

    def test_adam_runs(self):
        ens = random_walk(4, 30, 1, seed=2)
        tb = make_tensor_basis(build_domain(ens), "bspline", 5)
        cov = ScalarConstant(0.6)
        ref = empirical_loss(fit_basis_drift(ens, tb, cov), ens, cov)
        model = fit_general(ens, tb, cov, OptimizerConfig("adam", step_size=0.05, iterations=5000))
        assert empirical_loss(model, ens, cov) <= ref + 1e-6

    def test_diverged(self):
        ens = random_walk(4, 30, 2, seed=2)
        tb = make_tensor_basis(build_domain(ens), "bspline", 9)
        with np.errstate(over="ignore", invalid="ignore"), pytest.raises(Diverged):
            fit_general(ens, tb, DiagonalConstant([0.6, 0.8]), OptimizerConfig("gd", step_size=1e6, iterations=5000))
