import numpy as np
import pytest

from dengue_ocp import SolverOptions, Status, kkt_residuals, solve
from dengue_ocp.solver import InnerFailure, initial_guess, inner_minimize, projected_gradient

from .conftest import GRID_SCHEMES, GRID_STEPS, make_problem


class Toy:
    """minimize z^2  s.t.  z - 1 = 0,  -10 <= z <= 10."""

    lower = np.array([-10.0])
    upper = np.array([10.0])
    n_cons = 1

    def objective(self, z):
        return float(z[0] ** 2)

    def objective_gradient(self, z):
        return 2.0 * np.asarray(z, dtype=float)

    def defects(self, z):
        return np.asarray(z, dtype=float) - 1.0

    def jacobian(self, z):
        return np.eye(1)


def quadratic(A, b):
    return lambda z: (0.5 * z @ A @ z - b @ z, A @ z - b)


def spd(rng, n, cond):
    Q, _ = np.linalg.qr(rng.normal(size=(n, n)))
    return Q @ np.diag(np.geomspace(1, cond, n)) @ Q.T


class TestInnerMinimize:
    # memory >= dimension, where exact steps give finite termination
    @pytest.mark.parametrize("seed", range(5))
    @pytest.mark.parametrize("n, m, cond", [(10, 10, 20.0), (5, 10, 1e3), (8, 12, 1e2)])
    def test_convex_quadratic(self, seed, n, m, cond):
        rng = np.random.default_rng(seed)
        A = spd(rng, n, cond)
        b = rng.normal(size=n)
        inf = np.full(n, np.inf)
        z, pg, iters = inner_minimize(quadratic(A, b), np.zeros(n), -inf, inf, 1e-10, 200, m)
        assert np.max(np.abs(z - np.linalg.solve(A, b))) <= 1e-8
        assert iters <= n + m

    def test_minimizer_outside_box(self):
        A = np.diag([1.0, 2.0])
        b = np.array([3.0, -1.0])  # unconstrained argmin (3, -0.5)
        lo, hi = np.array([-1.0, -1.0]), np.array([1.0, 1.0])
        z, pg, _ = inner_minimize(quadratic(A, b), np.zeros(2), lo, hi, 1e-10)
        np.testing.assert_allclose(z, [1.0, -0.5], atol=1e-9)
        g = A @ z - b
        assert g[0] < 0  # pushes outward through the active face
        assert abs(g[1]) <= 1e-9 and pg <= 1e-10

    def test_zero_gradient_start(self):
        A = np.eye(3)
        z0 = np.array([1.0, 2.0, 3.0])
        z, pg, iters = inner_minimize(quadratic(A, z0), z0, -np.ones(3) * 9, np.ones(3) * 9, 1e-12)
        assert iters == 0 and pg == 0.0 and np.array_equal(z, z0)

    def test_underflow_raises(self):
        # gradient inconsistent with the function value: no step can decrease it
        def liar(z):
            return 0.0, np.ones_like(z)
        with pytest.raises(InnerFailure):
            inner_minimize(liar, np.zeros(2), -np.ones(2) * np.inf, np.ones(2) * np.inf, 1e-8)


def test_projected_gradient_faces():
    z = np.array([0.0, 0.0, 1.0, 0.5])
    g = np.array([1.0, -1.0, -1.0, 2.0])
    lo, hi = np.zeros(4), np.ones(4)
    np.testing.assert_array_equal(projected_gradient(z, g, lo, hi), [0.0, -1.0, 0.0, 2.0])


class TestKkt:
    def test_toy_optimum(self):
        feas, kkt = kkt_residuals(np.array([1.0]), np.array([-2.0]), Toy())
        assert feas <= 1e-10 and kkt <= 1e-10

    def test_simulation_is_feasible(self):
        p = make_problem("euler", 0.5)
        feas, kkt = kkt_residuals(initial_guess(p), np.zeros(p.n_cons), p)
        assert feas <= 1e-10
        # lambda = 0: stationarity is the projected objective gradient
        assert kkt == 1.0

    def test_zero_multiplier_reduces_to_objective_gradient(self, rng):
        p = make_problem("trapezoidal", 0.5)
        z = rng.uniform(0, 1, p.n_vars)
        _, kkt = kkt_residuals(z, np.zeros(p.n_cons), p)
        pg = projected_gradient(z, p.objective_gradient(z), p.lower, p.upper)
        assert kkt == np.max(np.abs(pg))


class TestToySolve:
    def test_solution(self):
        r = solve(Toy(), np.array([5.0]), SolverOptions(tol_feas=1e-9, tol_opt=1e-9))
        assert r.status is Status.CONVERGED
        assert r.z[0] == pytest.approx(1.0, abs=1e-8)
        assert r.multipliers[0] == pytest.approx(-2.0, abs=1e-7)
        assert r.objective == pytest.approx(1.0, abs=1e-7)
        assert r.trajectory is None

    def test_unstructured_fallback(self):
        r = solve(Toy(), np.array([-3.0]), SolverOptions(structured=False, tol_feas=1e-9))
        assert r.converged and r.z[0] == pytest.approx(1.0, abs=1e-8)

    def test_start_projected_into_box(self):
        r = solve(Toy(), np.array([50.0]))
        assert r.converged

    def test_budget_exhausted(self):
        r = solve(Toy(), np.array([5.0]), SolverOptions(max_outer=1, tol_feas=1e-12))
        assert r.status is Status.MAX_ITERATIONS
        assert r.outer_iters == 1

    @pytest.mark.parametrize("kw", [dict(tol_feas=0), dict(penalty_growth=1.0),
                                    dict(feas_decrease=1.0), dict(max_outer=0)])
    def test_bad_options(self, kw):
        with pytest.raises(ValueError):
            SolverOptions(**kw)


# ---- dengue transcription solves (shared session fixtures) ---------------

@pytest.mark.parametrize("scheme", GRID_SCHEMES)
@pytest.mark.parametrize("h", GRID_STEPS)
def test_grid_converges_to_reported_optimum(grid_solves, scheme, h):
    problem, r = grid_solves[scheme, h]
    assert r.status is Status.CONVERGED
    assert 2e-3 <= r.objective <= 4e-3
    assert r.wall_time < 300


def test_certificates_recompute(grid_solves):
    for problem, r in grid_solves.values():
        feas, kkt = kkt_residuals(r.z, r.multipliers, problem)
        assert feas <= r.options.tol_feas and kkt <= r.options.tol_opt
        assert feas == pytest.approx(r.feas_inf_norm, rel=0, abs=1e-15)
        np.testing.assert_array_equal(r.trajectory.pack(), r.z)


def test_controls_respect_bounds(grid_solves):
    for problem, r in grid_solves.values():
        assert np.all(r.trajectory.controls >= 0)


def test_cross_scheme_agreement(grid_solves):
    a = grid_solves["euler", 0.125][1].objective
    b = grid_solves["trapezoidal", 0.5][1].objective
    assert abs(a - b) / min(a, b) <= 0.10


@pytest.mark.parametrize("scheme", GRID_SCHEMES)
def test_step_size_insensitivity(grid_solves, scheme):
    objs = [grid_solves[scheme, h][1].objective for h in GRID_STEPS]
    assert (max(objs) - min(objs)) / min(objs) <= 0.15


def test_optimal_control_beats_no_control(grid_solves):
    problem, r = grid_solves["euler", 0.5]
    uncontrolled = problem.objective(initial_guess(problem))
    assert r.objective < uncontrolled / 100


def test_deterministic():
    p = make_problem("trapezoidal", 0.5)
    a, b = solve(p), solve(p)
    assert np.array_equal(a.z, b.z) and np.array_equal(a.multipliers, b.multipliers)
    assert (a.outer_iters, a.inner_iters_total, a.status) == (b.outer_iters, b.inner_iters_total, b.status)


@pytest.mark.parametrize("scheme", GRID_SCHEMES)
@pytest.mark.parametrize("h", GRID_STEPS)
def test_cost_scaling_objective(grid_solves, scaled_solves, scheme, h):
    # the pointwise control comparison is an acceptance criterion
    _, r1 = grid_solves[scheme, h]
    _, r10 = scaled_solves[scheme, h]
    assert r10.converged
    assert r10.objective / r1.objective == pytest.approx(10.0, rel=0.05)


def test_summary_fields(grid_solves):
    problem, r = grid_solves["euler", 0.5]
    s = r.summary(problem)
    assert s["problem"]["n_vars"] == 728 and s["status"] == "Converged"
    for key in ("options", "objective", "outer_iters", "inner_iters_total", "feas_inf_norm",
                "kkt_inf_norm", "wall_time_s"):
        assert key in s
