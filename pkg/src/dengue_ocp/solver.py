"""Bound-constrained augmented-Lagrangian solver for equality-constrained NLPs.

The outer loop minimizes

    L(z; lam, rho) = f(z) + lam . c(z) + rho/2 |c(z)|^2

over the box ``lower <= z <= upper`` with a projected limited-memory
quasi-Newton inner solver, then updates ``lam <- lam + rho c(z)``.  The
penalty grows whenever the constraint violation fails to shrink by
``feas_decrease``.

The penalty term makes the inner problems badly conditioned (the defect
Jacobian of a long mesh is a chain of coupled blocks), so plain L-BFGS crawls.
The inner model therefore keeps the Gauss-Newton part ``rho J^T J`` exactly
and lets the limited-memory pairs approximate only the Lagrangian curvature
``sum_i w_i grad^2 c_i``.  Those pairs do not depend on ``rho`` and are
carried across outer iterations.  ``J`` is banded, so each step costs one
sparse factorization plus a small Woodbury correction.
"""

from __future__ import annotations

import enum
import logging
import time
from collections import deque
from dataclasses import asdict, dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .simulate import Trajectory, simulate, zero_controls
from .transcription import NlpProblem, unpack

logger = logging.getLogger(__name__)


class Status(enum.Enum):
    CONVERGED = "Converged"
    MAX_ITERATIONS = "MaxIterations"
    INNER_FAILURE = "InnerFailure"


class InnerFailure(RuntimeError):
    """Line search could not make progress; carries the last iterate."""

    def __init__(self, msg, z, pg_norm, iters):
        super().__init__(msg)
        self.z = z
        self.pg_norm = pg_norm
        self.iters = iters


@dataclass(frozen=True)
class SolverOptions:
    """Tolerances and budgets.

    ``inner_tol_init`` is the first subproblem tolerance; it is multiplied by
    ``inner_tol_factor`` after every outer iteration and floored at
    ``tol_opt / 10``.  ``curvature_init`` seeds the diagonal of the
    quasi-Newton curvature model before any pair is stored; ``structured=False``
    falls back to plain projected L-BFGS on the whole merit function.
    """

    tol_feas: float = 1e-6
    tol_opt: float = 1e-4
    penalty_init: float = 10.0
    penalty_growth: float = 10.0
    feas_decrease: float = 0.25
    max_outer: int = 50
    max_inner: int = 2000
    lbfgs_memory: int = 10
    inner_tol_init: float = 1e-3
    inner_tol_factor: float = 0.5
    curvature_init: float = 0.1
    structured: bool = True

    def __post_init__(self):
        if not (self.tol_feas > 0 and self.tol_opt > 0 and self.inner_tol_init > 0):
            raise ValueError("tolerances must be positive")
        if not self.penalty_growth > 1:
            raise ValueError("penalty_growth must be > 1")
        if not 0 < self.feas_decrease < 1:
            raise ValueError("feas_decrease must lie in (0, 1)")
        if not 0 < self.inner_tol_factor < 1:
            raise ValueError("inner_tol_factor must lie in (0, 1)")
        if not (self.penalty_init > 0 and self.max_outer >= 1 and self.max_inner >= 1
                and self.lbfgs_memory >= 1 and self.curvature_init > 0):
            raise ValueError("penalty_init, curvature_init, max_outer, max_inner and "
                             "lbfgs_memory must be positive")


def projected_gradient(z, g, lower, upper) -> np.ndarray:
    """``g`` with components zeroed where ``-g`` points out of the box."""
    pg = np.array(g, dtype=float)
    pg[(z <= lower) & (pg > 0)] = 0.0
    pg[(z >= upper) & (pg < 0)] = 0.0
    return pg


class CurvatureMemory:
    """Limited-memory BFGS pairs.

    The implied Hessian approximation has the compact form
    ``B = theta I - W M W^T`` with ``W = [Y, theta S]``; ``theta`` follows the
    usual ``y.y / s.y`` scaling of the newest pair.
    """

    def __init__(self, size, theta=1.0):
        self.S = deque(maxlen=size)
        self.Y = deque(maxlen=size)
        self.theta = theta

    def __len__(self):
        return len(self.S)

    def clear(self):
        self.S.clear()
        self.Y.clear()

    def update(self, s, y) -> bool:
        """Store the pair unless it violates the curvature condition."""
        sy = s.dot(y)
        if not sy > 1e-10 * np.sqrt(s.dot(s) * y.dot(y)):
            return False
        self.S.append(s)
        self.Y.append(y)
        self.theta = y.dot(y) / sy
        return True

    def compact(self):
        """``(W, M^{-1})`` of the compact representation."""
        S = np.array(self.S).T
        Y = np.array(self.Y).T
        SY = S.T @ Y
        D = np.diag(np.diag(SY))
        L = np.tril(SY, -1)
        Minv = np.block([[-D, L.T], [L, self.theta * (S.T @ S)]])
        return np.hstack([Y, self.theta * S]), Minv

    def inverse_apply(self, q):
        """Two-loop recursion: ``H q`` with ``H0 = I / theta``."""
        q = q.copy()
        alphas = []
        for s, y in zip(reversed(self.S), reversed(self.Y)):
            a = s.dot(q) / s.dot(y)
            alphas.append(a)
            q -= a * y
        q /= self.theta
        for s, y, a in zip(self.S, self.Y, reversed(alphas)):
            b = y.dot(q) / s.dot(y)
            q += (a - b) * s
        return q


def _structured_direction(g, free, known, mem: CurvatureMemory):
    """Solve ``(K_FF + theta I - W_F M W_F^T) d_F = -g_F`` by Woodbury."""
    idx = np.flatnonzero(free)
    K = sp.csr_matrix(known)[idx][:, idx]
    A = (K + mem.theta * sp.identity(idx.size)).tocsc()
    lu = spla.splu(A, permc_spec="NATURAL")
    dF = lu.solve(-g[idx])
    if len(mem):
        W, Minv = mem.compact()
        WF = W[idx]
        AinvW = lu.solve(WF)
        dF = dF + AinvW @ np.linalg.solve(Minv - WF.T @ AinvW, WF.T @ dF)
    d = np.zeros_like(g)
    d[idx] = dF
    return d


def inner_minimize(fun, z_start, lower, upper, tol, max_iter=2000, memory=10, structure=None):
    """Projected quasi-Newton descent with Armijo backtracking on the projection arc.

    Parameters
    ----------
    fun : callable
        ``fun(z) -> (value, gradient)``.
    z_start : array_like
        Starting point, projected onto the box first.
    lower, upper : ndarray
        Box bounds; infinite entries are allowed.
    tol : float
        Stop once the projected-gradient infinity norm is at most ``tol``.
    max_iter : int
        Iteration budget.
    memory : int or CurvatureMemory
        Number of stored pairs, or a memory object to reuse across calls.
    structure : object, optional
        Supplies ``known_hessian(z)`` (sparse, positive semidefinite) and
        ``curvature_pair(z_old, z_new)`` returning the gradient change of the
        remaining part of the function.  Only that remainder is then
        approximated by the pairs.

    Returns
    -------
    (z, pg_norm, iters)

    Raises
    ------
    InnerFailure
        If the backtracking step underflows.
    """
    z = np.clip(np.asarray(z_start, dtype=float), lower, upper)
    mem = memory if isinstance(memory, CurvatureMemory) else CurvatureMemory(memory)
    f, g = fun(z)
    it = 0
    while True:
        pg = projected_gradient(z, g, lower, upper)
        pg_norm = float(np.max(np.abs(pg))) if pg.size else 0.0
        if pg_norm <= tol or it >= max_iter:
            return z, pg_norm, it
        free = pg != 0.0
        if structure is not None:
            d = _structured_direction(g, free, structure.known_hessian(z), mem)
            alpha = 1.0
        else:
            d = -mem.inverse_apply(np.where(free, g, 0.0))
            d[~free] = 0.0
            alpha = 1.0 if len(mem) else min(1.0, 1.0 / pg_norm)
        if not g.dot(d) < 0:
            mem.clear()
            d = -pg
            alpha = min(1.0, 1.0 / pg_norm)
        # decreases below a few ulps of |f| cannot be resolved; tolerate them
        slack = 16 * np.finfo(float).eps * abs(f)
        while True:
            z_new = np.clip(z + alpha * d, lower, upper)
            step = z_new - z
            decrease = g.dot(step)
            if decrease < 0:
                f_new, g_new = fun(z_new)
                if np.isfinite(f_new) and f_new <= f + 1e-4 * decrease + slack:
                    break
            alpha *= 0.5
            if alpha < 1e-20:
                raise InnerFailure("line search step underflow", z, pg_norm, it)
        if structure is None and np.array_equal(z_new, z + alpha * d):
            # secant step length along the accepted (unclipped) step; exact on
            # quadratics, which restores the finite termination of exact searches
            curv = (g_new - g).dot(step)
            scale = -decrease / curv if curv > 0 else 1.0
            if abs(scale - 1.0) > 1e-8:
                z_try = np.clip(z + scale * step, lower, upper)
                if np.array_equal(z_try, z + scale * step):
                    f_try, g_try = fun(z_try)
                    if np.isfinite(f_try) and f_try <= f_new:
                        z_new, f_new, g_new, step = z_try, f_try, g_try, z_try - z
        y = g_new - g if structure is None else structure.curvature_pair(z, z_new)
        mem.update(step, y)
        z, f, g = z_new, f_new, g_new
        it += 1


def kkt_residuals(z, lam, problem: NlpProblem):
    """``(|c(z)|_inf, |P_T(grad f + J^T lam)|_inf)``."""
    z = np.asarray(z, dtype=float)
    c = problem.defects(z)
    g = problem.objective_gradient(z) + problem.jacobian(z).T @ np.asarray(lam, dtype=float)
    pg = projected_gradient(z, g, problem.lower, problem.upper)
    return float(np.max(np.abs(c))), float(np.max(np.abs(pg)))


@dataclass(eq=False)
class SolveReport:
    status: Status
    objective: float
    outer_iters: int
    inner_iters_total: int
    feas_inf_norm: float
    kkt_inf_norm: float
    wall_time: float
    z: np.ndarray
    multipliers: np.ndarray
    trajectory: Trajectory | None
    options: SolverOptions = field(default_factory=SolverOptions)
    note: str = ""

    @property
    def converged(self) -> bool:
        return self.status is Status.CONVERGED

    def summary(self, problem: NlpProblem) -> dict:
        """JSON-serializable run summary."""
        return {
            "problem": problem.describe() if hasattr(problem, "describe") else {},
            "options": asdict(self.options),
            "status": self.status.value,
            "objective": self.objective,
            "outer_iters": self.outer_iters,
            "inner_iters_total": self.inner_iters_total,
            "feas_inf_norm": self.feas_inf_norm,
            "kkt_inf_norm": self.kkt_inf_norm,
            "wall_time_s": round(self.wall_time, 3),
            "note": self.note,
        }


def initial_guess(problem: NlpProblem, controls=None) -> np.ndarray:
    """Pack the trajectory simulated under ``controls`` (default zero)."""
    if controls is None:
        controls = zero_controls(problem.grid, problem.scheme)
    traj = simulate(problem.grid, controls, problem.scheme, problem.x_init, problem.params)
    return traj.pack()


class _AugmentedLagrangian:
    """Merit function of one outer iteration plus its Hessian structure."""

    def __init__(self, problem: NlpProblem, lam, rho):
        self.problem = problem
        self.lam = lam
        self.rho = rho
        self._last = None

    def _eval(self, z):
        if self._last is not None and self._last[0] is z:
            return self._last[1], self._last[2]
        c = self.problem.defects(z)
        J = self.problem.jacobian(z)
        self._prev, self._last = self._last, (z, c, J)
        return c, J

    def _jac(self, z):
        for hit in (self._last, getattr(self, "_prev", None)):
            if hit is not None and hit[0] is z:
                return hit[2]
        return self.problem.jacobian(z)

    def __call__(self, z):
        p = self.problem
        c, J = self._eval(z)
        val = p.objective(z) + self.lam.dot(c) + 0.5 * self.rho * c.dot(c)
        return val, p.objective_gradient(z) + J.T @ (self.lam + self.rho * c)

    def known_hessian(self, z):
        J = self._jac(z)
        return self.rho * (J.T @ J)

    def curvature_pair(self, z_old, z_new):
        # Lagrangian gradient change at the new multiplier estimate
        p = self.problem
        c_new, J_new = self._eval(z_new)
        w = self.lam + self.rho * c_new
        return (p.objective_gradient(z_new) - p.objective_gradient(z_old)
                + (J_new - self._jac(z_old)).T @ w)


def solve(problem, z0=None, opts: SolverOptions = SolverOptions()) -> SolveReport:
    """Drive ``problem`` to a KKT point.

    ``problem`` is an :class:`NlpProblem` or any object with ``lower``,
    ``upper``, ``n_cons`` and the methods ``objective``,
    ``objective_gradient``, ``defects`` and ``jacobian``.  ``z0`` defaults to
    the packed zero-control simulation (transcription problems only) and is
    projected onto the bounds.  Multipliers start at zero.
    """
    start = time.monotonic()
    lower, upper = problem.lower, problem.upper
    if z0 is None:
        z0 = initial_guess(problem)
    z = np.clip(np.asarray(z0, dtype=float), lower, upper)
    lam = np.zeros(problem.n_cons)
    rho = opts.penalty_init
    inner_tol = max(opts.inner_tol_init, opts.tol_opt / 10)
    mem = CurvatureMemory(opts.lbfgs_memory, theta=opts.curvature_init)

    inner_total = 0
    prev_feas = np.inf
    feas = kkt = np.inf
    status, note = Status.MAX_ITERATIONS, ""
    outer = 0
    for outer in range(1, opts.max_outer + 1):
        merit = _AugmentedLagrangian(problem, lam, rho)
        if not opts.structured:
            mem.clear()
        try:
            z, pg_norm, iters = inner_minimize(
                merit, z, lower, upper, inner_tol, opts.max_inner, mem,
                merit if opts.structured else None)
            stalled = False
        except InnerFailure as exc:
            z, pg_norm, iters = exc.z, exc.pg_norm, exc.iters
            stalled = True
        inner_total += iters
        lam = lam + rho * problem.defects(z)
        feas, kkt = kkt_residuals(z, lam, problem)
        logger.debug("outer %d: rho=%.1e inner=%d pg=%.2e feas=%.2e kkt=%.2e obj=%.6e",
                     outer, rho, iters, pg_norm, feas, kkt, problem.objective(z))
        if feas <= opts.tol_feas and kkt <= opts.tol_opt:
            status, note = Status.CONVERGED, ""
            break
        if stalled:
            # near a KKT point a stall is usually roundoff; keep iterating
            if not (feas <= 10 * opts.tol_feas and kkt <= 10 * opts.tol_opt):
                status, note = Status.INNER_FAILURE, f"line search stalled at outer iteration {outer}"
                break
            mem.clear()
            note = "line search stalled within 10x tolerances"
        if feas > opts.feas_decrease * prev_feas:
            rho *= opts.penalty_growth
        prev_feas = feas
        inner_tol = max(inner_tol * opts.inner_tol_factor, opts.tol_opt / 10)
    wall = time.monotonic() - start
    trajectory = None
    if isinstance(problem, NlpProblem):
        _, U = unpack(z, problem.layout)
        trajectory = Trajectory(problem.grid, problem.scheme, problem.all_states(z), U)
    return SolveReport(
        status=status,
        objective=problem.objective(z),
        outer_iters=outer,
        inner_iters_total=inner_total,
        feas_inf_norm=feas,
        kkt_inf_norm=kkt,
        wall_time=wall,
        z=z,
        multipliers=lam,
        trajectory=trajectory,
        options=opts,
        note=note,
    )
