"""Transcription of the continuous control problem into a finite NLP.

Decision vector layout, both schemes interleave per node::

    Euler:        [x_1, u_0, x_2, u_1, ..., x_N, u_{N-1}]
    Trapezoidal:  [u_0, x_1, u_1, x_2, u_2, ..., x_N, u_N]

``x_0`` is the fixed initial condition and never a decision variable.  The
constraints are one 5-vector defect per interval,
``c_n = x_{n+1} - x_n - (increment of the scheme)``.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .model import (
    JU_PATTERN,
    JX_PATTERN,
    N_CONTROL,
    N_STATE,
    ModelParams,
    cost_integrand,
    dynamics,
    jacobian_u,
    jacobian_x,
)


class Scheme(str, enum.Enum):
    EULER = "euler"
    TRAPEZOIDAL = "trapezoidal"

    @classmethod
    def parse(cls, value) -> Scheme:
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            raise ValueError(f"unknown scheme {value!r}; expected 'euler' or 'trapezoidal'") from None

    @property
    def n_control_nodes_extra(self) -> int:
        # Euler has controls on nodes 0..N-1, trapezoidal on 0..N
        return 0 if self is Scheme.EULER else 1


@dataclass(frozen=True)
class Grid:
    """Uniform mesh ``t_n = n h`` on ``[0, t_final]``."""

    t_final: float
    h: float
    t0: float = field(default=0.0, init=False)

    def __post_init__(self):
        if not (self.h > 0 and self.t_final > 0):
            raise ValueError("h and t_final must be positive")
        n = round(self.t_final / self.h)
        if n < 1 or abs(n * self.h - self.t_final) > 1e-12 * self.t_final:
            raise ValueError(f"t_final={self.t_final} is not an integer multiple of h={self.h}")

    @property
    def n_steps(self) -> int:
        return round(self.t_final / self.h)

    @property
    def times(self) -> np.ndarray:
        return self.h * np.arange(self.n_steps + 1)


@dataclass(frozen=True)
class Layout:
    """Index maps from node quantities into the flat decision vector."""

    scheme: Scheme
    n_steps: int

    @property
    def n_control_nodes(self) -> int:
        return self.n_steps + self.scheme.n_control_nodes_extra

    @property
    def n_vars(self) -> int:
        return N_STATE * self.n_steps + N_CONTROL * self.n_control_nodes

    @property
    def state_index(self) -> np.ndarray:
        """``(N, 5)`` indices of ``x_1 .. x_N``."""
        stride = N_STATE + N_CONTROL
        start = N_CONTROL * self.scheme.n_control_nodes_extra
        base = start + stride * np.arange(self.n_steps)
        return base[:, None] + np.arange(N_STATE)

    @property
    def control_index(self) -> np.ndarray:
        """``(M, 2)`` indices of the control nodes, in node order."""
        stride = N_STATE + N_CONTROL
        if self.scheme is Scheme.EULER:
            base = N_STATE + stride * np.arange(self.n_steps)
        else:
            base = np.concatenate([[0], N_CONTROL + N_STATE + stride * np.arange(self.n_steps)])
        return base[:, None] + np.arange(N_CONTROL)

    def to_dict(self) -> dict:
        if self.scheme is Scheme.EULER:
            order = "[x_1, u_0, x_2, u_1, ..., x_N, u_{N-1}]"
        else:
            order = "[u_0, x_1, u_1, ..., x_N, u_N]"
        return {
            "order": order,
            "n_steps": self.n_steps,
            "n_state_nodes": self.n_steps,
            "n_control_nodes": self.n_control_nodes,
            "first_state_offset": int(self.state_index[0, 0]),
            "first_control_offset": int(self.control_index[0, 0]),
            "node_stride": N_STATE + N_CONTROL,
        }


def pack(states, controls, layout: Layout) -> np.ndarray:
    """Flatten node states ``x_1..x_N`` and control nodes into one vector."""
    states = np.asarray(states, dtype=float)
    controls = np.asarray(controls, dtype=float)
    if states.shape != (layout.n_steps, N_STATE):
        raise ValueError(f"states must have shape {(layout.n_steps, N_STATE)}, got {states.shape}")
    if controls.shape != (layout.n_control_nodes, N_CONTROL):
        raise ValueError(
            f"controls must have shape {(layout.n_control_nodes, N_CONTROL)}, got {controls.shape}")
    z = np.empty(layout.n_vars)
    z[layout.state_index] = states
    z[layout.control_index] = controls
    return z


def unpack(z, layout: Layout):
    """Inverse of :func:`pack`; returns ``(states, controls)`` copies."""
    z = np.asarray(z, dtype=float)
    if z.shape != (layout.n_vars,):
        raise ValueError(f"decision vector must have length {layout.n_vars}, got {z.shape}")
    return z[layout.state_index], z[layout.control_index]


@dataclass(frozen=True, eq=False)
class NlpProblem:
    grid: Grid
    scheme: Scheme
    params: ModelParams
    x_init: np.ndarray
    layout: Layout
    lower: np.ndarray
    upper: np.ndarray

    @property
    def n_vars(self) -> int:
        return self.layout.n_vars

    @property
    def n_cons(self) -> int:
        return N_STATE * self.grid.n_steps

    def describe(self) -> dict:
        ci = self.layout.control_index
        return {
            "scheme": self.scheme.value,
            "h": self.grid.h,
            "t_final": self.grid.t_final,
            "n_vars": self.n_vars,
            "n_cons": self.n_cons,
            "control_lower": self.lower[ci[0]].tolist(),
            "control_upper": [None if np.isinf(v) else v for v in self.upper[ci[0]].tolist()],
            "layout": self.layout.to_dict(),
        }

    # evaluation helpers -------------------------------------------------
    def all_states(self, z) -> np.ndarray:
        """States at nodes ``0..N`` including the fixed initial one."""
        states, _ = unpack(z, self.layout)
        return np.vstack([self.x_init, states])

    def defects(self, z):
        return defects(z, self)

    def jacobian(self, z):
        return defect_jacobian(z, self)

    def objective(self, z):
        return objective(z, self)

    def objective_gradient(self, z):
        return objective_gradient(z, self)


def build(grid: Grid, scheme, params: ModelParams, x_init,
          control_bounds=((0.0, 0.0), (np.inf, np.inf))) -> NlpProblem:
    """Assemble the NLP for one (grid, scheme) pair.

    States are free; controls are boxed by ``control_bounds = (lower, upper)``.
    """
    scheme = Scheme.parse(scheme)
    x_init = np.asarray(x_init, dtype=float)
    if x_init.shape == (N_STATE - 1,):
        x_init = np.append(x_init, 0.0)
    if x_init.shape != (N_STATE,) or x_init[4] != 0.0:
        raise ValueError("x_init must be a 5-vector with accumulated cost 0")
    lo_u, hi_u = (np.asarray(b, dtype=float) for b in control_bounds)
    if np.any(lo_u > hi_u):
        raise ValueError("control lower bound exceeds upper bound")
    layout = Layout(scheme, grid.n_steps)
    lower = np.full(layout.n_vars, -np.inf)
    upper = np.full(layout.n_vars, np.inf)
    lower[layout.control_index] = lo_u
    upper[layout.control_index] = hi_u
    return NlpProblem(grid, scheme, params, x_init, layout, lower, upper)


def defects(z, problem: NlpProblem) -> np.ndarray:
    """Flat residual vector of length ``n_cons``, interval-major."""
    p = problem
    X = p.all_states(z)
    _, U = unpack(z, p.layout)
    t = p.grid.times
    h = p.grid.h
    if p.scheme is Scheme.EULER:
        c = X[1:] - X[:-1] - h * dynamics(t[:-1], X[:-1], U, p.params)
    else:
        F = dynamics(t, X, U, p.params)
        c = X[1:] - X[:-1] - 0.5 * h * (F[:-1] + F[1:])
    return c.ravel()


def _pattern_eye_jx():
    return tuple(sorted(set(JX_PATTERN) | {(i, i) for i in range(N_STATE)}))


_EYE_JX = _pattern_eye_jx()
_EYE = tuple((i, i) for i in range(N_STATE))


def jacobian_nnz(problem: NlpProblem) -> int:
    """Structural nonzero count of :func:`defect_jacobian`.

    Per interval ``n`` the row block touches ``x_{n+1}``, ``x_n`` (``n >= 1``)
    and one (Euler) or two (trapezoidal) control nodes.
    """
    n = problem.grid.n_steps
    full, eye, ju = len(_EYE_JX), len(_EYE), len(JU_PATTERN)
    if problem.scheme is Scheme.EULER:
        return n * eye + (n - 1) * full + n * ju
    return n * full + (n - 1) * full + 2 * n * ju


def _blocks(block_rows, block_cols, pattern, values):
    """COO triplets for a stack of dense 5xk blocks restricted to ``pattern``."""
    r = np.array([a for a, _ in pattern])
    c = np.array([b for _, b in pattern])
    rows = (block_rows[:, None] + r).ravel()
    cols = (block_cols[:, None] + c).ravel()
    return rows, cols, values[:, r, c].ravel()


def defect_jacobian(z, problem: NlpProblem) -> sp.csr_matrix:
    """Sparse ``d defects / d z``, shape ``(n_cons, n_vars)``."""
    p = problem
    n = p.grid.n_steps
    h = p.grid.h
    t = p.grid.times
    X = p.all_states(z)
    _, U = unpack(z, p.layout)
    sidx = p.layout.state_index[:, 0]
    cidx = p.layout.control_index[:, 0]
    row0 = N_STATE * np.arange(n)
    eye = np.eye(N_STATE)
    parts = []
    if p.scheme is Scheme.EULER:
        Jx = jacobian_x(t[:-1], X[:-1], U, p.params)
        Ju = jacobian_u(t[:-1], X[:-1], U, p.params)
        parts.append(_blocks(row0, sidx, _EYE, np.broadcast_to(eye, (n, N_STATE, N_STATE))))
        parts.append(_blocks(row0[1:], sidx[:-1], _EYE_JX, -eye - h * Jx[1:]))
        parts.append(_blocks(row0, cidx, JU_PATTERN, -h * Ju))
    else:
        Jx = jacobian_x(t, X, U, p.params)
        Ju = jacobian_u(t, X, U, p.params)
        parts.append(_blocks(row0, sidx, _EYE_JX, eye - 0.5 * h * Jx[1:]))
        parts.append(_blocks(row0[1:], sidx[:-1], _EYE_JX, -eye - 0.5 * h * Jx[1:-1]))
        parts.append(_blocks(row0, cidx[:-1], JU_PATTERN, -0.5 * h * Ju[:-1]))
        parts.append(_blocks(row0, cidx[1:], JU_PATTERN, -0.5 * h * Ju[1:]))
    rows = np.concatenate([a for a, _, _ in parts])
    cols = np.concatenate([b for _, b, _ in parts])
    vals = np.concatenate([v for _, _, v in parts])
    return sp.csr_matrix((vals, (rows, cols)), shape=(p.n_cons, p.n_vars))


def _terminal_cost_index(problem: NlpProblem) -> int:
    return int(problem.layout.state_index[-1, 4])


def objective(z, problem: NlpProblem) -> float:
    """Accumulated cost at the final node."""
    return float(np.asarray(z)[_terminal_cost_index(problem)])


def objective_gradient(z, problem: NlpProblem) -> np.ndarray:
    g = np.zeros(problem.n_vars)
    g[_terminal_cost_index(problem)] = 1.0
    return g


def quadrature_cost(states, controls, grid: Grid, scheme, params: ModelParams) -> float:
    """Scheme-consistent quadrature of the running cost over the horizon.

    ``states`` holds nodes ``0..N``.  Euler uses left endpoints, the
    trapezoidal scheme averages both endpoints.
    """
    scheme = Scheme.parse(scheme)
    L = cost_integrand(states[: len(controls)], controls, params)
    if scheme is Scheme.EULER:
        return float(grid.h * np.sum(L))
    return float(0.5 * grid.h * np.sum(L[:-1] + L[1:]))
