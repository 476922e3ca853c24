"""Forward integration of the augmented dynamics under a control schedule."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .model import N_CONTROL, N_STATE, ModelParams, dynamics, jacobian_x
from .transcription import Grid, Layout, Scheme, pack


class NonConvergence(RuntimeError):
    """Newton iteration of an implicit step did not reach tolerance."""


@dataclass(frozen=True)
class NewtonOptions:
    tol: float = 1e-12
    max_iter: int = 25


def step_euler(t, x, u, h, params: ModelParams) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    return x + h * dynamics(t, x, u, params)


def step_trapezoidal(t, x, u_now, u_next, h, params: ModelParams,
                     newton_opts: NewtonOptions = NewtonOptions(), rhs=None, rhs_jac=None):
    """One implicit trapezoidal step, solved by damped Newton.

    ``rhs``/``rhs_jac`` replace the dengue field and its state Jacobian, with
    signatures ``rhs(t, x, u)`` and ``rhs_jac(t, x, u)``.
    """
    if rhs is None:
        rhs = lambda t_, x_, u_: dynamics(t_, x_, u_, params)  # noqa: E731
        rhs_jac = lambda t_, x_, u_: jacobian_x(t_, x_, u_, params)  # noqa: E731
    x = np.asarray(x, dtype=float)
    t_next = t + h
    base = x + 0.5 * h * rhs(t, x, u_now)

    def residual(y):
        return y - base - 0.5 * h * rhs(t_next, y, u_next)

    # Euler predictor
    y = x + h * rhs(t, x, u_now)
    r = residual(y)
    rnorm = np.max(np.abs(r))
    eye = np.eye(x.shape[-1])
    for _ in range(newton_opts.max_iter):
        if rnorm <= newton_opts.tol:
            return y
        J = eye - 0.5 * h * rhs_jac(t_next, y, u_next)
        dy = np.linalg.solve(J, -r)
        lam = 1.0
        while True:
            y_try = y + lam * dy
            r_try = residual(y_try)
            n_try = np.max(np.abs(r_try))
            if n_try < rnorm or lam < 1e-4:
                break
            lam *= 0.5
        y, r, rnorm = y_try, r_try, n_try
    if rnorm <= newton_opts.tol:
        return y
    raise NonConvergence(f"trapezoidal Newton stalled at t={t:g} with residual {rnorm:.3e}")


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Node states ``0..N`` and the control nodes of the scheme."""

    grid: Grid
    scheme: Scheme
    states: np.ndarray
    controls: np.ndarray

    @property
    def times(self) -> np.ndarray:
        return self.grid.times

    @property
    def final_cost(self) -> float:
        return float(self.states[-1, 4])

    @property
    def layout(self) -> Layout:
        return Layout(self.scheme, self.grid.n_steps)

    def pack(self) -> np.ndarray:
        return pack(self.states[1:], self.controls, self.layout)

    def to_csv(self, path) -> None:
        """Write ``t,x1,...,x5,u1,u2``; blank controls where none exist."""
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["t", "x1", "x2", "x3", "x4", "x5", "u1", "u2"])
            for n, t in enumerate(self.times):
                row = [repr(float(t))] + [repr(float(v)) for v in self.states[n]]
                if n < len(self.controls):
                    row += [repr(float(v)) for v in self.controls[n]]
                else:
                    row += ["", ""]
                w.writerow(row)


def read_trajectory_csv(path):
    """Load ``(times, states, controls)`` from a trajectory CSV."""
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    times = np.array([float(r["t"]) for r in rows])
    states = np.array([[float(r[f"x{i}"]) for i in range(1, 6)] for r in rows])
    controls = np.array([[float(r["u1"]), float(r["u2"])] for r in rows if r["u1"] != ""])
    return times, states, controls


def zero_controls(grid: Grid, scheme) -> np.ndarray:
    scheme = Scheme.parse(scheme)
    return np.zeros((grid.n_steps + scheme.n_control_nodes_extra, N_CONTROL))


def simulate(grid: Grid, controls, scheme, x_init, params: ModelParams,
             newton_opts: NewtonOptions = NewtonOptions()) -> Trajectory:
    """Integrate node by node with the scheme's own update rule."""
    scheme = Scheme.parse(scheme)
    controls = np.asarray(controls, dtype=float)
    n = grid.n_steps
    expected = (n + scheme.n_control_nodes_extra, N_CONTROL)
    if controls.shape != expected:
        raise ValueError(f"{scheme.value} schedule needs shape {expected}, got {controls.shape}")
    x_init = np.asarray(x_init, dtype=float)
    if x_init.shape == (N_STATE - 1,):
        x_init = np.append(x_init, 0.0)
    h = grid.h
    t = grid.times
    X = np.empty((n + 1, N_STATE))
    X[0] = x_init
    if scheme is Scheme.EULER:
        for k in range(n):
            X[k + 1] = step_euler(t[k], X[k], controls[k], h, params)
    else:
        for k in range(n):
            X[k + 1] = step_trapezoidal(t[k], X[k], controls[k], controls[k + 1], h, params,
                                        newton_opts)
    return Trajectory(grid, scheme, X, controls.copy())
