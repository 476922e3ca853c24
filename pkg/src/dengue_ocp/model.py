"""Dengue vector/host dynamics with goodwill and an accumulated-cost state.

State layout is ``(x1, x2, x3, x4, x5)``: mosquito density, virus-carrying
mosquito density, infected persons, goodwill, and accumulated cost.  Controls
are ``(u1, u2)``: insecticide and education spending rates.

Every function broadcasts over leading axes, so ``x`` may be a single state of
shape ``(5,)`` or a stack of node states of shape ``(n, 5)`` with ``t`` of
shape ``(n,)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

N_STATE = 5
N_CONTROL = 2


@dataclass(frozen=True)
class ModelParams:
    """Epidemic and cost parameters, in normalized weekly units."""

    alpha_r: float = 0.20
    alpha_m: float = 0.18
    beta: float = 0.3
    eta: float = 0.15
    mu: float = 0.1
    rho: float = 0.1
    theta: float = 0.05
    tau: float = 0.1
    phi: float = 0.0
    omega: float = 2.0 * math.pi / 52.0
    p_total: float = 1.0
    gamma_d: float = 1.0
    gamma_f: float = 0.4
    gamma_e: float = 0.8

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if not math.isfinite(v):
                raise ValueError(f"{f.name} must be finite, got {v!r}")
        for name in ("alpha_r", "alpha_m", "beta", "eta", "rho", "theta", "tau",
                     "gamma_d", "gamma_f", "gamma_e"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if not 0.0 <= self.mu <= 1.0:
            raise ValueError("mu must lie in [0, 1]")
        if self.p_total <= 0:
            raise ValueError("p_total must be > 0")

    def scale_costs(self, c: float) -> ModelParams:
        """Copy with all three cost weights multiplied by ``c``."""
        return replace(self, gamma_d=c * self.gamma_d, gamma_f=c * self.gamma_f,
                       gamma_e=c * self.gamma_e)


DEFAULT_X0 = (1.0, 0.12, 0.004, 0.05)


@dataclass(frozen=True)
class Scenario:
    """Parameters plus initial condition and horizon."""

    params: ModelParams = field(default_factory=ModelParams)
    x0: tuple = DEFAULT_X0
    t_final: float = 52.0

    @property
    def x_init(self) -> np.ndarray:
        """Initial augmented state; accumulated cost starts at zero."""
        return np.array([*self.x0, 0.0])


_PARAM_KEYS = tuple(f.name for f in fields(ModelParams))
_INIT_KEYS = ("x1_0", "x2_0", "x3_0", "x4_0")
CONFIG_KEYS = _PARAM_KEYS + _INIT_KEYS + ("t_final",)


def parse_config_text(text: str) -> dict:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected key=value, got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in CONFIG_KEYS:
            raise ValueError(f"line {lineno}: unknown key {key!r}")
        try:
            out[key] = float(value)
        except ValueError:
            raise ValueError(f"line {lineno}: {key} is not a number: {value!r}") from None
    return out


def scenario_from_mapping(values: dict) -> Scenario:
    """Build a scenario; missing keys keep the default values."""
    base = Scenario()
    params = ModelParams(**{k: v for k, v in values.items() if k in _PARAM_KEYS})
    x0 = tuple(values.get(k, d) for k, d in zip(_INIT_KEYS, base.x0))
    t_final = values.get("t_final", base.t_final)
    if not t_final > 0:
        raise ValueError("t_final must be > 0")
    return Scenario(params=params, x0=x0, t_final=t_final)


def read_scenario(path) -> Scenario:
    return scenario_from_mapping(parse_config_text(Path(path).read_text()))


def seasonal_growth(t, x4, params: ModelParams):
    """Net per-capita mosquito growth rate, including goodwill suppression."""
    p = params
    return p.alpha_r * (1.0 - p.mu * np.sin(p.omega * t + p.phi)) - p.alpha_m - x4


def cost_integrand(x, u, params: ModelParams):
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    p = params
    return p.gamma_d * x[..., 2] ** 2 + p.gamma_f * u[..., 0] ** 2 + p.gamma_e * u[..., 1] ** 2


def dynamics(t, x, u, params: ModelParams) -> np.ndarray:
    """Time derivative of the augmented state."""
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    p = params
    x1, x2, x3, x4 = x[..., 0], x[..., 1], x[..., 2], x[..., 3]
    u1, u2 = u[..., 0], u[..., 1]
    g = seasonal_growth(t, x4, p)
    return np.stack(
        [
            g * x1 - u1,
            g * x2 + p.beta * (x1 - x2) * x3 - u1,
            -p.eta * x3 + p.rho * x2 * (p.p_total - x3),
            -p.tau * x4 + p.theta * x3 + u2,
            cost_integrand(x, u, p),
        ],
        axis=-1,
    )


# (row, col) pairs that can be nonzero in each Jacobian
JX_PATTERN = ((0, 0), (0, 3),
              (1, 0), (1, 1), (1, 2), (1, 3),
              (2, 1), (2, 2),
              (3, 2), (3, 3),
              (4, 2))
JU_PATTERN = ((0, 0), (1, 0), (3, 1), (4, 0), (4, 1))


def jacobian_x(t, x, u, params: ModelParams) -> np.ndarray:
    """``d dynamics / d x``, shape ``(..., 5, 5)``."""
    x = np.asarray(x, dtype=float)
    p = params
    x1, x2, x3, x4 = x[..., 0], x[..., 1], x[..., 2], x[..., 3]
    g = seasonal_growth(t, x4, p)
    J = np.zeros(np.broadcast_shapes(np.shape(g), x.shape[:-1]) + (N_STATE, N_STATE))
    J[..., 0, 0] = g
    J[..., 0, 3] = -x1
    J[..., 1, 0] = p.beta * x3
    J[..., 1, 1] = g - p.beta * x3
    J[..., 1, 2] = p.beta * (x1 - x2)
    J[..., 1, 3] = -x2
    J[..., 2, 1] = p.rho * (p.p_total - x3)
    J[..., 2, 2] = -p.eta - p.rho * x2
    J[..., 3, 2] = p.theta
    J[..., 3, 3] = -p.tau
    J[..., 4, 2] = 2.0 * p.gamma_d * x3
    return J


def jacobian_u(t, x, u, params: ModelParams) -> np.ndarray:
    """``d dynamics / d u``, shape ``(..., 5, 2)``.  Affine in ``u``."""
    u = np.asarray(u, dtype=float)
    p = params
    J = np.zeros(u.shape[:-1] + (N_STATE, N_CONTROL))
    J[..., 0, 0] = -1.0
    J[..., 1, 0] = -1.0
    J[..., 3, 1] = 1.0
    J[..., 4, 0] = 2.0 * p.gamma_f * u[..., 0]
    J[..., 4, 1] = 2.0 * p.gamma_e * u[..., 1]
    return J
