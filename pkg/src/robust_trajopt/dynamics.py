"""Continuous-time models, explicit Euler discretisation and their Jacobians.

All model functions broadcast over leading axes: ``x`` may have shape
``(..., n_x)`` and ``u`` shape ``(..., n_u)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from types import MappingProxyType
from typing import Callable, Mapping, NamedTuple

import numpy as np

from .errors import ConfigError, NumericFailure


class JacobianPair(NamedTuple):
    A: np.ndarray
    B: np.ndarray


@dataclass(frozen=True, eq=False)
class DynamicsModel:
    """A vector field ``xdot = f(x, u)`` with analytic Jacobians and box sets."""

    name: str
    n_x: int
    n_u: int
    params: Mapping[str, float]
    state_bounds: np.ndarray
    control_bounds: np.ndarray
    field_fn: Callable = field(repr=False)
    jacobian_fn: Callable = field(repr=False)

    def __post_init__(self):
        object.__setattr__(self, "params", MappingProxyType(dict(self.params)))
        for attr, n in (("state_bounds", self.n_x), ("control_bounds", self.n_u)):
            b = np.array(getattr(self, attr), dtype=float)
            if b.shape != (n, 2):
                raise ConfigError(f"{attr} must have shape ({n}, 2), got {b.shape}")
            if np.any(b[:, 0] > b[:, 1]):
                raise ConfigError(f"{attr}: lower bound exceeds upper bound")
            b.setflags(write=False)
            object.__setattr__(self, attr, b)

    def vector_field(self, x, u):
        x, u = self._check(x, u)
        return self.field_fn(self.params, x, u)

    def jacobians(self, x, u):
        """Continuous-time Jacobians ``(df/dx, df/du)``."""
        x, u = self._check(x, u)
        return self.jacobian_fn(self.params, x, u)

    def clamp_control(self, u):
        return np.clip(u, self.control_bounds[:, 0], self.control_bounds[:, 1])

    def control_in_bounds(self, u):
        u = np.asarray(u, dtype=float)
        lo, hi = self.control_bounds[:, 0], self.control_bounds[:, 1]
        return bool(np.all((u >= lo) & (u <= hi)))

    def with_params(self, **overrides) -> "DynamicsModel":
        """Copy of the model with some physical parameters replaced."""
        unknown = set(overrides) - set(self.params)
        if unknown:
            raise ConfigError(f"unknown parameters for {self.name}: {sorted(unknown)}")
        factory = MODEL_FACTORIES[self.name]
        return factory({**self.params, **overrides},
                       state_bounds=self.state_bounds,
                       control_bounds=self.control_bounds)

    def _check(self, x, u):
        x = np.asarray(x, dtype=float)
        u = np.asarray(u, dtype=float)
        if x.shape[-1:] != (self.n_x,):
            raise ValueError(f"{self.name}: state has trailing size {x.shape[-1:]}, expected {self.n_x}")
        if u.shape[-1:] != (self.n_u,):
            raise ValueError(f"{self.name}: control has trailing size {u.shape[-1:]}, expected {self.n_u}")
        return x, u


def step_euler(model: DynamicsModel, x, u, dt: float) -> np.ndarray:
    """One explicit Euler step ``x + dt * f(x, u)``."""
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    x = np.asarray(x, dtype=float)
    with np.errstate(over="ignore", invalid="ignore"):
        x_next = x + dt * model.vector_field(x, u)
    if not np.all(np.isfinite(x_next)):
        bad = np.argwhere(~np.isfinite(x_next))[0]
        raise NumericFailure("non-finite state after Euler step", component=int(bad[-1]))
    return x_next


def discrete_jacobians(model: DynamicsModel, x, u, dt: float) -> JacobianPair:
    """``A = I + dt * df/dx`` and ``B = dt * df/du`` at ``(x, u)``."""
    fx, fu = model.jacobians(x, u)
    return JacobianPair(np.eye(model.n_x) + dt * fx, dt * fu)


def finite_diff_jacobians(model: DynamicsModel, x, u, dt: float, h: float = 1e-6) -> JacobianPair:
    """Central-difference approximation of :func:`discrete_jacobians`."""
    if not h > 0:
        raise ValueError("perturbation size must be positive")
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    batch = np.broadcast_shapes(x.shape[:-1], u.shape[:-1])
    A = np.empty(batch + (model.n_x, model.n_x))
    B = np.empty(batch + (model.n_x, model.n_u))
    for j in range(model.n_x):
        e = np.zeros(model.n_x)
        e[j] = h
        A[..., :, j] = (step_euler(model, x + e, u, dt) - step_euler(model, x - e, u, dt)) / (2 * h)
    for j in range(model.n_u):
        e = np.zeros(model.n_u)
        e[j] = h
        B[..., :, j] = (step_euler(model, x, u + e, dt) - step_euler(model, x, u - e, dt)) / (2 * h)
    return JacobianPair(A, B)


def _bounds(value, n, default):
    if value is None:
        return np.array([default] * n, dtype=float)
    return np.array(value, dtype=float).reshape(n, 2)


_FREE = (-np.inf, np.inf)


# --- pendulum: I*thdd + b*thd + m*g*l*sin(th) = u ---------------------------

PENDULUM_DEFAULTS = {"m": 1.0, "l": 1.0, "b": 0.1, "g": 9.81}
PENDULUM_CONTROL_LIMIT = 1.7


def _pendulum_field(p, x, u):
    th, thd = x[..., 0], x[..., 1]
    thdd = (u[..., 0] - p["b"] * thd - p["m"] * p["g"] * p["l"] * np.sin(th)) / p["I"]
    return np.stack(np.broadcast_arrays(thd, thdd), axis=-1)


def _pendulum_jac(p, x, u):
    th = x[..., 0]
    batch = np.broadcast_shapes(x.shape[:-1], u.shape[:-1])
    fx = np.zeros(batch + (2, 2))
    fu = np.zeros(batch + (2, 1))
    fx[..., 0, 1] = 1.0
    fx[..., 1, 0] = -p["m"] * p["g"] * p["l"] * np.cos(th) / p["I"]
    fx[..., 1, 1] = -p["b"] / p["I"]
    fu[..., 1, 0] = 1.0 / p["I"]
    return fx, fu


def make_pendulum(params: Mapping[str, float] | None = None, *,
                  state_bounds=None, control_bounds=None) -> DynamicsModel:
    """Damped torque-limited pendulum, state ``(theta, theta_dot)``.

    ``I`` defaults to ``m * l**2``. Control is bounded to ``[-1.7, 1.7]``
    unless ``control_bounds`` says otherwise.
    """
    p = dict(PENDULUM_DEFAULTS)
    p.update(params or {})
    unknown = set(p) - {"m", "l", "b", "g", "I"}
    if unknown:
        raise ConfigError(f"unknown pendulum parameters: {sorted(unknown)}")
    p.setdefault("I", p["m"] * p["l"] ** 2)
    errors = [f"pendulum parameter {k} must be positive, got {p[k]}"
              for k in ("m", "l", "g", "I") if not p[k] > 0]
    if not p["b"] >= 0:
        errors.append(f"pendulum damping b must be nonnegative, got {p['b']}")
    if errors:
        raise ConfigError(errors)
    lim = PENDULUM_CONTROL_LIMIT
    return DynamicsModel(
        name="pendulum", n_x=2, n_u=1, params={k: float(v) for k, v in p.items()},
        state_bounds=_bounds(state_bounds, 2, _FREE),
        control_bounds=_bounds(control_bounds, 1, (-lim, lim)),
        field_fn=_pendulum_field, jacobian_fn=_pendulum_jac,
    )


# --- ball and beam -------------------------------------------------------------
# Ball: xdd = (m x thd^2 - b1 xd - b2 m g cos(th) - m g sin(th)) / (I/r^2 + m).
# Beam: position servo with time constant tau, thdd = (u - th)/tau^2 - 2 thd/tau.

BALLBEAM_DEFAULTS = {"m": 0.05, "r": 0.01, "b1": 0.1, "b2": 0.01, "g": 9.81, "tau": 0.1}


def _ballbeam_field(p, x, u):
    pos, vel, th, thd = (x[..., i] for i in range(4))
    m, g = p["m"], p["g"]
    denom = p["I"] / p["r"] ** 2 + m
    xdd = (m * pos * thd ** 2 - p["b1"] * vel - p["b2"] * m * g * np.cos(th)
           - m * g * np.sin(th)) / denom
    thdd = (u[..., 0] - th) / p["tau"] ** 2 - 2.0 * thd / p["tau"]
    return np.stack(np.broadcast_arrays(vel, xdd, thd, thdd), axis=-1)


def _ballbeam_jac(p, x, u):
    pos, th, thd = x[..., 0], x[..., 2], x[..., 3]
    m, g, tau = p["m"], p["g"], p["tau"]
    denom = p["I"] / p["r"] ** 2 + m
    batch = np.broadcast_shapes(x.shape[:-1], u.shape[:-1])
    fx = np.zeros(batch + (4, 4))
    fu = np.zeros(batch + (4, 1))
    fx[..., 0, 1] = 1.0
    fx[..., 1, 0] = m * thd ** 2 / denom
    fx[..., 1, 1] = -p["b1"] / denom
    fx[..., 1, 2] = (p["b2"] * m * g * np.sin(th) - m * g * np.cos(th)) / denom
    fx[..., 1, 3] = 2.0 * m * pos * thd / denom
    fx[..., 2, 3] = 1.0
    fx[..., 3, 2] = -1.0 / tau ** 2
    fx[..., 3, 3] = -2.0 / tau
    fu[..., 3, 0] = 1.0 / tau ** 2
    return fx, fu


def make_ballbeam(params: Mapping[str, float] | None = None, *,
                  state_bounds=None, control_bounds=None) -> DynamicsModel:
    """Ball on a servo-driven beam, state ``(x, x_dot, theta, theta_dot)``.

    The control is the commanded beam angle. ``I`` defaults to a solid
    sphere, ``(2/5) m r**2``. Friction terms follow the printed model,
    including the dry-friction term without a velocity sign.
    """
    p = dict(BALLBEAM_DEFAULTS)
    p.update(params or {})
    unknown = set(p) - set(BALLBEAM_DEFAULTS) - {"I"}
    if unknown:
        raise ConfigError(f"unknown ball-and-beam parameters: {sorted(unknown)}")
    p.setdefault("I", 0.4 * p["m"] * p["r"] ** 2)
    errors = [f"ball-and-beam parameter {k} must be positive, got {p[k]}"
              for k in ("m", "r", "g", "tau") if not p[k] > 0]
    errors += [f"ball-and-beam parameter {k} must be nonnegative, got {p[k]}"
               for k in ("I", "b1", "b2") if not p[k] >= 0]
    if errors:
        raise ConfigError(errors)
    return DynamicsModel(
        name="ballbeam", n_x=4, n_u=1, params={k: float(v) for k, v in p.items()},
        state_bounds=_bounds(state_bounds, 4, _FREE),
        control_bounds=_bounds(control_bounds, 1, (-0.5, 0.5)),
        field_fn=_ballbeam_field, jacobian_fn=_ballbeam_jac,
    )


# --- double integrator -----------------------------------------------------------

def _di_field(p, x, u):
    return np.stack(np.broadcast_arrays(x[..., 1], u[..., 0]), axis=-1)


def _di_jac(p, x, u):
    batch = np.broadcast_shapes(x.shape[:-1], u.shape[:-1])
    fx = np.zeros(batch + (2, 2))
    fu = np.zeros(batch + (2, 1))
    fx[..., 0, 1] = 1.0
    fu[..., 1, 0] = 1.0
    return fx, fu


def make_double_integrator(params: Mapping[str, float] | None = None, *,
                           state_bounds=None, control_bounds=None) -> DynamicsModel:
    if params:
        raise ConfigError(f"double integrator takes no parameters, got {sorted(params)}")
    return DynamicsModel(
        name="double_integrator", n_x=2, n_u=1, params={},
        state_bounds=_bounds(state_bounds, 2, _FREE),
        control_bounds=_bounds(control_bounds, 1, _FREE),
        field_fn=_di_field, jacobian_fn=_di_jac,
    )


MODEL_FACTORIES = {
    "pendulum": make_pendulum,
    "ballbeam": make_ballbeam,
    "double_integrator": make_double_integrator,
}


def make_model(name: str, params=None, **bounds) -> DynamicsModel:
    try:
        factory = MODEL_FACTORIES[name]
    except KeyError:
        raise ConfigError(f"unknown model {name!r}; choose from {sorted(MODEL_FACTORIES)}") from None
    return factory(params, **bounds)
