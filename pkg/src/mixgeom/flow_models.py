"""Velocity-field catalogue: benchmark flows and simple test flows.

A flow is described by a :class:`FlowModel`: a named time-dependent velocity
field on an axis-aligned box with per-axis periodicity flags, a nominal time
window, and a parameter dict. Velocity evaluation is vectorized over points
with shape (..., 2).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

# fraction of the axis extent tolerated outside a closed axis before a point
# counts as having left the domain (finite-difference stencils and roundoff
# push trajectories slightly past invariant boundaries)
DOMAIN_SLACK_REL = 0.01

DAY_SECONDS = 86400.0


@dataclass(frozen=True)
class FlowModel:
    """A time-dependent planar velocity field on an axis-aligned box.

    Attributes
    ----------
    name : str
        Identifier of the flow.
    domain : tuple of float
        Box (xmin, xmax, ymin, ymax) in model length units.
    periodic : tuple of bool
        Per-axis periodic identification of opposite box edges.
    t_span : tuple of float
        Nominal (t0, T) window in model time units.
    params : dict
        Named real parameters of the field.
    velocity_fn : callable
        Raw field (t, xy, params) -> velocities, defined for unwrapped
        coordinates; vectorized over xy with shape (..., 2).
    unbounded : tuple of bool
        Axes on which the field extends beyond the box, so leaving the box
        is not an error (e.g. the meridional axis of the Bickley jet).
    """

    name: str
    domain: tuple[float, float, float, float]
    periodic: tuple[bool, bool] = (False, False)
    t_span: tuple[float, float] = (0.0, 1.0)
    params: dict = field(default_factory=dict)
    velocity_fn: Callable | None = None
    unbounded: tuple[bool, bool] = (False, False)

    def __post_init__(self):
        xmin, xmax, ymin, ymax = self.domain
        if not (xmax > xmin and ymax > ymin):
            raise ValueError(f"domain must have positive extent, got {self.domain}")
        t0, t1 = self.t_span
        if not t1 > t0:
            raise ValueError(f"t_span must be increasing, got {self.t_span}")

    @property
    def extent(self) -> tuple[float, float]:
        xmin, xmax, ymin, ymax = self.domain
        return (xmax - xmin, ymax - ymin)


def wrap_point(model: FlowModel, xy: np.ndarray) -> np.ndarray:
    """Wrap coordinates on periodic axes into the fundamental domain."""
    xy = np.array(xy, dtype=float, copy=True)
    xmin, xmax, ymin, ymax = model.domain
    los = (xmin, ymin)
    his = (xmax, ymax)
    for axis in range(2):
        if model.periodic[axis]:
            span = his[axis] - los[axis]
            xy[..., axis] = los[axis] + np.mod(xy[..., axis] - los[axis], span)
    return xy


def outside_mask(model: FlowModel, xy: np.ndarray,
                 slack_rel: float = DOMAIN_SLACK_REL) -> np.ndarray:
    """Boolean mask of points lying outside a closed (non-periodic) axis.

    Points within ``slack_rel`` times the axis extent of the box still count
    as inside; periodic and unbounded axes are never outside.
    """
    xy = np.asarray(xy, dtype=float)
    xmin, xmax, ymin, ymax = model.domain
    los = (xmin, ymin)
    his = (xmax, ymax)
    out = np.zeros(xy.shape[:-1], dtype=bool)
    for axis in range(2):
        if model.periodic[axis] or model.unbounded[axis]:
            continue
        slack = slack_rel * (his[axis] - los[axis])
        v = xy[..., axis]
        out |= (v < los[axis] - slack) | (v > his[axis] + slack)
    return out


def velocity(model: FlowModel, t: float, x) -> np.ndarray:
    """Evaluate the model velocity at time ``t`` and point(s) ``x``.

    Parameters
    ----------
    model : FlowModel
    t : float
    x : array-like, shape (..., 2)
        Query points; periodic axes are wrapped before evaluation.

    Returns
    -------
    ndarray, shape (..., 2)
        Velocities (dx/dt, dy/dt) in model units.
    """
    xy = np.asarray(x, dtype=float)
    if xy.shape[-1] != 2:
        raise ValueError(f"points must have shape (..., 2), got {xy.shape}")
    xy = wrap_point(model, xy)
    out = outside_mask(model, xy)
    if np.any(out):
        idx = np.argwhere(out)
        raise ValueError(
            f"point outside a non-periodic axis of model {model.name!r}: "
            f"first offending point {xy[tuple(idx[0])] if idx.ndim > 1 else xy}"
        )
    if model.velocity_fn is None:
        raise ValueError(f"model {model.name!r} has no velocity field attached")
    return model.velocity_fn(t, xy, model.params)


def transition(t):
    """Cubic smoothstep s(t) = t^2 (3 - 2 t) blending the double-gyre patterns."""
    t = np.asarray(t, dtype=float)
    out = t * t * (3.0 - 2.0 * t)
    return out if out.ndim else float(out)


def interpolation_endpoints(model: FlowModel) -> tuple[float, float]:
    """Endpoint values (s(0), s(1)) of the double-gyre transition function."""
    if model.name != "double_gyre":
        raise ValueError(
            f"interpolation endpoints are defined for the double gyre only, "
            f"got model {model.name!r}"
        )
    return (transition(0.0), transition(1.0))


def _double_gyre_velocity(t, xy, p):
    # stream function (1-s) sin(2 pi x) sin(pi y) + s sin(pi x) sin(2 pi y);
    # velocity is (-dPsi/dy, dPsi/dx)
    s = transition(t)
    pi = math.pi
    x = xy[..., 0]
    y = xy[..., 1]
    u = -((1.0 - s) * pi * np.sin(2.0 * pi * x) * np.cos(pi * y)
          + 2.0 * pi * s * np.sin(pi * x) * np.cos(2.0 * pi * y))
    v = ((1.0 - s) * 2.0 * pi * np.cos(2.0 * pi * x) * np.sin(pi * y)
         + pi * s * np.cos(pi * x) * np.sin(2.0 * pi * y))
    return np.stack([u, v], axis=-1)


def _cylinder_velocity(t, xy, p):
    c = p["c"]
    nu = p["nu"]
    eps = p["eps"]
    x = xy[..., 0]
    y = xy[..., 1]
    a = 1.0 + 0.125 * np.sin(2.0 * math.sqrt(5.0) * t)
    th = x - nu * t
    g = np.sin(th) * np.sin(y) + 0.5 * y - 0.25 * math.pi
    u = c - a * np.sin(th) * np.cos(y) + eps * np.sin(0.5 * t) / (g * g + 1.0) ** 2
    v = a * np.cos(th) * np.sin(y)
    return np.stack([u, v], axis=-1)


def _bickley_velocity(t, xy, p):
    # zonal jet plus three travelling Rossby waves; stream function
    # psi0 + psi1 with psi0 = -U0 L0 tanh(y/L0) and
    # psi1 = U0 L0 sech^2(y/L0) Re(sum eps_n exp(i k_n (x - c_n t)))
    u0 = p["U0"]
    l0 = p["L0"]
    x = xy[..., 0]
    y = xy[..., 1]
    yt = y / l0
    sech2 = 1.0 / np.cosh(yt) ** 2
    tanh = np.tanh(yt)
    cos_sum = 0.0
    sin_sum = 0.0
    for eps_n, k_n, c_n in zip(p["eps_n"], p["k_n"], p["c_n"]):
        phase = k_n * (x - c_n * t)
        cos_sum = cos_sum + eps_n * np.cos(phase)
        sin_sum = sin_sum + eps_n * k_n * np.sin(phase)
    u = u0 * sech2 * (1.0 + 2.0 * tanh * cos_sum)
    v = -u0 * l0 * sech2 * sin_sum
    return np.stack([u, v], axis=-1)


def _rigid_rotation_velocity(t, xy, p):
    return np.stack([-xy[..., 1], xy[..., 0]], axis=-1)


def _linear_shear_velocity(t, xy, p):
    return np.stack([xy[..., 1], np.zeros_like(xy[..., 0])], axis=-1)


def _zero_velocity(t, xy, p):
    return np.zeros_like(xy)


def _build_double_gyre(overrides):
    return FlowModel(
        name="double_gyre",
        domain=(0.0, 1.0, 0.0, 1.0),
        periodic=(False, False),
        t_span=(0.0, 1.0),
        params=dict(overrides),
        velocity_fn=_double_gyre_velocity,
    )


def _build_cylinder(overrides):
    params = {"c": 0.5, "nu": 0.5, "eps": 0.25}
    params.update(overrides)
    return FlowModel(
        name="cylinder",
        domain=(0.0, 2.0 * math.pi, 0.0, math.pi),
        periodic=(True, False),
        t_span=(0.0, 40.0),
        params=params,
        velocity_fn=_cylinder_velocity,
    )


def _build_bickley(overrides):
    # lengths in Mm, time in days; U0 = 62.66 m/s converted to Mm/day
    params = {
        "U0": 62.66 * DAY_SECONDS * 1e-6,
        "L0": 1.770,
        "r0": 6.371,
        "eps_n": (0.0075, 0.15, 0.3),
        "c_ratios": (0.1446, 0.205, 0.461),
    }
    params.update(overrides)
    r0 = params["r0"]
    params.setdefault("k_n", tuple(2.0 * n / r0 for n in (1, 2, 3)))
    params.setdefault("c_n", tuple(r * params["U0"] for r in params["c_ratios"]))
    return FlowModel(
        name="bickley",
        domain=(0.0, math.pi * r0, -3.0, 3.0),
        periodic=(True, False),
        t_span=(0.0, 40.0),
        params=params,
        velocity_fn=_bickley_velocity,
        unbounded=(False, True),
    )


def _build_rigid_rotation(overrides):
    return FlowModel(
        name="rigid_rotation",
        domain=(-2.0, 2.0, -2.0, 2.0),
        t_span=(0.0, 4.0 * math.pi),
        params=dict(overrides),
        velocity_fn=_rigid_rotation_velocity,
        unbounded=(True, True),
    )


def _build_linear_shear(overrides):
    return FlowModel(
        name="linear_shear",
        domain=(-2.0, 2.0, -2.0, 2.0),
        t_span=(0.0, 4.0),
        params=dict(overrides),
        velocity_fn=_linear_shear_velocity,
        unbounded=(True, True),
    )


def _build_identity(overrides):
    return FlowModel(
        name="identity",
        domain=(0.0, 1.0, 0.0, 1.0),
        t_span=(0.0, 1.0),
        params=dict(overrides),
        velocity_fn=_zero_velocity,
    )


_CATALOGUE = {
    "double_gyre": _build_double_gyre,
    "cylinder": _build_cylinder,
    "bickley": _build_bickley,
    "rigid_rotation": _build_rigid_rotation,
    "linear_shear": _build_linear_shear,
    "identity": _build_identity,
}


def model_names() -> list[str]:
    """Names of the built-in flow models."""
    return sorted(_CATALOGUE)


def named_model(name: str, **param_overrides) -> FlowModel:
    """Build a catalogue flow model by name, optionally overriding parameters."""
    try:
        builder = _CATALOGUE[name]
    except KeyError:
        raise ValueError(
            f"unknown model name {name!r}; available: {', '.join(model_names())}"
        ) from None
    return builder(param_overrides)
