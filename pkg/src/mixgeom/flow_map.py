"""Trajectory and linearized-flow-map integration over material grids.

Trajectories are advanced with a fixed-step classical Runge-Kutta scheme in
unwrapped coordinates (periodic wrapping is applied only to reported
positions, never inside finite-difference stencils). Jacobians of the flow
map come from central finite differences over four auxiliary trajectories
per node.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .flow_models import FlowModel, outside_mask, wrap_point

_MAX_SUBSTEPS = 10_000_000


class TrajectoryExitError(ValueError):
    """A trajectory left the domain through a closed (non-periodic) axis."""

    def __init__(self, message, node_indices=None, exit_times=None):
        super().__init__(message)
        self.node_indices = node_indices
        self.exit_times = exit_times


@dataclass(frozen=True)
class StepControl:
    """Integrator settings.

    ``rk4`` advances with fixed substeps of length at most ``max_step``
    (deterministic, the default); ``rk45`` uses an adaptive embedded pair
    with the given tolerances and is available for single-trajectory use.
    """

    max_step: float = 0.01
    method: str = "rk4"
    rtol: float = 1e-8
    atol: float = 1e-10

    def __post_init__(self):
        if self.method not in ("rk4", "rk45"):
            raise ValueError(f"unknown integration method {self.method!r}")
        if not self.max_step > 0.0:
            raise ValueError("step-size underflow: max_step must be positive")


@dataclass(frozen=True)
class MaterialGrid:
    """Uniform row-major grid of material seed points on a box.

    Node index ``j * nx + i`` holds the point (x_i, y_j); both endpoint
    columns/rows are included, so on a periodic axis the last line of nodes
    duplicates the first as material points.
    """

    nx: int
    ny: int
    bounds: tuple[float, float, float, float]
    periodic: tuple[bool, bool] = (False, False)

    def __post_init__(self):
        if self.nx < 2 or self.ny < 2:
            raise ValueError(f"grid needs nx, ny >= 2, got {self.nx}x{self.ny}")
        xmin, xmax, ymin, ymax = self.bounds
        if not (xmax > xmin and ymax > ymin):
            raise ValueError(f"grid bounds must have positive extent, got {self.bounds}")

    @property
    def spacing(self) -> tuple[float, float]:
        xmin, xmax, ymin, ymax = self.bounds
        return ((xmax - xmin) / (self.nx - 1), (ymax - ymin) / (self.ny - 1))

    @property
    def n_nodes(self) -> int:
        return self.nx * self.ny

    @cached_property
    def nodes(self) -> np.ndarray:
        """All node positions, shape (nx * ny, 2), x varying fastest."""
        xmin, xmax, ymin, ymax = self.bounds
        xs = np.linspace(xmin, xmax, self.nx)
        ys = np.linspace(ymin, ymax, self.ny)
        gx, gy = np.meshgrid(xs, ys)
        return np.column_stack([gx.ravel(), gy.ravel()])


def grid_for_model(model: FlowModel, nx: int, ny: int,
                   bounds=None) -> MaterialGrid:
    """Material grid covering the model domain (or an explicit sub-box)."""
    return MaterialGrid(nx=nx, ny=ny,
                        bounds=tuple(bounds) if bounds is not None else model.domain,
                        periodic=model.periodic)


@dataclass
class FlowMapSample:
    """Positions and flow-map Jacobians of every grid node at every instant.

    ``positions[i, k]`` is the (wrapped) position of node i at ``times[k]``;
    ``jacobians[i, k]`` is the 2x2 Jacobian of the flow map from ``times[0]``
    to ``times[k]`` at that node. ``positions[:, 0]`` equals the seed points
    and ``jacobians[:, 0]`` the identity.
    """

    times: np.ndarray
    positions: np.ndarray
    jacobians: np.ndarray
    grid: MaterialGrid | None = None


def _substep_count(t0: float, t1: float, max_step: float) -> int:
    span = t1 - t0
    if span == 0.0:
        return 0
    nsub = math.ceil(span / max_step - 1e-12)
    if nsub > _MAX_SUBSTEPS:
        raise ValueError(
            f"step-size underflow: {t1 - t0} / {max_step} needs {nsub} substeps"
        )
    return max(nsub, 1)


def _advance(model: FlowModel, pts: np.ndarray, t0: float, t1: float,
             max_step: float, exit_time: np.ndarray,
             outside_limit: int | None = None) -> np.ndarray:
    """Advance unwrapped points from t0 to t1 with fixed-step RK4.

    First exit times through closed axes (or first non-finite states) are
    recorded in-place into ``exit_time`` (NaN = still inside). When
    ``outside_limit`` is given, only the first that many points are subject
    to the domain-exit check; the rest (finite-difference stencil points,
    which may legitimately straddle a closed boundary) are only checked for
    finiteness.
    """
    nsub = _substep_count(t0, t1, max_step)
    if nsub == 0:
        return pts.copy()
    h = (t1 - t0) / nsub
    f = model.velocity_fn
    p = model.params
    x = pts.copy()
    for i in range(nsub):
        t = t0 + i * h
        k1 = f(t, x, p)
        k2 = f(t + 0.5 * h, x + (0.5 * h) * k1, p)
        k3 = f(t + 0.5 * h, x + (0.5 * h) * k2, p)
        k4 = f(t + h, x + h * k3, p)
        x = x + (h / 6.0) * (k1 + 2.0 * (k2 + k3) + k4)
        bad = ~np.isfinite(x).all(axis=-1)
        if outside_limit is None:
            bad |= outside_mask(model, x)
        else:
            bad[:outside_limit] |= outside_mask(model, x[:outside_limit])
        newly = bad & np.isnan(exit_time)
        if np.any(newly):
            exit_time[newly] = t + h
    return x


def integrate_flow(model: FlowModel, x0, t0: float, t1: float,
                   step_control: StepControl | None = None) -> np.ndarray:
    """Endpoint of the trajectory of ``x0`` from t0 to t1 (wrapped).

    Raises :class:`TrajectoryExitError` if the trajectory leaves the domain
    through a closed axis, reporting the exit time.
    """
    sc = step_control or StepControl()
    x0 = np.asarray(x0, dtype=float).reshape(1, 2)
    if np.any(outside_mask(model, wrap_point(model, x0))):
        raise TrajectoryExitError(
            f"seed point {x0[0]} outside a non-periodic axis of {model.name!r}",
            node_indices=np.array([0]), exit_times=np.array([t0]))
    if t1 == t0:
        return wrap_point(model, x0)[0]
    if sc.method == "rk45":
        x = _advance_adaptive(model, x0[0], t0, t1, sc)
    else:
        exit_time = np.full(1, np.nan)
        x = _advance(model, x0, t0, t1, sc.max_step, exit_time)[0]
        if not np.isnan(exit_time[0]):
            raise TrajectoryExitError(
                f"trajectory left the domain of {model.name!r} at "
                f"t = {exit_time[0]:.6g}",
                node_indices=np.array([0]), exit_times=exit_time)
    return wrap_point(model, x)


def _advance_adaptive(model: FlowModel, x0: np.ndarray, t0: float, t1: float,
                      sc: StepControl) -> np.ndarray:
    from scipy.integrate import solve_ivp

    def rhs(t, x):
        return model.velocity_fn(t, x.reshape(1, 2), model.params)[0]

    sol = solve_ivp(rhs, (t0, t1), x0, method="RK45",
                    rtol=sc.rtol, atol=sc.atol, dense_output=False)
    if not sol.success:
        raise ValueError(f"adaptive integration failed: {sol.message}")
    states = sol.y.T
    bad = outside_mask(model, states)
    if np.any(bad):
        k = int(np.argmax(bad))
        raise TrajectoryExitError(
            f"trajectory left the domain of {model.name!r} at "
            f"t = {sol.t[k]:.6g}",
            node_indices=np.array([0]), exit_times=np.array([sol.t[k]]))
    return states[-1]


def _fd_seeds(x0: np.ndarray, h: float) -> np.ndarray:
    """Stack [x, x+h e1, x-h e1, x+h e2, x-h e2] for a batch of points."""
    n = len(x0)
    seeds = np.tile(x0, (5, 1))
    seeds[n:2 * n, 0] += h
    seeds[2 * n:3 * n, 0] -= h
    seeds[3 * n:4 * n, 1] += h
    seeds[4 * n:5 * n, 1] -= h
    return seeds


def _fd_jacobian(pts: np.ndarray, n: int, h: float) -> np.ndarray:
    """Central-difference Jacobians from a stacked auxiliary-point array."""
    blocks = pts.reshape(5, n, 2)
    jac = np.empty((n, 2, 2))
    jac[:, :, 0] = (blocks[1] - blocks[2]) / (2.0 * h)
    jac[:, :, 1] = (blocks[3] - blocks[4]) / (2.0 * h)
    return jac


def linearized_flow(model: FlowModel, x0, t0: float, t1: float,
                    h: float, step_control: StepControl | None = None) -> np.ndarray:
    """Jacobian of the flow map at ``x0`` by central finite differences.

    Four auxiliary trajectories seeded at ``x0 +- h e_i`` are integrated with
    the same scheme as the main trajectory; second-order accurate in ``h``.
    """
    if not h > 0.0:
        raise ValueError("finite-difference offset h must be positive")
    sc = step_control or StepControl()
    x0 = np.asarray(x0, dtype=float).reshape(2)
    if t1 == t0:
        return np.eye(2)
    seeds = _fd_seeds(x0[None, :], h)
    exit_time = np.full(5, np.nan)
    pts = _advance(model, seeds, t0, t1, sc.max_step, exit_time)
    if np.any(~np.isnan(exit_time)):
        k = int(np.nanargmin(exit_time))
        raise TrajectoryExitError(
            f"auxiliary trajectory left the domain of {model.name!r} at "
            f"t = {exit_time[k]:.6g}",
            node_indices=np.array([0]), exit_times=exit_time)
    return _fd_jacobian(pts, 1, h)[0]


def sample_flow(model: FlowModel, grid: MaterialGrid, times,
                step_control: StepControl | None = None,
                fd_offset: float | None = None) -> FlowMapSample:
    """Positions and Jacobians of all grid nodes at all requested instants.

    Parameters
    ----------
    model, grid : the flow and its material seed grid.
    times : increasing sequence of instants; integration starts at times[0].
    step_control : fixed-step settings (``rk4`` only; the batch sweep is
        deterministic by construction).
    fd_offset : finite-difference offset for the Jacobians; defaults to
        1/100 of the smaller grid spacing. For long or strongly hyperbolic
        windows choose it by the dynamics instead: once material stretching
        times the offset approaches the domain size the stencil delinearizes
        (near-singular Jacobians), so shrink the offset until well clear of
        that while staying far above integrator noise.

    Raises
    ------
    TrajectoryExitError
        Aggregated over nodes whose material trajectory left the domain
        through a closed axis, with node indices and exit times. The
        finite-difference stencil trajectories of boundary nodes necessarily
        straddle closed walls, so they follow the model's smooth continuation
        and are only checked for finiteness: on a flow-invariant domain the
        continued flow's Jacobian restricted to the wall is the intrinsic
        one, which keeps the central stencil second-order at every node.
    """
    sc = step_control or StepControl()
    if sc.method != "rk4":
        raise ValueError("sample_flow uses the fixed-step rk4 scheme only")
    times = np.asarray(times, dtype=float)
    if times.ndim != 1 or len(times) < 1:
        raise ValueError("times must be a non-empty 1-d sequence")
    if np.any(np.diff(times) <= 0.0):
        raise ValueError("times must be strictly increasing")
    h = fd_offset if fd_offset is not None else min(grid.spacing) / 100.0
    if not h > 0.0:
        raise ValueError("finite-difference offset must be positive")

    n = grid.n_nodes
    seeds = grid.nodes
    k_times = len(times)
    positions = np.empty((n, k_times, 2))
    jacobians = np.empty((n, k_times, 2, 2))
    positions[:, 0] = seeds
    jacobians[:, 0] = np.eye(2)

    pts = _fd_seeds(seeds, h)
    exit_time = np.full(5 * n, np.nan)
    for k in range(1, k_times):
        pts = _advance(model, pts, times[k - 1], times[k], sc.max_step,
                       exit_time, outside_limit=n)
        positions[:, k] = wrap_point(model, pts[:n])
        jacobians[:, k] = _fd_jacobian(pts, n, h)

    if np.any(~np.isnan(exit_time)):
        node_exit = np.nanmin(exit_time.reshape(5, n), axis=0)
        bad_nodes = np.flatnonzero(~np.isnan(node_exit))
        first = bad_nodes[np.argmin(node_exit[bad_nodes])]
        raise TrajectoryExitError(
            f"{len(bad_nodes)} node trajectory(ies) left the domain of "
            f"{model.name!r}; earliest: node {first} at t = "
            f"{node_exit[first]:.6g}",
            node_indices=bad_nodes, exit_times=node_exit[bad_nodes])

    return FlowMapSample(times=times, positions=positions,
                         jacobians=jacobians, grid=grid)


def validate_sample(sample: FlowMapSample, grid: MaterialGrid | None = None) -> None:
    """Check the structural invariants of a flow-map sample.

    Verifies the initial instant (seed positions, identity Jacobians) and
    that every Jacobian has positive determinant (orientation-preserving).
    """
    grid = grid or sample.grid
    if grid is not None and not np.allclose(sample.positions[:, 0], grid.nodes,
                                            rtol=0.0, atol=1e-12):
        raise ValueError("initial positions do not match the grid seeds")
    if not np.allclose(sample.jacobians[:, 0], np.eye(2), rtol=0.0, atol=1e-10):
        raise ValueError("initial Jacobians are not the identity")
    dets = np.linalg.det(sample.jacobians)
    if np.any(dets <= 0.0):
        bad = np.argwhere(dets <= 0.0)
        i, k = bad[0]
        raise ValueError(
            f"{len(bad)} Jacobian(s) with non-positive determinant; first at "
            f"node {i}, instant {k} (det = {dets[i, k]:.3e})")
