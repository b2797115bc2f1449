"""Pullback metrics, their harmonic mean, and pointwise tensor diagnostics.

The central object is the averaged diffusion tensor D-bar, the weighted
arithmetic mean of the inverse pullback metrics C(t_i)^-1, together with its
inverse G-bar (the harmonic-mean metric). All operations are vectorized over
leading axes; matrices have shape (..., d, d).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# relative eigenvalue floor applied when repairing nearly-singular tensors
SPD_CLAMP_REL = 1e-14
_SYM_TOL = 1e-12


def _symmetrize(m: np.ndarray) -> np.ndarray:
    return 0.5 * (m + np.swapaxes(m, -1, -2))


def _check_symmetric(m: np.ndarray, what: str) -> None:
    scale = np.abs(m).max(initial=1.0)
    dev = np.abs(m - np.swapaxes(m, -1, -2)).max()
    if dev > _SYM_TOL * scale:
        raise ValueError(f"{what} not symmetric: max deviation {dev:.3e}")


def _check_spd(m: np.ndarray, what: str) -> None:
    _check_symmetric(m, what)
    eig = np.linalg.eigvalsh(_symmetrize(m))
    if np.any(eig[..., 0] <= 0.0):
        bad = np.argwhere(eig[..., 0] <= 0.0)
        raise ValueError(
            f"{what} not positive definite at {len(bad)} entry(ies); first "
            f"index {tuple(bad[0])}, min eigenvalue {eig[..., 0].min():.3e}")


def spd_repair(m: np.ndarray) -> np.ndarray:
    """Symmetrize and clamp eigenvalues below ``SPD_CLAMP_REL * mu_max``.

    Entries that need no clamping are returned symmetrized but otherwise
    untouched; clamped entries are rebuilt from their eigendecomposition.
    """
    m = _symmetrize(np.asarray(m, dtype=float))
    w, v = np.linalg.eigh(m)
    floor = SPD_CLAMP_REL * w[..., -1:]
    needs = np.any(w < floor, axis=-1)
    if not np.any(needs):
        return m
    w = np.maximum(w, floor)
    rebuilt = np.einsum("...ij,...j,...kj->...ik", v, w, v)
    out = m.copy()
    out[needs] = _symmetrize(rebuilt)[needs]
    return out


@dataclass
class MetricSampleSet:
    """Per-node sequence of pullback metrics with quadrature weights.

    ``matrices`` has shape (..., K, d, d) with one SPD matrix per instant;
    ``weights`` has shape (K,) and sums to 1.
    """

    matrices: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        self.matrices = np.asarray(self.matrices, dtype=float)
        self.weights = np.asarray(self.weights, dtype=float)
        if self.matrices.ndim < 3:
            raise ValueError("matrices must have shape (..., K, d, d)")
        if self.matrices.shape[-1] != self.matrices.shape[-2]:
            raise ValueError("metric matrices must be square")
        if self.weights.ndim != 1 or len(self.weights) != self.matrices.shape[-3]:
            raise ValueError("weights must match the number of instants")
        if abs(self.weights.sum() - 1.0) > 1e-12:
            raise ValueError(f"weights must sum to 1, got {self.weights.sum()!r}")

    @property
    def dim(self) -> int:
        return self.matrices.shape[-1]


def uniform_weights(k: int) -> np.ndarray:
    """Equal quadrature weights over k instants (plain mean)."""
    if k < 1:
        raise ValueError("need at least one instant")
    return np.full(k, 1.0 / k)


def trapezoid_weights(times) -> np.ndarray:
    """Trapezoidal quadrature weights for the given instants, normalized."""
    times = np.asarray(times, dtype=float)
    if len(times) == 1:
        return np.ones(1)
    w = np.empty(len(times))
    w[0] = 0.5 * (times[1] - times[0])
    w[-1] = 0.5 * (times[-1] - times[-2])
    w[1:-1] = 0.5 * (times[2:] - times[:-2])
    return w / w.sum()


def cauchy_green(dphi: np.ndarray, g_spatial: np.ndarray | None = None) -> np.ndarray:
    """Pullback metric DPhi^T G DPhi of the spatial metric G, symmetrized.

    Raises on singular Jacobians: non-finite entries or exact rank
    deficiency (determinant 0). The pullback is quadratic in DPhi, so the
    determinant's sign cannot affect it; finite-difference Jacobians on
    extremely stretched material (condition numbers beyond float precision)
    may carry a noise-level sign, while tiny magnitudes are legitimate
    extreme compression — only an exactly vanishing determinant poisons the
    downstream determinant arithmetic.
    """
    dphi = np.asarray(dphi, dtype=float)
    if not np.isfinite(dphi).all():
        bad = np.argwhere(~np.isfinite(dphi).all(axis=(-2, -1)))
        raise ValueError(
            f"non-finite flow-map Jacobian at {len(bad)} entry(ies); first "
            f"index {tuple(bad[0])}")
    det = np.linalg.det(dphi)
    if np.any(det == 0.0):
        bad = np.argwhere(det == 0.0)
        raise ValueError(
            f"singular flow-map Jacobian at {len(bad)} entry(ies); first "
            f"index {tuple(bad[0])}")
    if g_spatial is None:
        c = np.swapaxes(dphi, -1, -2) @ dphi
    else:
        g = np.asarray(g_spatial, dtype=float)
        c = np.swapaxes(dphi, -1, -2) @ g @ dphi
    return _symmetrize(c)


def harmonic_mean(samples: MetricSampleSet) -> tuple[np.ndarray, np.ndarray]:
    """Harmonic-mean metric pair (G-bar, D-bar) of a metric sample set.

    D-bar is the weighted arithmetic mean of the inverse metrics,
    D-bar = sum_i w_i C(t_i)^-1, and G-bar its inverse.
    """
    _check_spd(samples.matrices, "pullback metric")
    inv = np.linalg.inv(samples.matrices)
    dbar = np.einsum("k,...kij->...ij", samples.weights, inv)
    dbar = spd_repair(dbar)
    gbar = spd_repair(np.linalg.inv(dbar))
    return gbar, dbar


def _adjugate_2x2(m: np.ndarray) -> np.ndarray:
    out = np.empty_like(m)
    out[..., 0, 0] = m[..., 1, 1]
    out[..., 1, 1] = m[..., 0, 0]
    out[..., 0, 1] = -m[..., 0, 1]
    out[..., 1, 0] = -m[..., 1, 0]
    return out


def harmonic_mean_2d_shortcut(samples: MetricSampleSet,
                              dets: np.ndarray | None = None
                              ) -> tuple[np.ndarray, np.ndarray]:
    """Inversion-free 2x2 evaluation of the harmonic-mean pair.

    Averages C(t_i)/det C(t_i) into C-bar and normalizes: G-bar =
    C-bar/det(C-bar), D-bar = adj(C-bar). Because the 2x2 adjugate is linear,
    this equals :func:`harmonic_mean` up to roundoff.

    ``dets`` optionally supplies the sample determinants. For pullback
    metrics they should be the squared Jacobian determinants (times the
    spatial metric's determinant): that form carries no cancellation, so it
    stays exact even where the assembled metric saturates double precision
    (anisotropy beyond ~1e16), while a determinant taken of the assembled
    matrix would drown in roundoff there. With ``dets`` given, the matrices
    are trusted to be symmetric positive semidefinite by construction and
    only the determinants are checked for positivity.
    """
    if samples.dim != 2:
        raise ValueError(f"2x2 shortcut requires d = 2, got d = {samples.dim}")
    c = samples.matrices
    if dets is None:
        _check_spd(c, "pullback metric")
        det = c[..., 0, 0] * c[..., 1, 1] - c[..., 0, 1] * c[..., 1, 0]
    else:
        det = np.asarray(dets, dtype=float)
        if det.shape != c.shape[:-2]:
            raise ValueError(
                f"determinant array shape {det.shape} does not match the "
                f"sample shape {c.shape[:-2]}")
        if np.any(det <= 0.0):
            bad = np.argwhere(det <= 0.0)
            raise ValueError(
                f"non-positive sample determinant at {len(bad)} entry(ies); "
                f"first index {tuple(bad[0])}")
    cbar = np.einsum("k,...kij->...ij", samples.weights, c / det[..., None, None])
    dbar = spd_repair(_adjugate_2x2(cbar))
    det_cbar = cbar[..., 0, 0] * cbar[..., 1, 1] - cbar[..., 0, 1] * cbar[..., 1, 0]
    gbar = spd_repair(cbar / det_cbar[..., None, None])
    return gbar, dbar


def harmonic_determinant(samples: MetricSampleSet,
                         dets: np.ndarray | None = None) -> np.ndarray:
    """Cancellation-free determinant of D-bar (equal to that of C-bar).

    Expanding the determinant of the weighted sum C-bar = sum_i w_i A_i with
    A_i = C(t_i)/det C(t_i) over instant pairs gives

        det(C-bar) = 1/2 sum_ij w_i w_j tr(A_i adj A_j),

    and every pair trace is nonnegative for positive semidefinite factors.
    Each trace is evaluated from the eigenstructure of the factors — the
    large eigenvalue from the stored entries, the small one as det/large,
    with ``dets`` supplying the sample determinants exactly as in
    :func:`harmonic_mean_2d_shortcut` — so no subtraction of large terms
    occurs anywhere. A determinant taken of the assembled D-bar matrix
    instead carries an absolute error of order eps * ||D-bar||^2, which
    swamps the true value once the anisotropy saturates double precision;
    this evaluation stays accurate in that regime.
    """
    if samples.dim != 2:
        raise ValueError(
            f"pair-expansion determinant requires d = 2, got d = {samples.dim}")
    c = samples.matrices
    if dets is None:
        _check_spd(c, "pullback metric")
        det = c[..., 0, 0] * c[..., 1, 1] - c[..., 0, 1] * c[..., 1, 0]
    else:
        det = np.asarray(dets, dtype=float)
        if det.shape != c.shape[:-2]:
            raise ValueError(
                f"determinant array shape {det.shape} does not match the "
                f"sample shape {c.shape[:-2]}")
        if np.any(det <= 0.0):
            bad = np.argwhere(det <= 0.0)
            raise ValueError(
                f"non-positive sample determinant at {len(bad)} entry(ies); "
                f"first index {tuple(bad[0])}")
    lead = c.shape[:-3]
    k = c.shape[-3]
    a = (c / det[..., None, None]).reshape(-1, k, 2, 2)
    half_tr = 0.5 * (a[..., 0, 0] + a[..., 1, 1])
    if np.any(half_tr <= 0.0):
        raise ValueError("pullback metric with non-positive trace")
    radius = np.hypot(0.5 * (a[..., 0, 0] - a[..., 1, 1]), a[..., 0, 1])
    lam_big = half_tr + radius
    lam_small = (1.0 / det).reshape(-1, k) / lam_big
    theta = 0.5 * np.arctan2(2.0 * a[..., 0, 1], a[..., 0, 0] - a[..., 1, 1])
    w = samples.weights
    out = np.empty(len(a))
    step = 256
    for start in range(0, len(a), step):
        sl = slice(start, start + step)
        lb, ls, th = lam_big[sl], lam_small[sl], theta[sl]
        sin2 = np.sin(th[:, :, None] - th[:, None, :]) ** 2
        cos2 = 1.0 - sin2
        pair = ((lb[:, :, None] * ls[:, None, :] + ls[:, :, None] * lb[:, None, :])
                * cos2
                + (lb[:, :, None] * lb[:, None, :] + ls[:, :, None] * ls[:, None, :])
                * sin2)
        out[sl] = 0.5 * np.einsum("i,j,nij->n", w, w, pair)
    return out.reshape(lead)


@dataclass
class TensorDiagnostics:
    """Pointwise eigenstructure and scalar summaries of D-bar."""

    mu_min: np.ndarray
    mu_max: np.ndarray
    v_min: np.ndarray
    v_max: np.ndarray
    log10_anisotropy: np.ndarray
    density: np.ndarray
    eff_diffusivity: np.ndarray


def _fix_sign(vecs: np.ndarray) -> np.ndarray:
    """Flip eigenvectors so their first effectively-nonzero component is positive."""
    v = np.asarray(vecs, dtype=float)
    norm = np.linalg.norm(v, axis=-1, keepdims=True)
    significant = np.abs(v) > 1e-12 * np.maximum(norm, 1e-300)
    first = np.argmax(significant, axis=-1)
    lead = np.take_along_axis(v, first[..., None], axis=-1)[..., 0]
    return np.where((lead < 0.0)[..., None], -v, v)


def diagnostics(dbar: np.ndarray,
                det: np.ndarray | None = None) -> TensorDiagnostics:
    """Eigenpairs and scalar diagnostics of the averaged diffusion tensor.

    Returns the extreme eigenvalues mu_min <= mu_max with unit eigenvectors
    (first nonzero component positive), log10 of the anisotropy ratio, the
    volume density det(D-bar)^(-1/2) of the mixing volume form, and the
    effective diffusivity det(D-bar)^(1/2).

    ``det`` optionally supplies accurate determinants (for instance from
    :func:`harmonic_determinant`). Once the anisotropy saturates double
    precision the small eigenvalue of the stored matrix is a roundoff
    artifact, so with the override mu_min is rebuilt as det divided by the
    product of the remaining (trustworthy) eigenvalues, and the density
    pair comes directly from the override.
    """
    dbar = np.asarray(dbar, dtype=float)
    _check_spd(dbar, "diffusion tensor")
    w, v = np.linalg.eigh(_symmetrize(dbar))
    mu_min = w[..., 0]
    mu_max = w[..., -1]
    v_min = _fix_sign(v[..., :, 0])
    v_max = _fix_sign(v[..., :, -1])
    if det is None:
        det = np.prod(w, axis=-1)
    else:
        det = np.asarray(det, dtype=float)
        if det.shape != mu_max.shape:
            raise ValueError(
                f"determinant array shape {det.shape} does not match the "
                f"tensor field shape {mu_max.shape}")
        if not np.isfinite(det).all() or np.any(det <= 0.0):
            raise ValueError("determinant override must be positive and finite")
        mu_min = det / np.prod(w[..., 1:], axis=-1)
    return TensorDiagnostics(
        mu_min=mu_min,
        mu_max=mu_max,
        v_min=v_min,
        v_max=v_max,
        log10_anisotropy=np.log10(mu_max / mu_min),
        density=det ** -0.5,
        eff_diffusivity=det ** 0.5,
    )


def surface_flux(gbar: np.ndarray, v_normal: np.ndarray) -> np.ndarray:
    """Mixing-metric area of a unit surface element with normal ``v_normal``.

    Evaluates sqrt(det G-bar) * sqrt(v^T G-bar^-1 v); ``v_normal`` must be a
    unit vector in the spatial metric.
    """
    gbar = np.asarray(gbar, dtype=float)
    v = np.asarray(v_normal, dtype=float)
    norm = np.linalg.norm(v, axis=-1)
    if np.any(np.abs(norm - 1.0) > 1e-8):
        raise ValueError(f"normal must have unit length, got |v| = {norm}")
    det = np.linalg.det(gbar)
    quad = np.einsum("...i,...i->...", v, np.linalg.solve(gbar, v))
    out = np.sqrt(det) * np.sqrt(quad)
    return float(out) if np.ndim(out) == 0 else out


def transformed_normal(dbar: np.ndarray, nu_g: np.ndarray) -> np.ndarray:
    """Mixing-metric unit normal D-bar nu, normalized to unit G-bar length.

    The result is G-bar-orthogonal to every vector tangent to the surface
    that ``nu_g`` is normal to.
    """
    dbar = np.asarray(dbar, dtype=float)
    nu = np.asarray(nu_g, dtype=float)
    w = np.einsum("...ij,...j->...i", dbar, nu)
    quad = np.einsum("...i,...i->...", nu, w)
    return w / np.sqrt(quad)[..., None]


@dataclass
class MixingMetricField:
    """Per-node harmonic-mean tensor pair with derived diagnostics."""

    gbar: np.ndarray
    dbar: np.ndarray
    mu_min: np.ndarray
    mu_max: np.ndarray
    v_min: np.ndarray
    v_max: np.ndarray
    log10_anisotropy: np.ndarray
    density: np.ndarray
    eff_diffusivity: np.ndarray

    @property
    def n_nodes(self) -> int:
        return len(self.dbar)


def field_from_tensors(dbar: np.ndarray,
                       det: np.ndarray | None = None) -> MixingMetricField:
    """Build a metric field directly from per-node diffusion tensors.

    ``det`` optionally supplies accurate tensor determinants (see
    :func:`diagnostics`); pass it when the tensors came from a computation
    that carried them, since they cannot be recovered from the stored
    matrices once the anisotropy saturates double precision.
    """
    dbar = spd_repair(np.asarray(dbar, dtype=float))
    gbar = spd_repair(np.linalg.inv(dbar))
    diag = diagnostics(dbar, det=det)
    return MixingMetricField(gbar=gbar, dbar=dbar, **vars(diag))


# resolution floor for finite-difference Jacobians whose small singular
# value collapsed to exactly zero (stencil separations shrunk below one ulp
# along a contracting invariant line): the difference quotient itself cannot
# resolve singular-value ratios below double precision, so the floor restores
# the smallest value representable by the measurement
_SV_FLOOR_REL = 1e-12


def _floor_rank_deficient(jacobians: np.ndarray) -> np.ndarray:
    """Jacobians with exactly-singular entries repaired by an SVD floor.

    Long advection windows legitimately produce exact rank deficiency in
    finite-difference Jacobians: on a flow-invariant boundary line the
    in-line dynamics contracts the stencil pair onto a common attracting
    trajectory, and once their separation falls below one ulp the computed
    column is exactly zero (the true value is merely far below the stencil's
    resolution). Those entries are repaired by flooring the singular values
    at ``_SV_FLOOR_REL`` times the largest one; everything else passes
    through unchanged. An entirely zero Jacobian is not repairable.
    """
    jac = np.asarray(jacobians, dtype=float)
    det = np.linalg.det(jac)
    bad = det == 0.0
    if not np.any(bad):
        return jac
    u, s, vt = np.linalg.svd(jac[bad])
    smax = s[..., 0]
    if np.any(smax == 0.0):
        raise ValueError(
            f"flow-map Jacobian is entirely zero at "
            f"{int((smax == 0.0).sum())} entry(ies)")
    s = np.maximum(s, _SV_FLOOR_REL * smax[..., None])
    jac = jac.copy()
    jac[bad] = u @ (s[..., None] * vt)
    return jac


def build_metric_field(sample, g_spatial: np.ndarray | None = None,
                       weighting: str = "uniform",
                       debug_check: bool = False) -> MixingMetricField:
    """Harmonic-mean metric field of a flow-map sample.

    Builds the pullback metrics of every node at every instant, averages
    their inverses with the chosen quadrature ("uniform" or "trapezoid"),
    and attaches all pointwise diagnostics. In two dimensions the
    inversion-free evaluation is used; ``debug_check=True`` additionally
    cross-checks it against the direct mean of inverses (meaningful only
    while the pullback metrics stay well-conditioned — the inversion route
    itself degrades far earlier than the shortcut on saturated anisotropy).

    Exactly-singular finite-difference Jacobians (stencil collapse on
    contracting invariant lines, see :func:`_floor_rank_deficient`) are
    repaired by a singular-value floor before the pullback.
    """
    jacobians = _floor_rank_deficient(sample.jacobians)
    c = cauchy_green(jacobians, g_spatial)
    k = c.shape[-3]
    if weighting == "uniform":
        weights = uniform_weights(k)
    elif weighting == "trapezoid":
        weights = trapezoid_weights(sample.times)
    else:
        raise ValueError(f"unknown weighting {weighting!r}")
    samples = MetricSampleSet(matrices=c, weights=weights)
    if samples.dim == 2:
        # the pullback determinant det(C) = det(DPhi)^2 det(G) is formed from
        # the Jacobian so it stays cancellation-free at saturated anisotropy
        dets = np.square(np.linalg.det(jacobians))
        if g_spatial is not None:
            dets = dets * np.linalg.det(np.asarray(g_spatial, dtype=float))
        gbar, dbar = harmonic_mean_2d_shortcut(samples, dets=dets)
        det_acc = harmonic_determinant(samples, dets=dets)
        if debug_check:
            gbar_ref, dbar_ref = harmonic_mean(samples)
            scale = np.abs(dbar_ref).max(initial=1.0)
            if np.abs(dbar - dbar_ref).max() > 1e-10 * scale:
                raise AssertionError(
                    "2x2 shortcut disagrees with the mean of inverses")
            del gbar_ref, dbar_ref
    else:
        gbar, dbar = harmonic_mean(samples)
        det_acc = None
    diag = diagnostics(dbar, det=det_acc)
    return MixingMetricField(gbar=gbar, dbar=dbar, **vars(diag))


def validate_field(field: MixingMetricField, atol: float = 1e-10) -> None:
    """Check the structural invariants of a metric field.

    Verifies G-bar D-bar = I and density * eff_diffusivity = 1 within
    ``atol`` per node, and positivity of the smallest eigenvalue. The
    product check is a roundoff statement, so ``atol`` should be widened
    for fields with anisotropy ratios beyond ~1e6.
    """
    eye = np.eye(field.dbar.shape[-1])
    prod_dev = np.abs(field.gbar @ field.dbar - eye).max()
    if prod_dev > atol:
        raise ValueError(f"G-bar D-bar deviates from identity by {prod_dev:.3e}")
    unit_dev = np.abs(field.density * field.eff_diffusivity - 1.0).max()
    if unit_dev > atol:
        raise ValueError(f"density * eff_diffusivity deviates from 1 by {unit_dev:.3e}")
    if np.any(field.mu_min <= 0.0):
        raise ValueError("non-positive minimal eigenvalue in metric field")
