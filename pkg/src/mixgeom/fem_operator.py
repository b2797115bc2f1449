"""Structured triangulation and P1 finite-element operator assembly.

Two operator variants share one assembly routine. ``dynamic_laplacian``
integrates grad(v)^T D-bar grad(w) against the flat (Lebesgue) volume;
``mixing_lb`` weights both the stiffness integrand and the mass matrix by
the mixing volume density det(D-bar)^(-1/2), realizing the inner products of
the harmonic-mean geometry. The eigenproblem convention is S w = -lambda M w
with 0 = lambda_1 >= lambda_2 >= ...
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import sparse

VARIANTS = ("dynamic_laplacian", "mixing_lb")

_MASS_TEMPLATE = np.array([[2.0, 1.0, 1.0],
                           [1.0, 2.0, 1.0],
                           [1.0, 1.0, 2.0]]) / 12.0


@dataclass
class TriMesh:
    """Structured triangle mesh with optional periodic identification.

    ``vertices`` are the distinct mesh points after identifying periodic
    seam nodes; ``node_map`` sends every grid node (row-major, seam lines
    included) to its vertex, and ``vertex_rep`` picks one representative
    grid node per vertex. ``tri_coords`` stores unwrapped corner coordinates
    per triangle, so wrapped triangles keep their true cell geometry.
    """

    vertices: np.ndarray
    triangles: np.ndarray
    boundary_edges: np.ndarray
    periodic_pairs: dict[int, np.ndarray]
    node_map: np.ndarray
    vertex_rep: np.ndarray
    tri_coords: np.ndarray

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)


@dataclass
class DiscreteOperatorPair:
    """Sparse stiffness/mass pair of one operator variant on one mesh."""

    stiffness: sparse.csr_matrix
    mass: sparse.csr_matrix
    variant: str
    mesh: TriMesh | None = None


def _boundary_edges(triangles: np.ndarray) -> np.ndarray:
    edges = np.concatenate([triangles[:, [0, 1]],
                            triangles[:, [1, 2]],
                            triangles[:, [2, 0]]])
    edges = np.sort(edges, axis=1)
    uniq, counts = np.unique(edges, axis=0, return_counts=True)
    if np.any(counts > 2):
        raise ValueError("mesh has an edge shared by more than two triangles")
    return uniq[counts == 1]


def build_mesh(domain, nx: int, ny: int, periodic=(False, False)) -> TriMesh:
    """Two-triangles-per-cell structured mesh of an axis-aligned box.

    Grid nodes include both endpoint lines of each axis; on a periodic axis
    the last line is identified with the first, so an x-periodic mesh has
    (nx - 1) * ny distinct vertices.
    """
    xmin, xmax, ymin, ymax = domain
    if not (xmax > xmin and ymax > ymin):
        raise ValueError(f"degenerate domain {domain}")
    if nx < 2 or ny < 2:
        raise ValueError(f"mesh needs nx, ny >= 2, got {nx}x{ny}")
    px, py = bool(periodic[0]), bool(periodic[1])
    if (px and nx < 3) or (py and ny < 3):
        raise ValueError("a periodic axis needs at least 3 grid lines")

    xs = np.linspace(xmin, xmax, nx)
    ys = np.linspace(ymin, ymax, ny)
    mx = nx - 1 if px else nx
    my = ny - 1 if py else ny

    gi, gj = np.meshgrid(np.arange(nx), np.arange(ny))
    node_map = ((gj % my) * mx + (gi % mx)).ravel()
    vi, vj = np.meshgrid(np.arange(mx), np.arange(my))
    vertices = np.column_stack([xs[vi.ravel()], ys[vj.ravel()]])
    vertex_rep = (vj.ravel() * nx + vi.ravel())

    ci, cj = np.meshgrid(np.arange(nx - 1), np.arange(ny - 1))
    ci = ci.ravel()
    cj = cj.ravel()
    v00 = node_map[cj * nx + ci]
    v10 = node_map[cj * nx + ci + 1]
    v01 = node_map[(cj + 1) * nx + ci]
    v11 = node_map[(cj + 1) * nx + ci + 1]
    lower = np.column_stack([v00, v10, v11])
    upper = np.column_stack([v00, v11, v01])
    triangles = np.empty((2 * len(ci), 3), dtype=np.int64)
    triangles[0::2] = lower
    triangles[1::2] = upper

    x0 = xs[ci]
    x1 = xs[ci + 1]
    y0 = ys[cj]
    y1 = ys[cj + 1]
    tri_coords = np.empty((2 * len(ci), 3, 2))
    tri_coords[0::2, 0] = np.column_stack([x0, y0])
    tri_coords[0::2, 1] = np.column_stack([x1, y0])
    tri_coords[0::2, 2] = np.column_stack([x1, y1])
    tri_coords[1::2, 0] = np.column_stack([x0, y0])
    tri_coords[1::2, 1] = np.column_stack([x1, y1])
    tri_coords[1::2, 2] = np.column_stack([x0, y1])

    periodic_pairs = {}
    if px:
        j = np.arange(ny)
        periodic_pairs[0] = np.column_stack([j * nx, j * nx + nx - 1])
    if py:
        i = np.arange(nx)
        periodic_pairs[1] = np.column_stack([i, (ny - 1) * nx + i])

    return TriMesh(vertices=vertices, triangles=triangles,
                   boundary_edges=_boundary_edges(triangles),
                   periodic_pairs=periodic_pairs, node_map=node_map,
                   vertex_rep=vertex_rep, tri_coords=tri_coords)


def validate_mesh(mesh: TriMesh) -> None:
    """Check orientation, edge sharing, and periodic identification."""
    v1 = mesh.tri_coords[:, 1] - mesh.tri_coords[:, 0]
    v2 = mesh.tri_coords[:, 2] - mesh.tri_coords[:, 0]
    area2 = v1[:, 0] * v2[:, 1] - v1[:, 1] * v2[:, 0]
    if np.any(area2 <= 0.0):
        raise ValueError("mesh contains non-positively-oriented or degenerate triangles")
    recomputed = _boundary_edges(mesh.triangles)
    if recomputed.shape != mesh.boundary_edges.shape or \
            not np.array_equal(recomputed, mesh.boundary_edges):
        raise ValueError("stored boundary edges disagree with triangle incidence")
    for axis, pairs in mesh.periodic_pairs.items():
        a = mesh.node_map[pairs[:, 0]]
        b = mesh.node_map[pairs[:, 1]]
        if not np.array_equal(a, b):
            raise ValueError(f"periodic pairs on axis {axis} are not identified")


def _vertex_tensors(mesh: TriMesh, field) -> np.ndarray:
    arr = field.dbar if hasattr(field, "dbar") else np.asarray(field, dtype=float)
    if arr.shape[-2:] != (2, 2):
        raise ValueError("tensor field must have shape (..., 2, 2)")
    return _vertex_values(mesh, arr, "tensor field")


def _vertex_values(mesh: TriMesh, arr: np.ndarray, what: str) -> np.ndarray:
    if len(arr) == mesh.n_vertices:
        return arr
    if len(arr) == len(mesh.node_map):
        return arr[mesh.vertex_rep]
    raise ValueError(
        f"{what} length {len(arr)} matches neither the {mesh.n_vertices} "
        f"mesh vertices nor the {len(mesh.node_map)} grid nodes")


def assemble(mesh: TriMesh, field, variant: str) -> DiscreteOperatorPair:
    """Assemble the sparse stiffness/mass pair of one operator variant.

    ``field`` is a metric field (or a bare array of per-node 2x2 diffusion
    tensors) given on mesh vertices or on the full grid; the element tensor
    is the average of the three corner tensors, evaluated once per triangle.

    For ``mixing_lb`` the stiffness integrand is the density-weighted tensor
    rho * D-bar, and the product is formed per vertex before element
    averaging. The order matters: rho scales like 1/sqrt of the largest
    eigenvalue exactly where D-bar saturates, so the continuum integrand
    stays bounded by the square root of the anisotropy, whereas averaging
    the factors separately pairs a saturated tensor with its neighbors'
    moderate density — reintroducing the saturated scale, whose roundoff
    then buries the constant kernel and the small end of the spectrum. The
    density comes from the field's carried values (accurate by
    construction); bare tensor arrays fall back to per-vertex determinants,
    which are only trustworthy while the anisotropy is far from 1/eps.
    """
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}; expected one of {VARIANTS}")
    dbar = _vertex_tensors(mesh, field)
    dk = dbar[mesh.triangles].mean(axis=1)
    det = dk[:, 0, 0] * dk[:, 1, 1] - dk[:, 0, 1] * dk[:, 1, 0]
    if np.any(det <= 0.0) or np.any(dk[:, 0, 0] <= 0.0):
        bad = np.flatnonzero((det <= 0.0) | (dk[:, 0, 0] <= 0.0))
        raise ValueError(
            f"non-SPD element tensor after vertex averaging in "
            f"{len(bad)} triangle(s); first triangle {bad[0]}")

    coords = mesh.tri_coords
    v1 = coords[:, 1] - coords[:, 0]
    v2 = coords[:, 2] - coords[:, 0]
    area2 = v1[:, 0] * v2[:, 1] - v1[:, 1] * v2[:, 0]
    if np.any(area2 <= 0.0):
        raise ValueError("mesh contains non-positively-oriented triangles")
    area = 0.5 * area2

    x = coords[..., 0]
    y = coords[..., 1]
    grads = np.empty((mesh.n_triangles, 3, 2))
    for a in range(3):
        b, c = (a + 1) % 3, (a + 2) % 3
        grads[:, a, 0] = y[:, b] - y[:, c]
        grads[:, a, 1] = x[:, c] - x[:, b]
    grads /= area2[:, None, None]

    if variant == "mixing_lb":
        rho = getattr(field, "density", None)
        if rho is None:
            det_v = np.linalg.det(dbar)
            if np.any(det_v <= 0.0):
                raise ValueError(
                    "tensor array with non-positive vertex determinant; "
                    "pass a metric field carrying its density instead")
            rho_v = det_v ** -0.5
        else:
            rho_v = _vertex_values(mesh, np.asarray(rho, dtype=float), "density")
            if np.any(rho_v <= 0.0):
                raise ValueError("density must be positive everywhere")
        stiff_dk = (rho_v[:, None, None] * dbar)[mesh.triangles].mean(axis=1)
        weight = rho_v[mesh.triangles].mean(axis=1)
    else:
        stiff_dk = dk
        weight = np.ones_like(det)

    e_stiff = np.einsum("t,tad,tde,tbe->tab", area, grads, stiff_dk, grads)
    e_stiff = 0.5 * (e_stiff + np.swapaxes(e_stiff, 1, 2))
    e_mass = (weight * area)[:, None, None] * _MASS_TEMPLATE

    rows = np.broadcast_to(mesh.triangles[:, :, None], e_stiff.shape).ravel()
    cols = np.broadcast_to(mesh.triangles[:, None, :], e_stiff.shape).ravel()
    n = mesh.n_vertices
    stiffness = sparse.coo_matrix((e_stiff.ravel(), (rows, cols)),
                                  shape=(n, n)).tocsr()
    mass = sparse.coo_matrix((e_mass.ravel(), (rows, cols)),
                             shape=(n, n)).tocsr()
    return DiscreteOperatorPair(stiffness=stiffness, mass=mass,
                                variant=variant, mesh=mesh)


def rayleigh_quotient(pair: DiscreteOperatorPair, w: np.ndarray) -> float:
    """Rayleigh value -(w^T S w)/(w^T M w) of a nodal vector; always <= 0."""
    w = np.asarray(w, dtype=float)
    norm = w @ (pair.mass @ w)
    if not norm > 0.0:
        raise ValueError("Rayleigh quotient of a zero (or mass-degenerate) vector")
    return float(-(w @ (pair.stiffness @ w)) / norm)


def vertex_lebesgue_mass(mesh: TriMesh) -> np.ndarray:
    """Lumped flat-volume mass per vertex (one third of adjacent areas).

    Independent of any tensor field; sums to the domain area and serves as
    the flat volume measure of vertex sets.
    """
    v1 = mesh.tri_coords[:, 1] - mesh.tri_coords[:, 0]
    v2 = mesh.tri_coords[:, 2] - mesh.tri_coords[:, 0]
    area = 0.5 * (v1[:, 0] * v2[:, 1] - v1[:, 1] * v2[:, 0])
    out = np.zeros(mesh.n_vertices)
    np.add.at(out, mesh.triangles.ravel(), np.repeat(area / 3.0, 3))
    return out
