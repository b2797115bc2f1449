"""File formats: grid fields, spectra, sparse matrices, checksums, rasters.

All text formats are deterministic: floats are written with 17 significant
digits (bit-exact round-trip for doubles), spectra with 15, and integer
fields verbatim. Rasters are binary portable pixmaps built from an embedded
colormap table, so identical fields produce identical bytes.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..flow_models import FlowModel

FLOAT_FMT = "{:.16e}"
SPECTRUM_FMT = "{:.14e}"


@dataclass
class GridFieldFile:
    """A named scalar field sampled on a row-major rectangular grid."""

    field: str
    nx: int
    ny: int
    bounds: tuple[float, float, float, float]
    dtype: str
    values: np.ndarray

    def __post_init__(self):
        if self.dtype not in ("f64", "i32"):
            raise ValueError(f"dtype must be f64 or i32, got {self.dtype!r}")
        want = np.float64 if self.dtype == "f64" else np.int32
        self.values = np.asarray(self.values, dtype=want).reshape(-1)
        if len(self.values) != self.nx * self.ny:
            raise ValueError(
                f"field {self.field!r}: {len(self.values)} values for a "
                f"{self.nx}x{self.ny} grid")

    @property
    def grid(self) -> np.ndarray:
        """Values as a (ny, nx) array, row j holding grid row j."""
        return self.values.reshape(self.ny, self.nx)


def write_grid_field(path, field: GridFieldFile) -> Path:
    """Write a grid field as a text file with a fixed header."""
    path = Path(path)
    b = field.bounds
    lines = [
        f"field {field.field}",
        f"nx {field.nx}",
        f"ny {field.ny}",
        "xmin {} xmax {} ymin {} ymax {}".format(
            FLOAT_FMT.format(b[0]), FLOAT_FMT.format(b[1]),
            FLOAT_FMT.format(b[2]), FLOAT_FMT.format(b[3])),
        f"dtype {field.dtype}",
        "layout row-major",
    ]
    grid = field.grid
    if field.dtype == "f64":
        lines += [" ".join(FLOAT_FMT.format(v) for v in row) for row in grid]
    else:
        lines += [" ".join(str(int(v)) for v in row) for row in grid]
    path.write_text("\n".join(lines) + "\n")
    return path


def read_grid_field(path) -> GridFieldFile:
    """Read a grid field written by :func:`write_grid_field` (bit-exact)."""
    text = Path(path).read_text()
    lines = text.splitlines()
    header = {}
    data_start = None
    for i, line in enumerate(lines):
        tokens = line.split()
        if not tokens:
            continue
        if tokens[0] == "layout":
            if tokens[1:] != ["row-major"]:
                raise ValueError(f"unsupported layout {line!r}")
            data_start = i + 1
            break
        if tokens[0] == "xmin":
            header["bounds"] = (float(tokens[1]), float(tokens[3]),
                                float(tokens[5]), float(tokens[7]))
        else:
            header[tokens[0]] = tokens[1]
    if data_start is None:
        raise ValueError(f"{path}: missing layout line")
    nx = int(header["nx"])
    ny = int(header["ny"])
    dtype = header["dtype"]
    flat = " ".join(lines[data_start:]).split()
    if len(flat) != nx * ny:
        raise ValueError(f"{path}: expected {nx * ny} values, found {len(flat)}")
    if dtype == "f64":
        values = np.array([float(v) for v in flat])
    else:
        values = np.array([int(v) for v in flat], dtype=np.int32)
    return GridFieldFile(field=header["field"], nx=nx, ny=ny,
                         bounds=header["bounds"], dtype=dtype, values=values)


def write_spectrum(path, eigenvalues) -> Path:
    """Write a spectrum as two-column text: index, eigenvalue (15 digits)."""
    path = Path(path)
    lines = [f"{i + 1} {SPECTRUM_FMT.format(lam)}"
             for i, lam in enumerate(np.asarray(eigenvalues, dtype=float))]
    path.write_text("\n".join(lines) + "\n")
    return path


def read_spectrum(path) -> np.ndarray:
    rows = [line.split() for line in Path(path).read_text().splitlines() if line.strip()]
    return np.array([float(r[1]) for r in rows])


def write_coo(path, matrix) -> Path:
    """Write a sparse matrix as (row, col, value) triples, row-major sorted."""
    coo = matrix.tocoo()
    order = np.lexsort((coo.col, coo.row))
    lines = [f"{coo.row[i]} {coo.col[i]} {FLOAT_FMT.format(coo.data[i])}"
             for i in order]
    path = Path(path)
    path.write_text("\n".join(lines) + "\n")
    return path


def sha256_file(path) -> str:
    digest = hashlib.sha256()
    digest.update(Path(path).read_bytes())
    return digest.hexdigest()


def write_checksum_manifest(path, files) -> Path:
    """Write '<sha256>  <basename>' lines for the given files."""
    path = Path(path)
    lines = [f"{sha256_file(f)}  {Path(f).name}" for f in files]
    path.write_text("\n".join(lines) + "\n")
    return path


_COLORMAPS = {
    "viridis": np.array([
        [0.267004, 0.004874, 0.329415],
        [0.282623, 0.140926, 0.457517],
        [0.253935, 0.265254, 0.529983],
        [0.206756, 0.371758, 0.553117],
        [0.163625, 0.471133, 0.558148],
        [0.127568, 0.566949, 0.550556],
        [0.134692, 0.658636, 0.517649],
        [0.266941, 0.748751, 0.440573],
        [0.477504, 0.821444, 0.318195],
        [0.741388, 0.873449, 0.149561],
        [0.993248, 0.906157, 0.143936],
    ]),
    "gray": np.array([[0.0, 0.0, 0.0], [1.0, 1.0, 1.0]]),
}


def render_heatmap(field: GridFieldFile, colormap: str = "viridis",
                   clip=None) -> bytes:
    """Render a float field as a binary portable pixmap (P6), top row = max y.

    Values map linearly onto the colormap over [min, max] of the data or the
    explicit ``clip`` range (values outside are clipped). NaNs are reported
    with their grid indices.
    """
    if field.dtype != "f64":
        raise ValueError("heatmap rendering needs an f64 field")
    try:
        anchors = _COLORMAPS[colormap]
    except KeyError:
        raise ValueError(
            f"unknown colormap {colormap!r}; available: "
            f"{', '.join(sorted(_COLORMAPS))}") from None
    grid = field.grid
    nan_idx = np.argwhere(np.isnan(grid))
    if len(nan_idx):
        listed = ", ".join(f"(row {r}, col {c})" for r, c in nan_idx[:5])
        raise ValueError(
            f"field {field.field!r} contains {len(nan_idx)} NaN value(s) at "
            f"{listed}{'...' if len(nan_idx) > 5 else ''}")
    if clip is not None:
        vmin, vmax = float(clip[0]), float(clip[1])
    else:
        vmin, vmax = float(grid.min()), float(grid.max())
    span = vmax - vmin
    if span > 0.0:
        t = np.clip((grid - vmin) / span, 0.0, 1.0)
    else:
        t = np.zeros_like(grid)
    pos = np.linspace(0.0, 1.0, len(anchors))
    rgb = np.stack([np.interp(t, pos, anchors[:, c]) for c in range(3)], axis=-1)
    # image rows run top to bottom; grid rows run bottom (ymin) to top
    pixels = np.rint(rgb[::-1] * 255.0).astype(np.uint8)
    header = f"P6\n{field.nx} {field.ny}\n255\n".encode("ascii")
    return header + pixels.tobytes()


def write_ppm(path, data: bytes) -> Path:
    path = Path(path)
    path.write_bytes(data)
    return path


def parse_velocity_data(path) -> FlowModel:
    """Build a flow model from gridded velocity samples.

    The file holds a header (nx, ny, nt, bounds, times) followed by nt
    blocks, each with ny rows of nx u-values then ny rows of nx v-values.
    The resulting field interpolates bilinearly in space and linearly in
    time; queries outside the sampled box or time range use the nearest
    sample (clamped extension), and the model's closed axes flag genuinely
    escaping trajectories as errors.
    """
    path = Path(path)
    tokens = path.read_text().split()
    pos = 0

    def take(expect):
        nonlocal pos
        if tokens[pos] != expect:
            raise ValueError(f"{path}: expected {expect!r}, found {tokens[pos]!r}")
        pos += 1
        value = tokens[pos]
        pos += 1
        return value

    nx = int(take("nx"))
    ny = int(take("ny"))
    nt = int(take("nt"))
    xmin = float(take("xmin"))
    xmax = float(take("xmax"))
    ymin = float(take("ymin"))
    ymax = float(take("ymax"))
    if tokens[pos] != "times":
        raise ValueError(f"{path}: expected times line")
    pos += 1
    times = np.array([float(tokens[pos + i]) for i in range(nt)])
    pos += nt
    if nt > 1 and np.any(np.diff(times) <= 0.0):
        raise ValueError(f"{path}: times must be strictly increasing")
    need = 2 * nt * nx * ny
    data = tokens[pos:]
    if len(data) != need:
        raise ValueError(
            f"{path}: expected {need} velocity values "
            f"({nt} instants x 2 components x {nx}x{ny}), found {len(data)}")
    blocks = np.array([float(v) for v in data]).reshape(nt, 2, ny, nx)
    u_blocks = blocks[:, 0]
    v_blocks = blocks[:, 1]

    dx = (xmax - xmin) / (nx - 1)
    dy = (ymax - ymin) / (ny - 1)

    def interp_velocity(t, xy, params):
        if nt == 1:
            u_lo, v_lo = u_blocks[0], v_blocks[0]
            u_hi, v_hi = u_lo, v_lo
            wt = 0.0
        else:
            j = int(np.clip(np.searchsorted(times, t, side="right") - 1, 0, nt - 2))
            wt = float(np.clip((t - times[j]) / (times[j + 1] - times[j]), 0.0, 1.0))
            u_lo, v_lo = u_blocks[j], v_blocks[j]
            u_hi, v_hi = u_blocks[j + 1], v_blocks[j + 1]
        x = np.clip(xy[..., 0], xmin, xmax)
        y = np.clip(xy[..., 1], ymin, ymax)
        fx = np.clip((x - xmin) / dx, 0.0, nx - 1.0)
        fy = np.clip((y - ymin) / dy, 0.0, ny - 1.0)
        i0 = np.minimum(fx.astype(np.int64), nx - 2)
        j0 = np.minimum(fy.astype(np.int64), ny - 2)
        wx = fx - i0
        wy = fy - j0

        def bilinear(block):
            return ((1 - wx) * (1 - wy) * block[j0, i0]
                    + wx * (1 - wy) * block[j0, i0 + 1]
                    + (1 - wx) * wy * block[j0 + 1, i0]
                    + wx * wy * block[j0 + 1, i0 + 1])

        u = (1 - wt) * bilinear(u_lo) + wt * bilinear(u_hi)
        v = (1 - wt) * bilinear(v_lo) + wt * bilinear(v_hi)
        return np.stack([u, v], axis=-1)

    t_span = (float(times[0]), float(times[-1])) if nt > 1 else \
        (float(times[0]), float(times[0]) + 1.0)
    return FlowModel(name=path.stem, domain=(xmin, xmax, ymin, ymax),
                     periodic=(False, False), t_span=t_span, params={},
                     velocity_fn=interp_velocity)


def velocity_data_text(nx, ny, nt, bounds, times, u_blocks, v_blocks) -> str:
    """Serialize gridded velocity samples in the parse_velocity_data layout."""
    xmin, xmax, ymin, ymax = bounds
    parts = [f"nx {nx}", f"ny {ny}", f"nt {nt}",
             f"xmin {FLOAT_FMT.format(xmin)} xmax {FLOAT_FMT.format(xmax)} "
             f"ymin {FLOAT_FMT.format(ymin)} ymax {FLOAT_FMT.format(ymax)}",
             "times " + " ".join(FLOAT_FMT.format(t) for t in times)]
    for k in range(nt):
        for block in (u_blocks[k], v_blocks[k]):
            arr = np.asarray(block).reshape(ny, nx)
            parts += [" ".join(FLOAT_FMT.format(v) for v in row) for row in arr]
    return "\n".join(parts) + "\n"
