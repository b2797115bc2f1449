"""End-to-end pipeline: flow map -> metric tensors -> spectrum -> clusters.

Every stage writes its products into one output directory with fixed file
names and deterministic encodings, and later stages can reload those
products, so stages may run in one process or as separate invocations.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dataclass_field
from pathlib import Path

import numpy as np

from .. import clustering, fem_operator, flow_map, flow_models, heat_flow, spectral
from ..mixing_geometry import MixingMetricField, build_metric_field, field_from_tensors
from . import formats

STAGES = ("flowmap", "tensor", "spectrum", "cluster", "heatflow")

TENSOR_FIELDS = ("log10_anisotropy", "density", "eff_diffusivity",
                 "v_max_x", "v_max_y")

FLOWMAP_CACHE = ("times.npy", "positions.npy", "jacobians.npy")


class PipelineError(RuntimeError):
    """A stage failure, tagged with the stage that raised it."""

    def __init__(self, stage: str, message: str):
        super().__init__(message)
        self.stage = stage


@dataclass
class RunConfig:
    """Everything one pipeline run depends on."""

    model: str
    model_params: dict = dataclass_field(default_factory=dict)
    nx: int = 101
    ny: int = 101
    bounds: tuple[float, float, float, float] | None = None
    t0: float | None = None
    t_final: float | None = None
    n_instants: int = 21
    max_step: float = 0.01
    fd_offset: float | None = None
    weighting: str = "uniform"
    variant: str = "dynamic_laplacian"
    k: int = 21
    k_clusters: int | None = None
    drop_first: bool = False
    restarts: int = 20
    seed: int = 0
    eps: float = 1e-3
    dt: float = 0.1
    nsteps: int = 0
    frame_stride: int = 1
    heat_init: str = "cluster:0"
    colormap: str = "viridis"
    outdir: str = "mixgeom_run"
    debug_check: bool = False

    def validate(self) -> None:
        if self.nx < 2 or self.ny < 2:
            raise ValueError("grid needs at least 2 nodes per axis")
        if self.n_instants < 2:
            raise ValueError("need at least 2 time instants")
        if not self.max_step > 0.0:
            raise ValueError("max_step must be positive")
        if self.variant not in fem_operator.VARIANTS:
            raise ValueError(f"unknown operator variant {self.variant!r}; "
                             f"choose from {', '.join(fem_operator.VARIANTS)}")
        if self.weighting not in ("uniform", "trapezoid"):
            raise ValueError(f"unknown weighting {self.weighting!r}")
        if self.k < 2:
            raise ValueError("need at least 2 eigenpairs")
        if self.k_clusters is not None and self.k_clusters < 2:
            raise ValueError("need at least 2 clusters")
        if self.restarts < 1:
            raise ValueError("need at least 1 clustering restart")
        if self.nsteps < 0 or self.frame_stride < 1:
            raise ValueError("nsteps must be >= 0 and frame_stride >= 1")
        if not (self.eps > 0.0 and self.dt > 0.0):
            raise ValueError("eps and dt must be positive")
        if self.colormap not in ("viridis", "gray"):
            raise ValueError(f"unknown colormap {self.colormap!r}")
        self.parse_heat_init()

    def parse_heat_init(self):
        """Validate and decompose the heat initial-condition selector."""
        kind, _, rest = self.heat_init.partition(":")
        if kind == "cluster":
            try:
                return ("cluster", int(rest))
            except ValueError:
                raise ValueError(
                    f"heat_init {self.heat_init!r}: cluster id must be an integer"
                ) from None
        if kind == "box":
            parts = rest.split(",")
            if len(parts) != 4:
                raise ValueError(
                    f"heat_init {self.heat_init!r}: box needs xmin,xmax,ymin,ymax")
            box = tuple(float(p) for p in parts)
            if not (box[0] < box[1] and box[2] < box[3]):
                raise ValueError(f"heat_init {self.heat_init!r}: empty box")
            return ("box", box)
        raise ValueError(
            f"heat_init {self.heat_init!r}: expected cluster:<id> or "
            f"box:xmin,xmax,ymin,ymax")


def resolve_model(config: RunConfig) -> flow_models.FlowModel:
    """A named model from the catalogue, or a velocity-data file."""
    if config.model in flow_models.model_names():
        return flow_models.named_model(config.model, **config.model_params)
    path = Path(config.model)
    if path.is_file():
        if config.model_params:
            raise ValueError("model parameter overrides only apply to named models")
        return formats.parse_velocity_data(path)
    raise ValueError(
        f"unknown model {config.model!r}: not in the catalogue "
        f"({', '.join(flow_models.model_names())}) and not an existing file")


def _wrap(stage: str, exc: Exception) -> PipelineError:
    return PipelineError(stage, f"{type(exc).__name__}: {exc}")


class PipelineContext:
    """Holds a run's in-memory objects; reloads from the run directory on demand."""

    def __init__(self, config: RunConfig):
        config.validate()
        self.config = config
        self.outdir = Path(config.outdir)
        self.model = resolve_model(config)
        self.grid = flow_map.grid_for_model(self.model, config.nx, config.ny,
                                            bounds=config.bounds)
        self.mesh = fem_operator.build_mesh(self.grid.bounds, config.nx,
                                            config.ny, self.model.periodic)
        self.sample: flow_map.FlowMapSample | None = None
        self.metric_field: MixingMetricField | None = None
        self.pair: fem_operator.DiscreteOperatorPair | None = None
        self.spectrum: spectral.SpectralResult | None = None
        self.clusters: clustering.ClusterAssignment | None = None
        self.vertex_labels: np.ndarray | None = None
        self.heat_states: list[heat_flow.HeatState] | None = None

    # -- helpers -----------------------------------------------------------

    def times(self) -> np.ndarray:
        t0 = self.config.t0 if self.config.t0 is not None else self.model.t_span[0]
        t1 = (self.config.t_final if self.config.t_final is not None
              else self.model.t_span[1])
        if not t1 > t0:
            raise ValueError(f"degenerate time window [{t0}, {t1}]")
        return np.linspace(t0, t1, self.config.n_instants)

    def grid_field(self, name: str, values, dtype: str = "f64") -> formats.GridFieldFile:
        return formats.GridFieldFile(field=name, nx=self.config.nx,
                                     ny=self.config.ny, bounds=self.grid.bounds,
                                     dtype=dtype, values=values)

    def to_grid(self, vertex_values: np.ndarray) -> np.ndarray:
        """Expand vertex values to the full grid (seam nodes duplicated)."""
        return np.asarray(vertex_values)[self.mesh.node_map]

    def to_vertices(self, grid_values: np.ndarray) -> np.ndarray:
        """Restrict grid values to one value per mesh vertex."""
        return np.asarray(grid_values)[self.mesh.vertex_rep]

    def _missing(self, stage: str, names, needed_by: str) -> PipelineError:
        listed = ", ".join(str(self.outdir / n) for n in names)
        return PipelineError(
            needed_by, f"missing upstream product(s) {listed}; "
            f"run the {stage} stage first")

    # -- stage: flowmap ----------------------------------------------------

    def run_flowmap(self) -> flow_map.FlowMapSample:
        cfg = self.config
        try:
            times = self.times()
            control = flow_map.StepControl(max_step=cfg.max_step)
            sample = flow_map.sample_flow(self.model, self.grid, times,
                                          step_control=control,
                                          fd_offset=cfg.fd_offset)
            if cfg.debug_check:
                flow_map.validate_sample(sample, self.grid)
        except PipelineError:
            raise
        except Exception as exc:
            raise _wrap("flowmap", exc) from exc
        self.outdir.mkdir(parents=True, exist_ok=True)
        np.save(self.outdir / "times.npy", sample.times)
        np.save(self.outdir / "positions.npy", sample.positions)
        np.save(self.outdir / "jacobians.npy", sample.jacobians)
        formats.write_checksum_manifest(
            self.outdir / "flowmap_manifest.txt",
            [self.outdir / name for name in FLOWMAP_CACHE])
        self.sample = sample
        return sample

    def load_sample(self, needed_by: str) -> flow_map.FlowMapSample:
        if self.sample is not None:
            return self.sample
        paths = [self.outdir / name for name in FLOWMAP_CACHE]
        if not all(p.is_file() for p in paths):
            raise self._missing("flowmap", FLOWMAP_CACHE, needed_by)
        times, positions, jacobians = (np.load(p) for p in paths)
        self.sample = flow_map.FlowMapSample(times=times, positions=positions,
                                             jacobians=jacobians, grid=self.grid)
        return self.sample

    # -- stage: tensor -----------------------------------------------------

    def run_tensor(self) -> MixingMetricField:
        cfg = self.config
        sample = self.load_sample("tensor")
        try:
            metric = build_metric_field(sample, weighting=cfg.weighting,
                                        debug_check=cfg.debug_check)
        except Exception as exc:
            raise _wrap("tensor", exc) from exc
        np.save(self.outdir / "dbar.npy", metric.dbar)
        # the determinant cannot be recovered from the stored tensors at
        # saturated anisotropy, so persist it (as carried by the density)
        np.save(self.outdir / "dets.npy", metric.eff_diffusivity ** 2)
        scalars = {
            "log10_anisotropy": metric.log10_anisotropy,
            "density": metric.density,
            "eff_diffusivity": metric.eff_diffusivity,
            "v_max_x": metric.v_max[..., 0],
            "v_max_y": metric.v_max[..., 1],
        }
        for name in TENSOR_FIELDS:
            formats.write_grid_field(self.outdir / f"{name}.txt",
                                     self.grid_field(name, scalars[name]))
        self.metric_field = metric
        return metric

    def load_metric_field(self, needed_by: str) -> MixingMetricField:
        if self.metric_field is not None:
            return self.metric_field
        path = self.outdir / "dbar.npy"
        if not path.is_file():
            raise self._missing("tensor", ["dbar.npy"], needed_by)
        det_path = self.outdir / "dets.npy"
        det = np.load(det_path) if det_path.is_file() else None
        self.metric_field = field_from_tensors(np.load(path), det=det)
        return self.metric_field

    # -- stage: spectrum ---------------------------------------------------

    def _eigvec_name(self, index: int) -> str:
        width = max(2, len(str(self.config.k)))
        return f"w_{index:0{width}d}.txt"

    def run_spectrum(self) -> spectral.SpectralResult:
        cfg = self.config
        metric = self.load_metric_field("spectrum")
        try:
            self.pair = fem_operator.assemble(self.mesh, metric, cfg.variant)
            result = spectral.solve_spectrum(self.pair, cfg.k)
        except Exception as exc:
            raise _wrap("spectrum", exc) from exc
        formats.write_spectrum(self.outdir / "spectrum.txt", result.eigenvalues)
        for j in range(cfg.k):
            w_grid = self.to_grid(result.eigenfunctions[:, j])
            formats.write_grid_field(
                self.outdir / self._eigvec_name(j + 1),
                self.grid_field(f"w_{j + 1}", w_grid))
        self.spectrum = result
        return result

    def load_pair(self, needed_by: str) -> fem_operator.DiscreteOperatorPair:
        if self.pair is None:
            metric = self.load_metric_field(needed_by)
            try:
                self.pair = fem_operator.assemble(self.mesh, metric,
                                                  self.config.variant)
            except Exception as exc:
                raise _wrap(needed_by, exc) from exc
        return self.pair

    def load_spectrum(self, needed_by: str) -> spectral.SpectralResult:
        if self.spectrum is not None:
            return self.spectrum
        spath = self.outdir / "spectrum.txt"
        names = [self._eigvec_name(j + 1) for j in range(self.config.k)]
        missing = [n for n in ["spectrum.txt"] + names
                   if not (self.outdir / n).is_file()]
        if missing:
            raise self._missing("spectrum", missing, needed_by)
        eigenvalues = formats.read_spectrum(spath)
        columns = [self.to_vertices(
            formats.read_grid_field(self.outdir / name).values)
            for name in names]
        vecs = np.column_stack(columns)
        if len(eigenvalues) >= 3:
            gap_index, confidence = spectral.eigengap_scan(
                eigenvalues, m=min(spectral.DEFAULT_SCAN_DEPTH, len(eigenvalues)))
        else:
            gap_index, confidence = None, 0.0
        self.spectrum = spectral.SpectralResult(
            eigenvalues=eigenvalues, eigenfunctions=vecs, gap_index=gap_index,
            gap_confidence=confidence, residuals=np.full(len(eigenvalues), np.nan))
        return self.spectrum

    # -- stage: cluster ----------------------------------------------------

    def resolve_k_clusters(self, result: spectral.SpectralResult) -> int:
        cfg = self.config
        if cfg.k_clusters is not None:
            return cfg.k_clusters
        if result.gap_index is not None and \
                result.gap_confidence >= spectral.GAP_TRIGGER:
            return result.gap_index
        raise PipelineError(
            "cluster",
            f"eigengap detection is not confident (best candidate "
            f"{result.gap_index} at confidence {result.gap_confidence:.2f} "
            f"< {spectral.GAP_TRIGGER}); pass an explicit cluster count")

    def run_cluster(self) -> clustering.ClusterAssignment:
        cfg = self.config
        result = self.load_spectrum("cluster")
        k_c = self.resolve_k_clusters(result)
        try:
            embedding = clustering.build_embedding(result, k_c,
                                                   drop_first=cfg.drop_first)
            assignment = clustering.kmeans(embedding, k_c,
                                           restarts=cfg.restarts, seed=cfg.seed)
        except Exception as exc:
            raise _wrap("cluster", exc) from exc
        self.vertex_labels = assignment.labels
        grid_labels = self.to_grid(assignment.labels)
        formats.write_grid_field(self.outdir / "labels.txt",
                                 self.grid_field("labels", grid_labels, dtype="i32"))
        self.clusters = assignment
        return assignment

    def load_labels(self, needed_by: str) -> np.ndarray:
        if self.vertex_labels is not None:
            return self.vertex_labels
        path = self.outdir / "labels.txt"
        if not path.is_file():
            raise self._missing("cluster", ["labels.txt"], needed_by)
        self.vertex_labels = self.to_vertices(formats.read_grid_field(path).values)
        return self.vertex_labels

    # -- stage: heatflow ---------------------------------------------------

    def heat_initial(self) -> np.ndarray:
        kind, value = self.config.parse_heat_init()
        if kind == "cluster":
            labels = self.load_labels("heatflow")
            u0 = (labels == value).astype(float)
            if not u0.any():
                raise PipelineError(
                    "heatflow", f"cluster {value} is empty; labels hold "
                    f"{sorted(np.unique(labels).tolist())}")
            return u0
        xmin, xmax, ymin, ymax = value
        v = self.mesh.vertices
        u0 = ((v[:, 0] >= xmin) & (v[:, 0] <= xmax)
              & (v[:, 1] >= ymin) & (v[:, 1] <= ymax)).astype(float)
        if not u0.any():
            raise PipelineError("heatflow", "no mesh vertex lies in the requested box")
        return u0

    def run_heatflow(self) -> list[heat_flow.HeatState]:
        cfg = self.config
        pair = self.load_pair("heatflow")
        u0 = self.heat_initial()
        try:
            states = heat_flow.evolve(pair, u0, cfg.eps, cfg.dt, cfg.nsteps,
                                      store_every=cfg.frame_stride)
        except Exception as exc:
            raise _wrap("heatflow", exc) from exc
        clip = (float(np.min(states[0].u)), float(np.max(states[0].u)))
        if clip[0] == clip[1]:
            clip = (clip[0], clip[0] + 1.0)
        frame_names = []
        lines = []
        for i, state in enumerate(states):
            name = f"frame_{i:04d}.ppm"
            gf = self.grid_field(f"u_t{i}", self.to_grid(state.u))
            formats.write_ppm(self.outdir / name,
                              formats.render_heatmap(gf, colormap=cfg.colormap,
                                                     clip=clip))
            frame_names.append(name)
            fmt = formats.FLOAT_FMT.format
            lines.append(f"{i} t {fmt(state.t)} min {fmt(np.min(state.u))} "
                         f"max {fmt(np.max(state.u))} "
                         f"mass {fmt(state.total_mass)}")
        (self.outdir / "frames_index.txt").write_text("\n".join(lines) + "\n")
        formats.write_checksum_manifest(
            self.outdir / "frames_manifest.txt",
            [self.outdir / n for n in frame_names])
        formats.write_grid_field(self.outdir / "u_final.txt",
                                 self.grid_field("u_final",
                                                 self.to_grid(states[-1].u)))
        self.heat_states = states
        return states


def run_stage(config: RunConfig, stage: str) -> PipelineContext:
    """Run one named stage (loading upstream products from the run directory)."""
    if stage not in STAGES:
        raise ValueError(f"unknown stage {stage!r}; choose from {', '.join(STAGES)}")
    ctx = PipelineContext(config)
    getattr(ctx, f"run_{stage}")()
    return ctx


def run_pipeline(config: RunConfig) -> PipelineContext:
    """Run all stages in order; the heat stage only when nsteps > 0."""
    ctx = PipelineContext(config)
    ctx.run_flowmap()
    ctx.run_tensor()
    ctx.run_spectrum()
    ctx.run_cluster()
    if config.nsteps > 0:
        ctx.run_heatflow()
    return ctx


# The stencil offsets are sized by the dynamics, not the grid: over these
# windows the strongest material stretching reaches 1e4..1e8, and a stencil
# wider than about (roundoff / (compression * stretching^2))^(1/3) either
# delinearizes (h * stretching ~ 1) or, much smaller, drowns in cancellation.
BENCHMARK_PRESETS: dict[str, dict] = {
    "double_gyre": dict(model="double_gyre", nx=101, ny=101, t0=0.0,
                        t_final=1.0, n_instants=21, max_step=0.002,
                        fd_offset=1e-6, k=21, k_clusters=3,
                        variant="mixing_lb"),
    "cylinder": dict(model="cylinder", nx=129, ny=65, t0=0.0, t_final=40.0,
                     n_instants=41, max_step=0.02, fd_offset=1e-6, k=21,
                     k_clusters=3, variant="mixing_lb"),
    "bickley": dict(model="bickley", nx=241, ny=73, t0=0.0, t_final=40.0,
                    n_instants=81, max_step=0.0125, fd_offset=1e-6, k=21,
                    k_clusters=7, variant="mixing_lb"),
}


def benchmark_config(name: str, outdir, **overrides) -> RunConfig:
    """The pinned configuration of one named benchmark case."""
    if name not in BENCHMARK_PRESETS:
        raise ValueError(f"unknown benchmark {name!r}; choose from "
                         f"{', '.join(sorted(BENCHMARK_PRESETS))}")
    settings = dict(BENCHMARK_PRESETS[name])
    settings.update(overrides)
    settings["outdir"] = str(outdir)
    return RunConfig(**settings)


def run_benchmark(name: str, outdir, **overrides) -> PipelineContext:
    return run_pipeline(benchmark_config(name, outdir, **overrides))
