"""Command-line interface: stage subcommands, benchmark presets, rendering.

Flags mirror the run-configuration keys one-to-one; every product lands in
the run directory, so stages can be executed in one process or separately.
Exits 0 on success, 1 with a stage-tagged message on stderr otherwise.
"""

from __future__ import annotations

import argparse
import sys

import numpy as np

from .. import spectral
from . import formats
from .pipeline import (BENCHMARK_PRESETS, PipelineError, RunConfig, STAGES,
                       benchmark_config, run_pipeline, run_stage)


def _add_run_options(parser: argparse.ArgumentParser, require_model: bool) -> None:
    g = parser.add_argument_group("run configuration")
    g.add_argument("--model", required=require_model,
                   help="catalogue model name or velocity-data file path")
    g.add_argument("--model-param", action="append", default=[],
                   metavar="NAME=VALUE",
                   help="override one named-model parameter (repeatable)")
    g.add_argument("--nx", type=int, default=101, help="grid nodes along x")
    g.add_argument("--ny", type=int, default=101, help="grid nodes along y")
    g.add_argument("--bounds", type=float, nargs=4, default=None,
                   metavar=("XMIN", "XMAX", "YMIN", "YMAX"),
                   help="material grid box (default: model domain)")
    g.add_argument("--t0", type=float, default=None, help="window start time")
    g.add_argument("--t-final", type=float, default=None, help="window end time")
    g.add_argument("--n-instants", type=int, default=21,
                   help="number of equidistant metric instants")
    g.add_argument("--max-step", type=float, default=0.01,
                   help="integrator step-size cap")
    g.add_argument("--fd-offset", type=float, default=None,
                   help="finite-difference seed offset (default: spacing/100)")
    g.add_argument("--weighting", choices=("uniform", "trapezoid"),
                   default="uniform", help="time-quadrature weights")
    g.add_argument("--variant", choices=("dynamic_laplacian", "mixing_lb"),
                   default="dynamic_laplacian", help="operator variant")
    g.add_argument("--k", type=int, default=21, help="number of eigenpairs")
    g.add_argument("--k-clusters", type=int, default=None,
                   help="cluster count (default: detected eigengap)")
    g.add_argument("--drop-first", action="store_true",
                   help="exclude the constant eigenfunction from the embedding")
    g.add_argument("--restarts", type=int, default=20, help="k-means restarts")
    g.add_argument("--seed", type=int, default=0, help="k-means seed")
    g.add_argument("--eps", type=float, default=1e-3, help="diffusivity scale")
    g.add_argument("--dt", type=float, default=0.1, help="heat-flow time step")
    g.add_argument("--nsteps", type=int, default=0, help="heat-flow steps")
    g.add_argument("--frame-stride", type=int, default=1,
                   help="store every n-th heat frame")
    g.add_argument("--heat-init", default="cluster:0",
                   help="initial set: cluster:<id> or box:xmin,xmax,ymin,ymax")
    g.add_argument("--colormap", choices=("viridis", "gray"), default="viridis",
                   help="heat-frame colormap")
    g.add_argument("--outdir", default="mixgeom_run", help="run directory")
    g.add_argument("--debug-check", action="store_true",
                   help="run extra internal cross-checks")


def _parse_model_params(pairs) -> dict:
    params = {}
    for pair in pairs:
        name, sep, value = pair.partition("=")
        if not sep or not name:
            raise ValueError(f"--model-param needs NAME=VALUE, got {pair!r}")
        params[name] = float(value)
    return params


def config_from_args(args) -> RunConfig:
    return RunConfig(
        model=args.model,
        model_params=_parse_model_params(args.model_param),
        nx=args.nx, ny=args.ny,
        bounds=tuple(args.bounds) if args.bounds else None,
        t0=args.t0, t_final=args.t_final, n_instants=args.n_instants,
        max_step=args.max_step, fd_offset=args.fd_offset,
        weighting=args.weighting, variant=args.variant, k=args.k,
        k_clusters=args.k_clusters, drop_first=args.drop_first,
        restarts=args.restarts, seed=args.seed, eps=args.eps, dt=args.dt,
        nsteps=args.nsteps, frame_stride=args.frame_stride,
        heat_init=args.heat_init, colormap=args.colormap,
        outdir=args.outdir, debug_check=args.debug_check)


def _print_spectrum(result) -> None:
    print("spectrum (eigenvalue index, eigenvalue):")
    for i, lam in enumerate(result.eigenvalues, start=1):
        print(f"  {i:3d} {lam:+.6e}")
    if result.gap_index is not None:
        verdict = ("" if result.gap_confidence >= spectral.GAP_TRIGGER
                   else " (below the confidence threshold; "
                        "pass --k-clusters explicitly)")
        print(f"eigengap after index {result.gap_index} "
              f"(confidence {result.gap_confidence:.2f}){verdict}")


def _report(ctx, stage: str) -> None:
    out = ctx.outdir
    if stage == "flowmap":
        n, k = ctx.sample.positions.shape[:2]
        print(f"[flowmap] {n} nodes x {k} instants -> {out}/positions.npy "
              f"(+ jacobians, times, checksum manifest)")
    elif stage == "tensor":
        amax = float(np.max(ctx.metric_field.log10_anisotropy))
        print(f"[tensor] diagnostic fields written to {out} "
              f"(max log10 anisotropy {amax:.2f})")
    elif stage == "spectrum":
        print(f"[spectrum] {len(ctx.spectrum.eigenvalues)} eigenpairs -> "
              f"{out}/spectrum.txt")
        _print_spectrum(ctx.spectrum)
    elif stage == "cluster":
        labels = ctx.clusters.labels
        sizes = np.bincount(labels)
        print(f"[cluster] {len(sizes)} clusters -> {out}/labels.txt "
              f"(sizes {', '.join(str(s) for s in sizes)})")
    elif stage == "heatflow":
        print(f"[heatflow] {len(ctx.heat_states)} frames -> {out} "
              f"(final mass {ctx.heat_states[-1].total_mass:.6e})")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mixgeom",
        description="Mixing geometry of finite-time flows: harmonic-mean "
                    "metric fields, operator spectra, coherent-set clusters.")
    sub = parser.add_subparsers(dest="command", required=True)

    for stage in STAGES:
        p = sub.add_parser(stage, help=f"run the {stage} stage")
        _add_run_options(p, require_model=True)

    p = sub.add_parser("benchmark", help="run a pinned benchmark preset")
    p.add_argument("name", choices=sorted(BENCHMARK_PRESETS),
                   help="benchmark case")
    p.add_argument("--outdir", required=True, help="run directory")
    for flag, kind in (("--nsteps", int), ("--frame-stride", int),
                       ("--eps", float), ("--dt", float),
                       ("--k-clusters", int), ("--seed", int),
                       ("--restarts", int)):
        p.add_argument(flag, type=kind, default=None,
                       help=f"override the preset's {flag[2:].replace('-', '_')}")
    p.add_argument("--heat-init", default=None,
                   help="override the preset's initial heat set")

    p = sub.add_parser("render", help="render a grid field file as a pixmap")
    p.add_argument("input", help="grid field text file")
    p.add_argument("-o", "--output", required=True, help="output .ppm path")
    p.add_argument("--colormap", choices=("viridis", "gray"),
                   default="viridis")
    p.add_argument("--clip", type=float, nargs=2, default=None,
                   metavar=("LO", "HI"), help="explicit color range")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "render":
            field = formats.read_grid_field(args.input)
            data = formats.render_heatmap(field, colormap=args.colormap,
                                          clip=args.clip)
            formats.write_ppm(args.output, data)
            print(f"[render] {args.input} -> {args.output} "
                  f"({field.nx}x{field.ny})")
            return 0
        if args.command == "benchmark":
            overrides = {key: getattr(args, key) for key in
                         ("nsteps", "frame_stride", "eps", "dt", "k_clusters",
                          "seed", "restarts", "heat_init")
                         if getattr(args, key) is not None}
            config = benchmark_config(args.name, args.outdir, **overrides)
            ctx = run_pipeline(config)
            stages_run = list(STAGES if config.nsteps > 0 else STAGES[:-1])
            for stage in stages_run:
                _report(ctx, stage)
            print(f"[benchmark] {args.name} complete -> {ctx.outdir}")
            return 0
        config = config_from_args(args)
        ctx = run_stage(config, args.command)
        _report(ctx, args.command)
        return 0
    except PipelineError as exc:
        print(f"error [{exc.stage}]: {exc}", file=sys.stderr)
        return 1
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
