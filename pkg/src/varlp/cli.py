"""Command-line pipeline: phantom -> project -> noise -> maps -> reconstruct.

Each verb reads its inputs from the paths in the ``[io]`` section, writes its
outputs atomically and prints a one-line summary.  Exit codes: 0 success,
2 configuration/input error, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import logging
import math
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import io, metrics
from .config import load_config
from .errors import (ConfigInvalid, DimensionMismatch, Divergence, ExponentOutOfRange,
                     FileError, GeometryInvalid, MapOverflow, MismatchedLogs,
                     NoConvergence, PartitionInvalid, SideTooSmall)
from .experiments import NoiseModel, apply_noise, generate_phantom
from .exponents import (InterpolationSpec, build_p_map, build_q_map, build_q_map_from_data,
                        make_adapt_hook, pilot_reconstruction)
from .operators import Geometry, radon_build
from .solvers import (RunLog, SolverConfig, StepSchedule, gamma_for_exponent, run,
                      write_runlog)
from .spaces import ExponentMap, validate_exponent_map

log = logging.getLogger("varlp")

CONFIG_ERRORS = (ConfigInvalid, DimensionMismatch, ExponentOutOfRange, FileError,
                 GeometryInvalid, PartitionInvalid, SideTooSmall, MismatchedLogs)
NUMERIC_ERRORS = (MapOverflow, Divergence, NoConvergence, FloatingPointError)


def _geometry(cfg) -> Geometry:
    return Geometry(**cfg.geometry)


def _operator(cfg):
    return radon_build(_geometry(cfg))


def _save_image(cfg, key, vector, shape):
    path = cfg.path(key)
    image = np.asarray(vector).reshape(shape)
    io.write_csv(path, image)
    if cfg.io["export_pgm"]:
        io.write_pgm(path.with_suffix(".pgm"), image)
    return path


def _load(cfg, key, size=None):
    data = io.read_vector(cfg.path(key))
    if size is not None and data.size != size:
        raise DimensionMismatch(
            f"{cfg.path(key)} has {data.size} values, expected {size}")
    return data


def cmd_phantom(cfg):
    g = _geometry(cfg)
    x = generate_phantom(g.image_side, cfg.phantom["kind"])
    path = _save_image(cfg, "phantom", x, g.image_shape)
    print(f"phantom: {g.image_side}x{g.image_side} -> {path}")


def cmd_project(cfg):
    g = _geometry(cfg)
    A = radon_build(g)
    x = _load(cfg, "phantom", A.cols)
    y = A.apply(x)
    path = _save_image(cfg, "sinogram", y, g.sinogram_shape)
    print(f"project: {g.num_angles} angles x {g.num_detectors} detectors, "
          f"max {y.max():.6g} -> {path}")


def noise_model(cfg) -> NoiseModel:
    sec = dict(cfg.noise)
    sec.pop("seed")
    bg, fg = sec.pop("background"), sec.pop("foreground")
    if sec["kind"] == "split":
        if bg is None or fg is None:
            raise ConfigInvalid("split noise needs [noise] background and foreground kinds")
        shared = {k: sec[k] for k in ("fraction", "mean", "variance", "low", "high")}
        return NoiseModel(kind="split", threshold=sec["threshold"],
                          background=NoiseModel(kind=bg, **shared),
                          foreground=NoiseModel(kind=fg, **shared))
    return NoiseModel(**sec)


def cmd_noise(cfg):
    g = _geometry(cfg)
    y = _load(cfg, "sinogram", g.num_angles * g.num_detectors)
    rng = np.random.default_rng(cfg.noise["seed"])
    noisy = apply_noise(y, noise_model(cfg), rng)
    changed = int(np.count_nonzero(noisy != y))
    path = _save_image(cfg, "noisy_sinogram", noisy, g.sinogram_shape)
    print(f"noise: {cfg.noise['kind']}, {changed}/{y.size} entries changed -> {path}")


def cmd_maps(cfg):
    A = _operator(cfg)
    g = A.geometry
    y = _load(cfg, "noisy_sinogram", A.rows)
    pc = cfg.pilot
    subsets = pc["num_subsets"] or cfg.solver["num_subsets"]
    pilot = pilot_reconstruction(A, y, pc["p_const"], pc["epochs"], pc["mu"],
                                 subsets, pc["seed"])
    m = cfg.maps
    p_map = build_p_map(pilot, InterpolationSpec(m["p_lower"], m["p_upper"]))
    q_spec = InterpolationSpec(m["q_lower"], m["q_upper"])
    if m["q_source"] == "projection":
        q_map = build_q_map(A, p_map, q_spec)
    elif m["q_source"] == "data":
        q_map = build_q_map_from_data(y, q_spec)
    else:
        raise ConfigInvalid(f"unknown q_source {m['q_source']!r}")
    _save_image(cfg, "pilot", pilot, g.image_shape)
    io.write_csv(cfg.path("p_map"), p_map.values)
    io.write_csv(cfg.path("q_map"), q_map.values)
    print(f"maps: p in [{p_map.p_minus:.4g}, {p_map.p_plus:.4g}], "
          f"q in [{q_map.p_minus:.4g}, {q_map.p_plus:.4g}] -> {cfg.path('p_map')}, "
          f"{cfg.path('q_map')}")


def _exponent_map(cfg, key, constant, size):
    path = cfg.path(key)
    if path.is_file():
        m = validate_exponent_map(io.read_vector(path))
        if len(m) != size:
            raise DimensionMismatch(f"{path} has {len(m)} exponents, expected {size}")
        return m
    if constant is not None:
        return ExponentMap.constant(constant, size)
    raise FileError(f"{path} not found and no constant exponent configured")


def solver_config(cfg, A) -> SolverConfig:
    s = cfg.solver
    algo = s["algorithm"]
    p_map = q_map = None
    if algo.endswith("pnqn"):
        p_map = _exponent_map(cfg, "p_map", s["p"], A.cols)
        q_map = _exponent_map(cfg, "q_map", s["q"], A.rows)
    gamma = s["gamma"]
    if gamma is None:
        if algo.endswith("pnqn"):
            gamma = gamma_for_exponent(p_map.p_minus)
        elif algo.endswith("_p"):
            gamma = gamma_for_exponent(s["p"] or 2.0)
        else:
            gamma = 0.51
    schedule = StepSchedule(s["mu0"], s["decay_c"], gamma, s["schedule"])
    if s["x0"] == "zero":
        x0 = None
    elif s["x0"] == "pilot":
        x0 = _load(cfg, "pilot", A.cols)
    else:
        raise ConfigInvalid(f"[solver] x0 must be 'zero' or 'pilot', got {s['x0']!r}")
    return SolverConfig(
        algorithm=algo, schedule=schedule, p=s["p"], q=s["q"], r=s["r"],
        p_map=p_map, q_map=q_map, num_subsets=s["num_subsets"], epochs=s["epochs"],
        seed=s["seed"], adapt_interval=s["adapt_interval"], x0=x0,
        sampling=s["sampling"])


def cmd_reconstruct(cfg):
    A = _operator(cfg)
    g = A.geometry
    y = _load(cfg, "noisy_sinogram", A.rows)
    truth_path = cfg.path("phantom")
    truth = _load(cfg, "phantom", A.cols) if truth_path.is_file() else None
    scfg = solver_config(cfg, A)
    hook = None
    if scfg.adapt_interval:
        hook = make_adapt_hook(InterpolationSpec(cfg.maps["p_lower"], cfg.maps["p_upper"]))
    x, runlog = run(scfg, A, y, truth, adapt_hook=hook)
    _save_image(cfg, "reconstruction", x, g.image_shape)
    path = cfg.path("runlog")
    with io.atomic_open(path, newline="") as fh:
        write_runlog(runlog, fh)
    tail = ""
    if len(runlog) and truth is not None:
        psnr = runlog.column("psnr")
        tail = f", best PSNR {psnr.max():.2f} dB at epoch {int(np.argmax(psnr)) + 1}"
    print(f"reconstruct: {scfg.algorithm}, {len(runlog)} epochs{tail} -> {path}")


def cmd_metrics(cfg):
    x = _load(cfg, "reconstruction")
    ref = _load(cfg, "phantom", x.size)
    m = metrics.quality(x, ref)
    with io.atomic_open(cfg.path("metrics"), newline="") as fh:
        fh.write("mae,psnr,ssim\n")
        fh.write(f"{m.mae!r},{m.psnr!r},{m.ssim!r}\n")
    print(f"metrics: MAE {m.mae:.6g}, PSNR {m.psnr:.4f} dB, SSIM {m.ssim:.6f}")


SUMMARY_COLUMNS = ("algorithm", "epochs", "best_epoch", "mae", "psnr", "ssim",
                   "seconds_per_epoch", "seconds_per_iteration", "total_seconds")


def compare_logs(named_logs, num_subsets=1):
    """Summary rows (one per log), ranked by best PSNR, highest first.

    MAE/PSNR/SSIM are reported at the epoch of best PSNR.
    """
    if len(named_logs) < 2:
        raise MismatchedLogs("compare needs at least two runlogs")
    counts = {len(lg) for _, lg in named_logs}
    if len(counts) != 1:
        raise MismatchedLogs(f"runlogs have different epoch counts: {sorted(counts)}")
    epochs = counts.pop()
    if epochs == 0:
        raise MismatchedLogs("runlogs are empty")
    rows = []
    for name, lg in named_logs:
        psnr = lg.column("psnr")
        best = int(np.nanargmax(psnr)) if np.isfinite(psnr).any() else 0
        rec = lg.records[best]
        total = lg.records[-1].seconds
        rows.append({
            "algorithm": name, "epochs": epochs, "best_epoch": rec.epoch,
            "mae": rec.mae, "psnr": rec.psnr, "ssim": rec.ssim,
            "seconds_per_epoch": total / epochs,
            "seconds_per_iteration": total / (epochs * num_subsets),
            "total_seconds": total,
        })
    rows.sort(key=lambda r: -r["psnr"] if math.isfinite(r["psnr"]) else math.inf)
    return rows


def cmd_compare(runlogs, output, num_subsets=1):
    named = []
    for p in runlogs:
        p = Path(p)
        if not p.is_file():
            raise FileError(f"no such runlog: {p}")
        try:
            named.append((p.stem, RunLog.from_csv(p)))
        except ValueError as exc:
            raise FileError(str(exc)) from None
    rows = compare_logs(named, num_subsets)
    with io.atomic_open(output, newline="") as fh:
        fh.write(",".join(SUMMARY_COLUMNS) + "\n")
        for r in rows:
            fh.write(",".join(str(r[c]) if isinstance(r[c], (str, int)) else repr(float(r[c]))
                              for c in SUMMARY_COLUMNS) + "\n")
    print(f"compare: {len(rows)} runs, best {rows[0]['algorithm']} "
          f"({rows[0]['psnr']:.2f} dB) -> {output}")


STAGES = {
    "phantom": cmd_phantom,
    "project": cmd_project,
    "noise": cmd_noise,
    "maps": cmd_maps,
    "reconstruct": cmd_reconstruct,
    "metrics": cmd_metrics,
}


def build_parser():
    parser = argparse.ArgumentParser(
        prog="varlp",
        description="Iterative CT reconstruction in variable exponent Lebesgue spaces.",
        epilog="Config keys can be overridden as --section.key=value.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="verb", required=True)
    for name, fn in STAGES.items():
        p = sub.add_parser(name, help=fn.__name__.replace("cmd_", "") + " stage")
        p.add_argument("-c", "--config", required=True, help="INI experiment config")
        p.add_argument("--deterministic", action="store_true",
                       help="single-threaded operator construction")
    p = sub.add_parser("compare", help="summarise several runlogs")
    p.add_argument("runlogs", nargs="+")
    p.add_argument("-o", "--output", default="summary.csv")
    p.add_argument("--num-subsets", type=int, default=1,
                   help="inner iterations per epoch, for per-iteration timing")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args, extra = parser.parse_known_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.verb == "compare":
            if extra:
                raise ConfigInvalid(f"unexpected arguments: {extra}")
            cmd_compare(args.runlogs, args.output, args.num_subsets)
            return 0
        if args.deterministic:
            os.environ["VARLP_THREADS"] = "1"
        cfg = load_config(args.config, extra)
        tic = time.perf_counter()
        STAGES[args.verb](cfg)
        log.info("%s finished in %.2fs", args.verb, time.perf_counter() - tic)
        return 0
    except CONFIG_ERRORS as exc:
        print(f"varlp {args.verb}: error: {exc}", file=sys.stderr)
        return 2
    except NUMERIC_ERRORS as exc:
        print(f"varlp {args.verb}: numerical failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
