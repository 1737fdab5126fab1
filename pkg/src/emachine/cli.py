"""Command-line interface: ``emachine {generate,fit,scan,bench,time,reconstruct}``.

Exit codes: 0 success, 2 invalid configuration or input, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import bench, io
from .baselines import MleConfig, PleConfig, hopfield_fit, mle_fit, ple_fit
from .core import IntractableEnumeration, ParameterVector
from .machine import DEFAULT_GRID, EmConfig, NumericalError, fit, scan_epsilon
from .sampler import PRESETS, GroundTruthSpec, SamplerConfig, draw_true_parameters, sample

log = logging.getLogger("emachine")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3


class ConfigError(ValueError):
    pass


def parse_grid(text: str) -> list[float]:
    """``lo:hi:step`` (inclusive) or a comma-separated list of values."""
    if ":" in text:
        try:
            lo, hi, step = (float(t) for t in text.split(":"))
        except ValueError:
            raise ConfigError(f"bad grid {text!r}; expected lo:hi:step") from None
        if step <= 0 or hi < lo:
            raise ConfigError(f"bad grid {text!r}")
        n = int(round((hi - lo) / step)) + 1
        return [round(lo + k * step, 10) for k in range(n)]
    return [float(t) for t in text.split(",") if t]


def _ints(text: str) -> tuple[int, ...]:
    return tuple(int(t) for t in text.split(",") if t)


def _strs(text: str) -> tuple[str, ...]:
    return tuple(t for t in text.split(",") if t)


def _sidecar(path: Path) -> Path:
    return path.with_name(path.name + ".truth.json")


def _emit(text: str, out) -> None:
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def _em_config(args) -> EmConfig:
    return EmConfig(
        eps=args.epsilon if getattr(args, "epsilon", None) is not None else 0.5,
        alpha=args.alpha if args.alpha is not None else 0.1,
        max_iters=args.iters if args.iters is not None else 10_000,
        tol=args.tol if args.tol is not None else 1e-6,
        seed=args.seed,
    )


def _load_truth(args, M: int):
    path = args.truth
    if path is None:
        guess = _sidecar(Path(args.dataset))
        path = guess if guess.exists() else None
    if path is None:
        return None
    w = ParameterVector(io.load_json(path)["w_true"])
    if w.M != M:
        raise ConfigError(f"truth file has M={w.M}, dataset has M={M}")
    return w


# --------------------------------------------------------------------------

def cmd_generate(args) -> int:
    if args.preset:
        field_std, g = PRESETS[args.preset]
    else:
        field_std, g = args.field_std, args.g
    spec = GroundTruthSpec(args.M, field_std, g, args.seed)
    w_true = draw_true_parameters(spec)
    cfg = SamplerConfig(
        N=args.N,
        method=args.sampler,
        burn_in=args.burn_in,
        thinning=args.thinning,
        seed=args.sample_seed if args.sample_seed is not None else args.seed + 1,
    )
    ens = sample(w_true, cfg)
    out = Path(args.out)
    io.write_spins(ens, out)
    io.dump_json(
        {
            "format": "spins-v1",
            "spec": {"M": spec.M, "field_std": spec.field_std, "g": spec.g, "seed": spec.seed},
            "sampler": {"N": cfg.N, "method": cfg.method, "burn_in": cfg.burn_in,
                        "thinning": cfg.thinning, "seed": cfg.seed},
            "w_true": w_true.w,
        },
        _sidecar(out),
    )
    log.info("wrote %s (%d unique of %d) and %s", out, ens.n_unique, ens.N, _sidecar(out))
    return EXIT_OK


def cmd_fit(args) -> int:
    ens = io.read_spins(args.dataset)
    method = args.method
    if method == "em":
        report = fit(ens, _em_config(args))
    elif method == "hopfield":
        report = hopfield_fit(ens)
    elif method == "mle":
        kw = {k: v for k, v in (("alpha", args.alpha), ("max_iters", args.iters), ("tol", args.tol)) if v is not None}
        report = mle_fit(ens, MleConfig(**kw))
    else:
        kw = {k: v for k, v in (("alpha", args.alpha), ("max_iters", args.iters), ("tol", args.tol)) if v is not None}
        report = ple_fit(ens, PleConfig(**kw))
    d = report.to_dict(timing=not args.no_timing, trace=args.trace)
    truth = _load_truth(args, ens.M)
    if truth is not None:
        d["mse"] = bench.mse(report.w, truth)
    _emit(io.dump_json(d), args.out)
    if args.trajectory:
        _write_trajectory(report, args.trajectory)
    if report.diverged:
        log.error("fit diverged after %d iterations", report.iterations)
        return EXIT_NUMERIC
    return EXIT_OK


def _write_trajectory(report, path) -> None:
    lines = ["iteration,mean_energy"]
    lines += [f"{t},{e!r}" for t, e in enumerate(report.energy_trace)]
    Path(path).write_text("\n".join(lines) + "\n")


def cmd_scan(args) -> int:
    ens = io.read_spins(args.dataset)
    grid = parse_grid(args.grid) if args.grid else list(DEFAULT_GRID)
    scan = scan_epsilon(ens, grid, _em_config(args))
    truth = _load_truth(args, ens.M)
    if args.format == "csv":
        rows = ["epsilon,final_energy,iterations,converged,diverged,guard_violated,mse,selected"]
        for k, r in enumerate(scan.fits):
            m = repr(bench.mse(r.w, truth)) if truth is not None else ""
            rows.append(
                f"{r.epsilon!r},{r.final_energy!r},{r.iterations},{int(r.converged)},"
                f"{int(r.diverged)},{int(r.guard_violated)},{m},{int(k == scan.selected_index)}"
            )
        _emit("\n".join(rows) + "\n", args.out)
    else:
        d = scan.to_dict(timing=not args.no_timing)
        if truth is not None:
            d["mse"] = bench.mse(scan.best.w, truth)
            for entry, r in zip(d["per_eps"], scan.fits):
                entry["mse"] = bench.mse(r.w, truth)
        _emit(io.dump_json(d), args.out)
    return EXIT_OK


def _plan(args, samples) -> bench.BenchmarkPlan:
    em = EmConfig(
        alpha=args.alpha if args.alpha is not None else 0.1,
        max_iters=args.iters if args.iters is not None else 10_000,
        tol=args.tol if args.tol is not None else 1e-6,
    )
    tol_kw = {"tol": args.tol} if args.tol is not None else {}
    return bench.BenchmarkPlan(
        sizes=_ints(args.sizes),
        samples=samples,
        presets=_strs(args.presets),
        methods=_strs(args.methods),
        replicates=args.replicates,
        seed=args.seed,
        grid=tuple(parse_grid(args.grid)) if args.grid else DEFAULT_GRID,
        single_eps=args.epsilon,
        em=em,
        mle=MleConfig(**tol_kw),
        ple=PleConfig(**tol_kw),
        sampler=args.sampler,
    )


def _emit_records(records, args) -> None:
    timing = not args.no_timing
    if args.format == "csv":
        _emit(bench.write_csv(records, timing=timing), args.out)
    else:
        _emit(io.dump_json([r.to_dict(timing=timing) for r in records]), args.out)


def cmd_bench(args) -> int:
    records = bench.run_benchmark(_plan(args, _ints(args.N)))
    _emit_records(records, args)
    return EXIT_OK


def cmd_time(args) -> int:
    records = bench.run_timing(_plan(args, (args.N,)))
    _emit_records(records, args)
    return EXIT_OK


def cmd_reconstruct(args) -> int:
    from . import recon

    if args.synthetic:
        train_raw = recon.synthetic_glyphs(args.n_train, seed=args.seed)
        test_raw = recon.synthetic_glyphs(args.n_test, seed=args.seed + 1)
        source = "synthetic-glyphs"
    else:
        files = recon.find_mnist(args.mnist_dir) if args.mnist_dir else None
        if args.images and args.labels:
            train_raw = recon.load_digit(args.images, args.labels, args.digit)
            test_raw = (
                recon.load_digit(args.test_images, args.test_labels, args.digit)
                if args.test_images and args.test_labels else None
            )
        elif files:
            train_raw = recon.load_digit(files["train_images"], files["train_labels"], args.digit)
            test_raw = recon.load_digit(files["test_images"], files["test_labels"], args.digit)
        else:
            raise ConfigError("no image source: give --mnist-dir, --images/--labels or --synthetic")
        if args.n_train:
            train_raw = train_raw[: args.n_train]
        if test_raw is None:
            raise ConfigError("--test-images/--test-labels are required with --images")
        test_raw = test_raw[: args.n_test]
        source = "idx"
    grid = parse_grid(args.grid) if args.grid else list(DEFAULT_GRID)
    em = EmConfig(
        alpha=args.alpha if args.alpha is not None else 0.1,
        max_iters=args.iters if args.iters is not None else 10_000,
        tol=args.tol if args.tol is not None else 1e-6,
    )
    result = recon.run_pipeline(
        train_raw, test_raw, n_missing=args.missing, majority=args.majority,
        threshold=args.threshold, grid=grid, eps=args.epsilon, em_cfg=em,
        seed=args.seed, method=args.icm_method,
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for r in result.images:
        recon.write_pgm(out / f"recon_{r.index:04d}.pgm", r.image)
    d = result.to_dict()
    d["settings"]["source"] = source
    io.dump_json(d, out / "report.json")
    log.info("mean accuracy %.4f (majority fill %.4f)", d["mean_accuracy"], d["mean_baseline_accuracy"])
    return EXIT_OK


# --------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="emachine", description="Inverse Ising inference with the erasure machine.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    def common_fit(p):
        p.add_argument("--alpha", type=float)
        p.add_argument("--iters", type=int)
        p.add_argument("--tol", type=float)
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--out")
        p.add_argument("--no-timing", action="store_true", help="omit wall-clock fields")

    p = sub.add_parser("generate", help="draw ground truth and sample a spins-v1 dataset")
    p.add_argument("--M", type=int, required=True)
    p.add_argument("--N", type=int, required=True)
    p.add_argument("--preset", choices=sorted(PRESETS))
    p.add_argument("--field-std", type=float, default=None)
    p.add_argument("--g", type=float, default=0.5)
    p.add_argument("--sampler", choices=("exact", "metropolis"), default="metropolis")
    p.add_argument("--burn-in", type=int, default=1000)
    p.add_argument("--thinning", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--sample-seed", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("fit", help="fit one method to a dataset")
    p.add_argument("--dataset", required=True)
    p.add_argument("--method", choices=bench.METHODS, default="em")
    p.add_argument("--epsilon", type=float)
    p.add_argument("--truth", help="JSON sidecar with w_true (default: <dataset>.truth.json if present)")
    p.add_argument("--trace", action="store_true", help="include the per-iteration energy trace")
    p.add_argument("--trajectory", help="write iteration,mean_energy CSV here")
    common_fit(p)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("scan", help="epsilon scan for the erasure machine")
    p.add_argument("--dataset", required=True)
    p.add_argument("--grid", help="lo:hi:step or comma list (default 0.05:1.0:0.05)")
    p.add_argument("--truth")
    p.add_argument("--format", choices=("json", "csv"), default="json")
    common_fit(p)
    p.set_defaults(func=cmd_scan)

    for name, func, help_ in (("bench", cmd_bench, "MSE sweep across methods"),
                              ("time", cmd_time, "timing sweep across methods")):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--sizes", "--M", dest="sizes", default="10,20")
        if name == "bench":
            p.add_argument("--N", default="1000")
        else:
            p.add_argument("--N", type=int, default=10_000)
        p.add_argument("--presets", default="weak,strong")
        p.add_argument("--methods", "--method", dest="methods", default=",".join(bench.METHODS))
        p.add_argument("--replicates", type=int, default=5)
        p.add_argument("--grid")
        p.add_argument("--epsilon", type=float, help="fit EM at this eps only (no scan)")
        p.add_argument("--sampler", choices=("auto", "exact", "metropolis"), default="auto")
        p.add_argument("--format", choices=("csv", "json"), default="csv")
        common_fit(p)
        p.set_defaults(func=func)

    p = sub.add_parser("reconstruct", help="missing-pixel reconstruction")
    p.add_argument("--mnist-dir", default=os.environ.get("EMACHINE_MNIST_DIR"))
    p.add_argument("--images")
    p.add_argument("--labels")
    p.add_argument("--test-images")
    p.add_argument("--test-labels")
    p.add_argument("--synthetic", action="store_true", help="use the built-in 16x16 glyph set")
    p.add_argument("--digit", type=int, default=8)
    p.add_argument("--n-train", type=int, default=0, help="0 keeps every training image")
    p.add_argument("--n-test", type=int, default=10)
    p.add_argument("--missing", type=int, default=90)
    p.add_argument("--majority", type=float, default=0.8)
    p.add_argument("--threshold", type=int, default=1)
    p.add_argument("--epsilon", type=float)
    p.add_argument("--grid")
    p.add_argument("--icm-method", choices=("auto", "icm", "exhaustive"), default="auto")
    p.add_argument("--alpha", type=float)
    p.add_argument("--iters", type=int)
    p.add_argument("--tol", type=float)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_reconstruct)
    return ap


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (NumericalError, FloatingPointError) as exc:
        log.error("numerical failure: %s", exc)
        return EXIT_NUMERIC
    except (ValueError, KeyError, OSError, IntractableEnumeration) as exc:
        log.error("%s", exc)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
