"""Benchmark sweeps: parameter recovery (MSE) and wall-clock timing per method.

Every cell draws its ground truth and data from seeds derived from the plan
seed and the cell coordinates, so any cell can be reproduced on its own.
The ground truth depends on ``(seed, M, preset, replicate)`` only, which
keeps it fixed while ``N`` varies.
"""

from __future__ import annotations

import csv
import io
import statistics
import time
import zlib
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .baselines import MleConfig, PleConfig, hopfield_fit, mle_fit, ple_fit
from .core import DEFAULT_ENUMERATION_CAP, ObservationEnsemble, as_params
from .machine import DEFAULT_GRID, EmConfig, fit, scan_epsilon
from .sampler import GroundTruthSpec, PRESETS, SamplerConfig, draw_true_parameters, sample

METHODS = ("em", "hopfield", "mle", "ple")
CSV_FIELDS = ("M", "N", "preset", "method", "replicate", "mse", "seconds", "iters", "epsilon_star")
SKIPPED = "skipped: intractable"


def mse(w, w_true) -> float:
    """Mean squared difference over all L parameters."""
    a = as_params(w).w
    b = as_params(w_true).w
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.size} vs {b.size} parameters")
    return float(np.mean((a - b) ** 2))


def derive_seed(seed: int, *parts) -> int:
    """64-bit seed for a cell; string parts are hashed with CRC32."""
    key = [int(seed) & ((1 << 64) - 1)]
    for p in parts:
        key.append(zlib.crc32(p.encode()) if isinstance(p, str) else int(p))
    return int(np.random.SeedSequence(key).generate_state(1, np.uint64)[0])


@dataclass(frozen=True)
class BenchmarkPlan:
    sizes: tuple[int, ...] = (10, 20, 40, 100)
    samples: tuple[int, ...] = (500, 1000, 5000, 10000)
    presets: tuple[str, ...] = ("weak", "strong")
    methods: tuple[str, ...] = METHODS
    replicates: int = 5
    seed: int = 0
    grid: tuple[float, ...] = DEFAULT_GRID
    single_eps: float | None = None  # fit EM at this eps only (no scan)
    em: EmConfig = EmConfig()
    mle: MleConfig = MleConfig()
    ple: PleConfig = PleConfig()
    sampler: str = "auto"  # "exact", "metropolis" or "auto" (exact up to exact_limit)
    exact_limit: int = 20
    burn_in: int = 1000
    thinning: int = 10
    cap: int = DEFAULT_ENUMERATION_CAP

    def __post_init__(self):
        if self.replicates < 1:
            raise ValueError("replicates must be >= 1")
        if not self.methods:
            raise ValueError("methods must be non-empty")
        bad = set(self.methods) - set(METHODS)
        if bad:
            raise ValueError(f"unknown methods: {sorted(bad)}")
        unknown = [p for p in self.presets if p not in PRESETS]
        if unknown:
            raise ValueError(f"unknown presets: {unknown}")
        if self.sampler not in ("auto", "exact", "metropolis"):
            raise ValueError(f"unknown sampler {self.sampler!r}")


@dataclass
class BenchmarkRecord:
    M: int
    N: int
    preset: str
    method: str
    replicate: int
    mse: float | None = None
    seconds: float | None = None
    iters: int | None = None
    epsilon_star: float | None = None
    status: str = "ok"

    @property
    def ok(self) -> bool:
        return self.status == "ok"

    def row(self) -> dict:
        def num(x):
            return "" if x is None else repr(x)

        return {
            "M": str(self.M),
            "N": str(self.N),
            "preset": self.preset,
            "method": self.method,
            "replicate": str(self.replicate),
            # non-ok records carry their status in the mse cell
            "mse": num(self.mse) if self.ok else self.status,
            "seconds": num(self.seconds),
            "iters": num(self.iters),
            "epsilon_star": num(self.epsilon_star),
        }

    def to_dict(self, timing: bool = True) -> dict:
        d = {k: getattr(self, k) for k in ("M", "N", "preset", "method", "replicate", "mse",
                                           "iters", "epsilon_star", "status")}
        if timing:
            d["seconds"] = self.seconds
        return d


def ground_truth(plan: BenchmarkPlan, M: int, preset: str, replicate: int):
    field_std, g = PRESETS[preset]
    spec = GroundTruthSpec(M, field_std, g, derive_seed(plan.seed, "truth", M, preset, replicate))
    return draw_true_parameters(spec)


def cell_data(plan: BenchmarkPlan, w_true, M: int, N: int, preset: str, replicate: int) -> ObservationEnsemble:
    method = plan.sampler
    if method == "auto":
        method = "exact" if M <= plan.exact_limit else "metropolis"
    cfg = SamplerConfig(
        N=N,
        method=method,
        burn_in=plan.burn_in,
        thinning=plan.thinning,
        seed=derive_seed(plan.seed, "data", M, N, preset, replicate),
    )
    return sample(w_true, cfg)


def fit_method(method: str, ens: ObservationEnsemble, plan: BenchmarkPlan):
    """Run one method; returns (w, iterations, epsilon_star)."""
    if method == "em":
        if plan.single_eps is not None:
            r = fit(ens, replace(plan.em, eps=plan.single_eps))
            return r.w, r.iterations, plan.single_eps
        scan = scan_epsilon(ens, plan.grid, plan.em)
        return scan.best.w, sum(r.iterations for r in scan.fits), scan.selected_eps
    if method == "hopfield":
        return hopfield_fit(ens).w, 0, None
    if method == "mle":
        r = mle_fit(ens, replace(plan.mle, cap=plan.cap))
        return r.w, r.iterations, None
    if method == "ple":
        r = ple_fit(ens, plan.ple)
        return r.w, r.iterations, None
    raise ValueError(f"unknown method {method!r}")


def _run_cell(plan: BenchmarkPlan, M: int, N: int, preset: str, rep: int) -> list[BenchmarkRecord]:
    out = []
    try:
        w_true = ground_truth(plan, M, preset, rep)
        ens = cell_data(plan, w_true, M, N, preset, rep)
    except Exception as exc:  # a broken cell must not stop the sweep
        return [BenchmarkRecord(M, N, preset, m, rep, status=f"failed: {exc}") for m in plan.methods]
    for method in plan.methods:
        rec = BenchmarkRecord(M, N, preset, method, rep)
        if method == "mle" and M > plan.cap:
            rec.status = SKIPPED
            out.append(rec)
            continue
        try:
            t0 = time.perf_counter()
            w, iters, eps_star = fit_method(method, ens, plan)
            rec.seconds = time.perf_counter() - t0
            rec.mse = mse(w, w_true)
            rec.iters = int(iters)
            rec.epsilon_star = eps_star
        except Exception as exc:
            rec.status = f"failed: {type(exc).__name__}: {exc}"
        out.append(rec)
    return out


def cells(plan: BenchmarkPlan):
    for M in plan.sizes:
        for N in plan.samples:
            for preset in plan.presets:
                for rep in range(plan.replicates):
                    yield M, N, preset, rep


def run_benchmark(plan: BenchmarkPlan, workers: int = 1) -> list[BenchmarkRecord]:
    """MSE (and time) for every method in every cell, in plan order."""
    todo = list(cells(plan))
    if workers > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(workers) as pool:
            chunks = list(pool.map(lambda c: _run_cell(plan, *c), todo))
    else:
        chunks = [_run_cell(plan, *c) for c in todo]
    return [r for chunk in chunks for r in chunk]


def run_timing(plan: BenchmarkPlan) -> list[BenchmarkRecord]:
    """Wall-clock per full fit; cells run serially to avoid contention."""
    if len(plan.samples) != 1:
        raise ValueError("timing runs use a single sample size N")
    return [r for c in cells(plan) for r in _run_cell(plan, *c)]


def median_seconds(records: Sequence[BenchmarkRecord]) -> dict[tuple[int, str, str], float]:
    """Median time per (M, preset, method) over replicates (ok records only)."""
    groups: dict[tuple[int, str, str], list[float]] = {}
    for r in records:
        if r.ok and r.seconds is not None:
            groups.setdefault((r.M, r.preset, r.method), []).append(r.seconds)
    return {k: statistics.median(v) for k, v in groups.items()}


def median_mse(records: Sequence[BenchmarkRecord]) -> dict[tuple[int, int, str, str], float]:
    groups: dict[tuple[int, int, str, str], list[float]] = {}
    for r in records:
        if r.ok:
            groups.setdefault((r.M, r.N, r.preset, r.method), []).append(r.mse)
    return {k: statistics.median(v) for k, v in groups.items()}


def write_csv(records: Sequence[BenchmarkRecord], path=None, timing: bool = True) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=CSV_FIELDS, lineterminator="\n")
    writer.writeheader()
    for r in records:
        row = r.row()
        if not timing:
            row["seconds"] = ""
        writer.writerow(row)
    text = buf.getvalue()
    if path is not None:
        Path(path).write_text(text)
    return text


def read_csv(source) -> list[BenchmarkRecord]:
    """Parse CSV text or a path written by :func:`write_csv`."""
    text = source if isinstance(source, str) and "\n" in source else Path(source).read_text()
    reader = csv.DictReader(io.StringIO(text))
    if tuple(reader.fieldnames or ()) != CSV_FIELDS:
        raise ValueError(f"unexpected CSV header {reader.fieldnames}")
    out = []
    for row in reader:
        def opt(key, conv):
            return conv(row[key]) if row[key] != "" else None

        rec = BenchmarkRecord(
            M=int(row["M"]),
            N=int(row["N"]),
            preset=row["preset"],
            method=row["method"],
            replicate=int(row["replicate"]),
            seconds=opt("seconds", float),
            iters=opt("iters", int),
            epsilon_star=opt("epsilon_star", float),
        )
        try:
            rec.mse = opt("mse", float)
        except ValueError:
            rec.status = row["mse"]
        out.append(rec)
    return out
