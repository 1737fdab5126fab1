"""The erasure machine: partition-function-free inverse Ising inference.

Each observed frequency is re-weighted by the current model weight raised to
``eps - 1``::

    f~(s) ~ f(s) * exp((eps - 1) * w . O(s))

The unknown ``Z(w)**(eps - 1)`` cancels in the normalization, so only the
observed configurations are ever touched. To second order in ``eps`` the
re-weighted model ``p**eps`` has moments ``eps * w``, which gives the update

    w <- w + alpha * (<O>_f~ - eps * w)

The update is gradient ascent on the concave function
``-ln(sum_s f(s) exp(-(1 - eps) w . O(s))) / (1 - eps) - eps |w|^2 / 2``,
so for a small enough ``alpha`` it has a unique fixed point. At ``eps = 1``
that fixed point is the Hopfield estimate ``w = <O>_f``.
"""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .core import (
    ObservationEnsemble,
    ParameterVector,
    ReweightedEnsemble,
    as_params,
    couplings_to_matrix,
    n_params,
    weighted_moments,
)
from .report import FitReport
from .sampler import make_rng


class NumericalError(FloatingPointError):
    """A parameter update produced non-finite values."""


@dataclass(frozen=True)
class EmConfig:
    eps: float = 0.5
    alpha: float = 0.1
    max_iters: int = 10_000
    tol: float = 1e-6
    init_scale: float = 0.01
    seed: int = 0
    divergence_bound: float = 1e3
    record_every: int = 0  # keep a copy of w every this many iterations (0: never)

    def __post_init__(self):
        if not self.eps > 0:
            raise ValueError("eps must be > 0")
        if not self.alpha > 0:
            raise ValueError("alpha must be > 0")
        if not self.tol > 0:
            raise ValueError("tol must be > 0")
        if self.max_iters < 0 or self.init_scale < 0:
            raise ValueError("max_iters and init_scale must be >= 0")


DEFAULT_GRID = tuple(round(0.05 * k, 2) for k in range(1, 21))


def _log_reweight(ens: ObservationEnsemble, a: np.ndarray, eps: float) -> np.ndarray:
    logit = np.log(ens.frequencies) + (eps - 1.0) * a
    logit -= logit.max()
    wt = np.exp(logit)
    return wt / wt.sum()


def _energies(s: np.ndarray, h: np.ndarray, J: np.ndarray) -> np.ndarray:
    """Row-wise ``w . O(s)``."""
    return s @ h + 0.5 * np.einsum("ni,ni->n", s @ J, s)


def reweight(ens: ObservationEnsemble, w, eps: float) -> ReweightedEnsemble:
    """Observed frequencies re-weighted by ``p_w(s)**(eps - 1)`` and renormalized."""
    p = as_params(w, ens.M)
    a = _energies(ens.float_spins, p.h, p.J)
    return ReweightedEnsemble(ens.spins, _log_reweight(ens, a, eps))


def reweighted_moments(rens: ReweightedEnsemble) -> np.ndarray:
    return weighted_moments(rens.spins, rens.weights)


def em_step(w, ens: ObservationEnsemble, cfg: EmConfig) -> ParameterVector:
    p = as_params(w, ens.M)
    with np.errstate(over="ignore", invalid="ignore"):
        a = _energies(ens.float_spins, p.h, p.J)
    if not np.all(np.isfinite(a)):
        raise NumericalError("non-finite model energies")
    m = weighted_moments(ens.spins, _log_reweight(ens, a, cfg.eps))
    new = p.w + cfg.alpha * (m - cfg.eps * p.w)
    if not np.all(np.isfinite(new)):
        raise NumericalError("non-finite update; alpha is too large")
    return ParameterVector(new, p.M)


def initial_parameters(M: int, cfg: EmConfig) -> np.ndarray:
    return make_rng(cfg.seed).standard_normal(n_params(M)) * cfg.init_scale


def fit(ens: ObservationEnsemble, cfg: EmConfig, w0=None) -> FitReport:
    """Iterate the re-weighting update from a random start until converged.

    Stops once ``max |<O>_f~ - eps w| < tol`` (i.e. the step is below
    ``tol * alpha``), after ``max_iters`` steps, or when ``max |w|`` exceeds
    ``cfg.divergence_bound``; in the last case the partial report is
    returned with ``diverged`` set.
    """
    t0 = time.perf_counter()
    M = ens.M
    s = ens.float_spins
    f = ens.frequencies
    iu = np.triu_indices(M, 1)
    w = initial_parameters(M, cfg) if w0 is None else np.array(as_params(w0, M).w)
    eps, alpha = cfg.eps, cfg.alpha

    energy_trace = []
    trajectory = []
    guard = bool(np.max(np.abs(eps * w), initial=0.0) >= 1.0)
    converged = diverged = False
    it = 0
    J = couplings_to_matrix(w[M:], M)
    a = _energies(s, w[:M], J)
    while True:
        energy_trace.append(-float(f @ a))
        if cfg.record_every and it % cfg.record_every == 0:
            trajectory.append((it, w.copy()))
        if it >= cfg.max_iters:
            break
        wt = _log_reweight(ens, a, eps)
        sw = s * wt[:, None]
        second = sw.T @ s
        grad = np.concatenate([wt @ s, second[iu]]) - eps * w
        if np.max(np.abs(grad), initial=0.0) < cfg.tol:
            converged = True
            break
        w = w + alpha * grad
        it += 1
        if not np.all(np.isfinite(w)):
            diverged = True
            break
        wmax = np.max(np.abs(w), initial=0.0)
        guard = guard or eps * wmax >= 1.0
        J = couplings_to_matrix(w[M:], M)
        a = _energies(s, w[:M], J)
        if wmax > cfg.divergence_bound:
            diverged = True
            energy_trace.append(-float(f @ a))
            break

    if not np.all(np.isfinite(w)):
        raise NumericalError(f"fit produced non-finite parameters at iteration {it}")
    if cfg.record_every and (not trajectory or trajectory[-1][0] != it):
        trajectory.append((it, w.copy()))
    return FitReport(
        method="em",
        w=ParameterVector(w, M),
        iterations=it,
        converged=converged,
        diverged=diverged,
        epsilon=eps,
        guard_violated=bool(guard),
        final_energy=energy_trace[-1],
        energy_trace=energy_trace,
        trajectory=trajectory,
        seconds=time.perf_counter() - t0,
    )


@dataclass
class EpsilonScanReport:
    grid: list[float]
    fits: list[FitReport]
    selected_eps: float
    selected_index: int
    plateau: tuple[float, float]
    plateau_rel_tol: float
    seconds: float = 0.0
    extras: dict = field(default_factory=dict)

    @property
    def final_energies(self) -> np.ndarray:
        return np.array([r.final_energy for r in self.fits])

    @property
    def best(self) -> FitReport:
        return self.fits[self.selected_index]

    @property
    def plateau_width(self) -> float:
        return self.plateau[1] - self.plateau[0]

    def to_dict(self, timing: bool = True) -> dict:
        d = {
            "grid": list(self.grid),
            "selected_eps": self.selected_eps,
            "plateau": list(self.plateau),
            "plateau_width": self.plateau_width,
            "plateau_rel_tol": self.plateau_rel_tol,
            "per_eps": [
                {
                    "eps": r.epsilon,
                    "final_energy": r.final_energy,
                    "iterations": r.iterations,
                    "converged": r.converged,
                    "diverged": r.diverged,
                    "guard_violated": r.guard_violated,
                }
                for r in self.fits
            ],
            "w": self.best.w.w.tolist(),
        }
        if timing:
            d["seconds"] = self.seconds
        return d


def select_epsilon(grid: Sequence[float], energies: Sequence[float], usable: Sequence[bool],
                   tie_tol: float = 1e-9) -> int:
    """Index of the grid value with the largest final mean energy.

    Values within ``tie_tol`` of the maximum count as ties and the smallest
    such ``eps`` wins.
    """
    e = np.asarray(energies, dtype=float)
    ok = np.asarray(usable, dtype=bool) & np.isfinite(e)
    if not ok.any():
        raise NumericalError("every fit in the epsilon scan diverged")
    best = e[ok].max()
    candidates = [i for i in range(len(grid)) if ok[i] and e[i] >= best - tie_tol]
    return min(candidates, key=lambda i: grid[i])


def plateau_range(grid: Sequence[float], energies: Sequence[float], usable: Sequence[bool],
                  selected: int, rel_tol: float = 0.01) -> tuple[float, float]:
    """Contiguous grid range around ``selected`` whose energy stays within
    ``rel_tol * |E_max|`` of the maximum."""
    order = np.argsort(grid, kind="stable")
    g = np.asarray(grid, dtype=float)[order]
    e = np.asarray(energies, dtype=float)[order]
    ok = np.asarray(usable, dtype=bool)[order]
    pos = int(np.flatnonzero(order == selected)[0])
    best = e[pos]
    band = rel_tol * abs(best)
    inside = ok & np.isfinite(e) & (e >= best - band)
    lo = hi = pos
    while lo > 0 and inside[lo - 1]:
        lo -= 1
    while hi < len(g) - 1 and inside[hi + 1]:
        hi += 1
    return float(g[lo]), float(g[hi])


def scan_epsilon(ens: ObservationEnsemble, grid: Sequence[float] = DEFAULT_GRID,
                 cfg: EmConfig | None = None, workers: int = 1,
                 plateau_rel_tol: float = 0.01) -> EpsilonScanReport:
    """Fit independently at every ``eps`` in ``grid`` and keep the one with the
    largest final mean observed energy."""
    t0 = time.perf_counter()
    grid = [float(e) for e in grid]
    if not grid:
        raise ValueError("empty epsilon grid")
    if len(set(grid)) != len(grid) or any(e <= 0 for e in grid):
        raise ValueError("epsilon grid must hold distinct positive values")
    cfg = cfg or EmConfig()
    cfgs = [replace(cfg, eps=e) for e in grid]
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            fits = list(pool.map(lambda c: fit(ens, c), cfgs))
    else:
        fits = [fit(ens, c) for c in cfgs]
    energies = [r.final_energy for r in fits]
    usable = [not r.diverged for r in fits]
    k = select_epsilon(grid, energies, usable)
    return EpsilonScanReport(
        grid=grid,
        fits=fits,
        selected_eps=grid[k],
        selected_index=k,
        plateau=plateau_range(grid, energies, usable, k, plateau_rel_tol),
        plateau_rel_tol=plateau_rel_tol,
        seconds=time.perf_counter() - t0,
    )
