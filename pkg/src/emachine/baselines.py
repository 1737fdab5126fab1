"""Reference estimators: Hopfield closed form, exact MLE and pseudo-likelihood."""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .core import (
    DEFAULT_ENUMERATION_CAP,
    ObservationEnsemble,
    ParameterVector,
    _check_cap,
    as_params,
    exact_statistics,
    mean_energy_observed,
    n_params,
    observed_moments,
)
from .report import FitReport

# Relative slack when comparing log-likelihoods in the line search; absorbs
# rounding in ln Z so that ascent near the optimum does not stall.
_LL_SLACK = 1e-14


@dataclass(frozen=True)
class MleConfig:
    alpha: float = 1.0
    max_iters: int = 10_000
    tol: float = 1e-6
    cap: int = DEFAULT_ENUMERATION_CAP

    def __post_init__(self):
        if not (self.alpha > 0 and self.tol > 0 and self.max_iters >= 0):
            raise ValueError("alpha and tol must be > 0, max_iters >= 0")


@dataclass(frozen=True)
class PleConfig:
    alpha: float = 1.0
    max_iters: int = 10_000
    tol: float = 1e-6
    symmetrization: str = "average"

    def __post_init__(self):
        if not (self.alpha > 0 and self.tol > 0 and self.max_iters >= 0):
            raise ValueError("alpha and tol must be > 0, max_iters >= 0")
        if self.symmetrization != "average":
            raise ValueError(f"unsupported symmetrization {self.symmetrization!r}")


def hopfield_solution(ens: ObservationEnsemble) -> ParameterVector:
    return ParameterVector(observed_moments(ens), ens.M)


def hopfield_fit(ens: ObservationEnsemble) -> FitReport:
    t0 = time.perf_counter()
    w = hopfield_solution(ens)
    return FitReport(
        method="hopfield",
        w=w,
        converged=True,
        epsilon=1.0,
        final_energy=mean_energy_observed(w, ens),
        seconds=time.perf_counter() - t0,
    )


def log_likelihood(w, ens: ObservationEnsemble, cap: int = DEFAULT_ENUMERATION_CAP):
    """Mean log-likelihood ``w . <O>_f - ln Z(w)`` and its gradient ``<O>_f - <O>_p``."""
    p = as_params(w, ens.M)
    logZ, model = exact_statistics(p, cap)
    data = observed_moments(ens)
    return float(p.w @ data) - logZ, data - model


def _bb_step(s: np.ndarray, y: np.ndarray, alpha, axis=None):
    """Barzilai-Borwein length ``s.s / s.y`` for ascent (``y = g_old - g_new``).

    Falls back to doubling ``alpha`` where the curvature estimate is not
    positive.
    """
    ss = np.sum(s * s, axis=axis)
    sy = np.sum(s * y, axis=axis)
    with np.errstate(divide="ignore", invalid="ignore"):
        bb = np.where(sy > 0, ss / sy, 2.0 * alpha)
    return bb


def mle_fit(ens: ObservationEnsemble, cfg: MleConfig = MleConfig(), w0=None) -> FitReport:
    """Gradient ascent on the exact log-likelihood with a backtracking step.

    The trial step length is the Barzilai-Borwein estimate from the last
    accepted move; a trial that lowers the likelihood is rejected and the
    length halved, so the likelihood never decreases. Every gradient needs a
    sum over all 2**M configurations.
    """
    t0 = time.perf_counter()
    M = ens.M
    _check_cap(M, cfg.cap)
    data = observed_moments(ens)
    w = np.zeros(n_params(M)) if w0 is None else np.array(as_params(w0, M).w)

    def evaluate(x):
        logZ, model = exact_statistics(ParameterVector(x, M), cfg.cap)
        return float(x @ data) - logZ, data - model

    ll, grad = evaluate(w)
    trace = [ll]
    alpha = cfg.alpha
    converged = False
    it = 0
    rejected = 0
    while it < cfg.max_iters:
        if np.max(np.abs(grad)) < cfg.tol:
            converged = True
            break
        cand = w + alpha * grad
        ll_new, grad_new = evaluate(cand)
        it += 1
        if ll_new >= ll - _LL_SLACK * max(1.0, abs(ll)):
            alpha = float(_bb_step(cand - w, grad - grad_new, alpha))
            w, ll, grad = cand, ll_new, grad_new
            trace.append(ll)
        else:
            alpha *= 0.5
            rejected += 1
    if not converged and np.max(np.abs(grad)) < cfg.tol:
        converged = True
    wp = ParameterVector(w, M)
    return FitReport(
        method="mle",
        w=wp,
        iterations=it,
        converged=converged,
        final_energy=mean_energy_observed(wp, ens),
        seconds=time.perf_counter() - t0,
        extras={
            "log_likelihood": ll,
            "gradient_norm": float(np.max(np.abs(grad))),
            "rejected_steps": rejected,
            "loglik_trace": trace,
        },
    )


def _ln2cosh(x: np.ndarray) -> np.ndarray:
    ax = np.abs(x)
    return ax + np.log1p(np.exp(-2.0 * ax))


def pseudo_loglik(B: np.ndarray, ens: ObservationEnsemble):
    """Per-spin conditional log-likelihoods and their gradients.

    ``B[i, i]`` is the field of spin ``i`` and ``B[i, k]`` the coupling it
    sees from spin ``k``, so the local field is
    ``theta_i = B[i, i] + sum_{k != i} B[i, k] s_k``. Returns ``(ll, G)``
    with ``ll[i] = sum_s f(s) (s_i theta_i - ln 2 cosh theta_i)`` and
    ``G[i]`` its gradient with respect to row ``B[i]``.
    """
    s = ens.float_spins
    f = ens.frequencies
    diag = np.diag(B).copy()
    off = B - np.diag(diag)
    theta = s @ off.T + diag
    ll = f @ (s * theta - _ln2cosh(theta))
    resid = (s - np.tanh(theta)) * f[:, None]
    G = resid.T @ s
    np.fill_diagonal(G, resid.sum(axis=0))
    return ll, G


def symmetrize(B: np.ndarray) -> ParameterVector:
    """Fields from the diagonal, couplings as the mean of ``B[j, k]`` and ``B[k, j]``."""
    M = B.shape[0]
    sym = 0.5 * (B + B.T)
    return ParameterVector(np.concatenate([np.diag(B), sym[np.triu_indices(M, 1)]]), M)


def ple_fit(ens: ObservationEnsemble, cfg: PleConfig = PleConfig(), B0=None) -> FitReport:
    """Maximize each spin's conditional likelihood separately, then symmetrize.

    The M problems are concave and independent; they are advanced together
    with one step length per spin (Barzilai-Borwein trial, halved on a
    decrease, as in :func:`mle_fit`), and a spin stops moving once its
    gradient is below ``tol``. ``B0`` optionally sets the starting
    conditional-parameter matrix (fields on the diagonal).
    """
    t0 = time.perf_counter()
    M = ens.M
    B = np.zeros((M, M)) if B0 is None else np.array(B0, dtype=np.float64)
    if B.shape != (M, M):
        raise ValueError(f"B0 must be {M}x{M}")
    ll, G = pseudo_loglik(B, ens)
    alpha = np.full(M, cfg.alpha)
    active = np.max(np.abs(G), axis=1) >= cfg.tol
    it = 0
    while it < cfg.max_iters and active.any():
        cand = B + (alpha * active)[:, None] * G
        ll_new, G_new = pseudo_loglik(cand, ens)
        it += 1
        ok = active & (ll_new >= ll - _LL_SLACK * np.maximum(1.0, np.abs(ll)))
        bb = _bb_step(cand - B, G - G_new, alpha, axis=1)
        alpha = np.where(ok, bb, np.where(active, alpha * 0.5, alpha))
        B[ok] = cand[ok]
        ll[ok] = ll_new[ok]
        G[ok] = G_new[ok]
        active = np.max(np.abs(G), axis=1) >= cfg.tol
    wp = symmetrize(B)
    return FitReport(
        method="ple",
        w=wp,
        iterations=it,
        converged=not active.any(),
        final_energy=mean_energy_observed(wp, ens),
        seconds=time.perf_counter() - t0,
        extras={
            "gradient_norm": float(np.max(np.abs(G))),
            "unconverged_spins": int(active.sum()),
        },
    )
