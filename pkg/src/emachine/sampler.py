"""Ground-truth parameters and observation sampling (exact or Metropolis).

All randomness comes from ``numpy.random.Generator`` over the counter-based
Philox bit generator seeded through ``SeedSequence``, so streams are
reproducible across platforms.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit

from .core import (
    DEFAULT_ENUMERATION_CAP,
    ObservationEnsemble,
    ParameterVector,
    _blocks,
    _check_cap,
    _split,
    as_params,
    index_to_spins,
    n_params,
)

_UINT64 = (1 << 64) - 1

# (field_std, g) presets for the weak/strong coupling regimes; a field_std
# of None draws fields with the coupling variance g^2 / M
PRESETS = {
    "weak": (None, 0.5),
    "strong": (None, 2.0),
}


def make_rng(seed, *key: int) -> np.random.Generator:
    """Philox generator for ``seed``, optionally split by integer ``key`` parts."""
    entropy = [int(seed) & _UINT64, *(int(k) & _UINT64 for k in key)]
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(entropy)))


@dataclass(frozen=True)
class GroundTruthSpec:
    M: int
    field_std: float | None = None
    g: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if self.M < 1:
            raise ValueError("M must be >= 1")
        if self.field_std is None:
            object.__setattr__(self, "field_std", self.g / np.sqrt(self.M))
        for name in ("field_std", "g"):
            v = getattr(self, name)
            if not np.isfinite(v) or v < 0:
                raise ValueError(f"{name} must be finite and >= 0")

    @classmethod
    def preset(cls, M: int, name: str, seed: int = 0) -> "GroundTruthSpec":
        field_std, g = PRESETS[name]
        return cls(M, field_std, g, seed)


@dataclass(frozen=True)
class SamplerConfig:
    N: int
    method: str = "metropolis"  # or "exact"
    burn_in: int = 1000
    thinning: int = 10
    seed: int = 0

    def __post_init__(self):
        if self.N < 1:
            raise ValueError("N must be >= 1")
        if self.burn_in < 0 or self.thinning < 0:
            raise ValueError("burn_in and thinning must be >= 0")
        if self.method not in ("exact", "metropolis"):
            raise ValueError(f"unknown sampling method {self.method!r}")


def draw_true_parameters(spec: GroundTruthSpec) -> ParameterVector:
    """Fields ~ N(0, field_std^2), couplings ~ N(0, g^2 / M).

    The default ``field_std`` (None) gives every parameter the same
    distribution N(0, g^2 / M).
    """
    rng = make_rng(spec.seed)
    h = rng.standard_normal(spec.M) * spec.field_std
    J = rng.standard_normal(n_params(spec.M) - spec.M) * (spec.g / np.sqrt(spec.M))
    return ParameterVector(np.concatenate([h, J]), spec.M)


def sample(w, cfg: SamplerConfig) -> ObservationEnsemble:
    if cfg.method == "exact":
        return sample_exact(w, cfg)
    return sample_metropolis(w, cfg)


def sample_exact(w, cfg: SamplerConfig, cap: int = DEFAULT_ENUMERATION_CAP) -> ObservationEnsemble:
    """N independent draws from the fully enumerated distribution.

    Counts are drawn block by block: a multinomial over block masses, then a
    multinomial inside each block, which equals one multinomial over all
    2**M states without holding them in memory at once.
    """
    p = as_params(w)
    _check_cap(p.M, cap)
    rng = make_rng(cfg.seed)
    log_mass = []
    for _, _, E in _blocks(p):
        m = E.max()
        log_mass.append(m + np.log(np.exp(E - m).sum()))
    log_mass = np.array(log_mass)
    mass = np.exp(log_mass - log_mass.max())
    block_counts = rng.multinomial(cfg.N, mass / mass.sum())

    lo, _ = _split(p.M)
    indices, counts = [], []
    offset = 0
    for b, (_, _, E) in enumerate(_blocks(p)):
        size = E.size
        if block_counts[b]:
            q = np.exp(E.ravel() - E.max())
            c = rng.multinomial(block_counts[b], q / q.sum())
            nz = np.flatnonzero(c)
            indices.append(offset + nz)
            counts.append(c[nz])
        offset += size
    idx = np.concatenate(indices)
    return ObservationEnsemble.from_samples_with_counts(
        index_to_spins(idx, p.M), np.concatenate(counts)
    )


def flip_delta(w, spins: np.ndarray, i: int) -> float:
    """Change of ``w . O(s)`` when spin ``i`` is flipped: ``-2 s_i (h_i + sum_k J_ik s_k)``."""
    p = as_params(w)
    s = np.asarray(spins, dtype=np.float64)
    return float(-2.0 * s[i] * (p.h[i] + p.J[i] @ s))


@njit(cache=True)
def _sweeps(state, h, J, u):
    """Lazy single-spin Metropolis, systematic site order, one uniform per site.

    ``x < 1/2`` proposes a flip (then ``2x`` is a fresh uniform for the
    acceptance test ``2x < exp(delta)``); otherwise the site is left alone.
    The lazy proposal keeps the chain aperiodic when every flip is accepted.
    """
    M = state.shape[0]
    n = u.shape[0] // M
    t = 0
    for _ in range(n):
        for i in range(M):
            x = u[t]
            t += 1
            if x < 0.5:
                local = h[i]
                for k in range(M):
                    local += J[i, k] * state[k]
                delta = -2.0 * state[i] * local
                if delta >= 0.0 or 2.0 * x < np.exp(delta):
                    state[i] = -state[i]


@njit(cache=True)
def _record(state, h, J, u, thin, out):
    M = state.shape[0]
    per = thin * M
    for n in range(out.shape[0]):
        _sweeps(state, h, J, u[n * per : (n + 1) * per])
        for i in range(M):
            out[n, i] = state[i]


def sample_metropolis(w, cfg: SamplerConfig, chunk: int = 1 << 22) -> ObservationEnsemble:
    """Metropolis chain: ``burn_in`` sweeps, then one sample every ``thinning`` sweeps."""
    p = as_params(w)
    M = p.M
    rng = make_rng(cfg.seed)
    h = np.ascontiguousarray(p.h)
    J = np.ascontiguousarray(p.J)
    state = (2 * rng.integers(0, 2, size=M) - 1).astype(np.float64)

    sweeps_per_chunk = max(1, chunk // M)
    left = cfg.burn_in
    while left > 0:
        n = min(left, sweeps_per_chunk)
        _sweeps(state, h, J, rng.random(n * M))
        left -= n

    thin = max(cfg.thinning, 1)
    samples_per_chunk = max(1, chunk // (thin * M))
    out = np.empty((cfg.N, M), dtype=np.int8)
    buf = np.empty((samples_per_chunk, M))
    done = 0
    while done < cfg.N:
        n = min(cfg.N - done, samples_per_chunk)
        _record(state, h, J, rng.random(n * thin * M), thin, buf[:n])
        out[done : done + n] = buf[:n]
        done += n
    return ObservationEnsemble.from_samples(out)
