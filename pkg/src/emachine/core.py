"""Spins, parameter vectors, observation ensembles and log-partition functions.

Conventions used throughout the package:

* spins take values in {-1, +1} and are stored as ``int8``;
* a parameter vector ``w`` of length ``L = M + M(M-1)/2`` holds the fields
  ``h`` in slots ``0..M-1`` followed by the couplings ``J[j, k]`` (``j < k``)
  in row-major order;
* ``p(s) ~ exp(w . O(s))`` with ``O(s) = (s_i, s_j s_k)`` and the energy is
  ``E(s) = -w . O(s)``.

Configuration ``c`` in ``[0, 2**M)`` maps to spins via bit ``i`` of ``c``:
set bit means ``s_i = +1``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Iterator, Mapping

import numpy as np

DEFAULT_ENUMERATION_CAP = 25

# Entries per enumeration block (float64), ~32 MiB.
_BLOCK_ENTRIES = 1 << 22


class IntractableEnumeration(ValueError):
    """Raised when an exact sum over 2**M configurations exceeds the cap."""


def n_params(M: int) -> int:
    return M + M * (M - 1) // 2


def n_spins(L: int) -> int:
    """Invert ``L = M(M+1)/2``."""
    M = int(round((np.sqrt(8 * L + 1) - 1) / 2))
    if M < 1 or n_params(M) != L:
        raise ValueError(f"{L} is not a valid parameter-vector length")
    return M


def pair_index(M: int, j: int, k: int) -> int:
    """Slot of coupling ``J[j, k]`` in the flat parameter vector."""
    if not 0 <= j < k < M:
        raise ValueError(f"need 0 <= j < k < M, got j={j}, k={k}, M={M}")
    return M + j * (2 * M - j - 1) // 2 + (k - j - 1)


def pair_decode(M: int, index: int) -> tuple[int, int]:
    """Inverse of :func:`pair_index`."""
    offset = index - M
    if not 0 <= offset < M * (M - 1) // 2:
        raise ValueError(f"index {index} is not a coupling slot for M={M}")
    j = 0
    row = M - 1
    while offset >= row:
        offset -= row
        j += 1
        row -= 1
    return j, j + 1 + offset


@dataclass(frozen=True)
class SpinConfiguration:
    """A single +-1 configuration packed into a Python int (hashable)."""

    M: int
    bits: int

    @classmethod
    def from_spins(cls, spins: Iterable[int]) -> "SpinConfiguration":
        s = np.asarray(list(spins) if not isinstance(spins, np.ndarray) else spins)
        _check_spins(s)
        bits = 0
        for i, v in enumerate(s.tolist()):
            if v == 1:
                bits |= 1 << i
        return cls(len(s), bits)

    @property
    def spins(self) -> np.ndarray:
        return index_to_spins(np.array([self.bits], dtype=object), self.M)[0]

    def __len__(self) -> int:
        return self.M


def index_to_spins(indices, M: int) -> np.ndarray:
    """Spins (n, M) int8 for configuration integers ``indices``."""
    idx = np.asarray(indices)
    if idx.dtype == object:
        rows = [[1 if (int(c) >> i) & 1 else -1 for i in range(M)] for c in idx]
        return np.array(rows, dtype=np.int8).reshape(len(idx), M)
    bits = (idx[:, None].astype(np.int64) >> np.arange(M, dtype=np.int64)) & 1
    return (2 * bits - 1).astype(np.int8)


def all_spins(M: int) -> np.ndarray:
    """All 2**M configurations as a (2**M, M) int8 array, in index order."""
    return index_to_spins(np.arange(1 << M, dtype=np.int64), M)


def _check_spins(s: np.ndarray) -> None:
    if s.size and not np.all((s == 1) | (s == -1)):
        raise ValueError("spin values must be exactly -1 or +1")


@dataclass(frozen=True, eq=False)
class ParameterVector:
    """Fields and upper-triangular couplings in one flat vector."""

    w: np.ndarray
    M: int = field(default=0)

    def __post_init__(self):
        w = np.array(self.w, dtype=np.float64).ravel()
        M = self.M or n_spins(w.size)
        if w.size != n_params(M):
            raise ValueError(f"expected {n_params(M)} parameters for M={M}, got {w.size}")
        if not np.all(np.isfinite(w)):
            raise ValueError("parameter vector has non-finite entries")
        w.setflags(write=False)
        object.__setattr__(self, "w", w)
        object.__setattr__(self, "M", M)

    @classmethod
    def zeros(cls, M: int) -> "ParameterVector":
        return cls(np.zeros(n_params(M)), M)

    @classmethod
    def from_fields_couplings(cls, h, J) -> "ParameterVector":
        """Build from fields ``h`` and a coupling matrix (upper triangle is read)."""
        h = np.asarray(h, dtype=np.float64)
        J = np.asarray(J, dtype=np.float64)
        M = h.size
        iu = np.triu_indices(M, 1)
        return cls(np.concatenate([h, J[iu]]), M)

    @property
    def L(self) -> int:
        return self.w.size

    @property
    def h(self) -> np.ndarray:
        return self.w[: self.M]

    @property
    def couplings(self) -> np.ndarray:
        return self.w[self.M :]

    @cached_property
    def J(self) -> np.ndarray:
        """Symmetric (M, M) coupling matrix with zero diagonal."""
        return couplings_to_matrix(self.couplings, self.M)

    def __eq__(self, other) -> bool:
        if not isinstance(other, ParameterVector):
            return NotImplemented
        return self.M == other.M and np.array_equal(self.w, other.w)

    def __hash__(self):
        return hash((self.M, self.w.tobytes()))


def couplings_to_matrix(couplings: np.ndarray, M: int) -> np.ndarray:
    J = np.zeros((M, M))
    iu = np.triu_indices(M, 1)
    J[iu] = couplings
    return J + J.T


def as_params(w, M: int | None = None) -> ParameterVector:
    if isinstance(w, ParameterVector):
        if M is not None and w.M != M:
            raise ValueError(f"dimension mismatch: parameters for M={w.M}, expected M={M}")
        return w
    return ParameterVector(w, M or 0)


def operators(spins) -> np.ndarray:
    """Operator matrix O(s) of shape (n, L): spins followed by pair products."""
    s = np.atleast_2d(np.asarray(spins, dtype=np.float64))
    M = s.shape[1]
    j, k = np.triu_indices(M, 1)
    return np.hstack([s, s[:, j] * s[:, k]])


def operator_sum(w, spins) -> np.ndarray | float:
    """``w . O(s)`` for one configuration (float) or a batch (array).

    Works without materialising the operator matrix: the pair part is
    ``0.5 * s^T J s`` with the symmetric zero-diagonal ``J``.
    """
    s = np.asarray(spins.spins if isinstance(spins, SpinConfiguration) else spins)
    single = s.ndim == 1
    s = np.atleast_2d(s).astype(np.float64)
    p = as_params(w)
    if s.shape[1] != p.M:
        raise ValueError(f"dimension mismatch: spins have M={s.shape[1]}, parameters M={p.M}")
    out = s @ p.h + 0.5 * np.einsum("ni,ni->n", s @ p.J, s)
    return float(out[0]) if single else out


def _pair_moments(s: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """Weighted first and pairwise moments, flattened to the w layout."""
    M = s.shape[1]
    first = weights @ s
    second = (s * weights[:, None]).T @ s
    return np.concatenate([first, second[np.triu_indices(M, 1)]])


@dataclass(frozen=True, eq=False)
class ObservationEnsemble:
    """Deduplicated observed configurations with their counts.

    ``spins`` is (U, M) int8 with unique rows, ``counts`` is (U,) int64.
    """

    spins: np.ndarray
    counts: np.ndarray

    def __post_init__(self):
        s = np.array(self.spins, dtype=np.int8)
        c = np.array(self.counts, dtype=np.int64).ravel()
        if s.ndim != 2 or s.shape[0] == 0 or s.shape[1] == 0:
            raise ValueError("ensemble needs at least one configuration of at least one spin")
        if s.shape[0] != c.size:
            raise ValueError("spins and counts disagree in length")
        if np.any(c < 1):
            raise ValueError("every count must be >= 1")
        _check_spins(s)
        s.setflags(write=False)
        c.setflags(write=False)
        object.__setattr__(self, "spins", s)
        object.__setattr__(self, "counts", c)

    @classmethod
    def from_samples(cls, samples) -> "ObservationEnsemble":
        """Deduplicate an (N, M) array of +-1 samples.

        Unique rows come out sorted by their packed bytes, so the ensemble
        does not depend on the order in which samples were drawn.
        """
        s = np.asarray(samples, dtype=np.int8)
        if s.ndim != 2 or s.shape[0] == 0:
            raise ValueError("need a non-empty (N, M) sample array")
        _check_spins(s)
        packed = np.packbits(s > 0, axis=1)
        _, first, counts = np.unique(packed, axis=0, return_index=True, return_counts=True)
        return cls(s[first], counts)

    @classmethod
    def from_counts(cls, counts: Mapping[SpinConfiguration, int]) -> "ObservationEnsemble":
        keys = list(counts)
        if not keys:
            raise ValueError("empty ensemble")
        spins = np.stack([k.spins for k in keys])
        ens = cls.from_samples(spins)  # canonical order
        lookup = {k.bits: counts[k] for k in keys}
        order = [SpinConfiguration.from_spins(r).bits for r in ens.spins]
        return cls(ens.spins, [lookup[b] for b in order])

    @classmethod
    def from_index_counts(cls, indices, counts, M: int) -> "ObservationEnsemble":
        """From configuration integers and counts (zero counts dropped)."""
        indices = np.asarray(indices)
        counts = np.asarray(counts)
        keep = counts > 0
        return cls.from_samples_with_counts(index_to_spins(indices[keep], M), counts[keep])

    @classmethod
    def from_samples_with_counts(cls, spins, counts) -> "ObservationEnsemble":
        """Merge possibly repeated rows, summing their counts."""
        s = np.asarray(spins, dtype=np.int8)
        c = np.asarray(counts, dtype=np.int64)
        packed = np.packbits(s > 0, axis=1)
        _, first, inverse = np.unique(packed, axis=0, return_index=True, return_inverse=True)
        merged = np.bincount(inverse.ravel(), weights=c, minlength=first.size)
        return cls(s[first], np.rint(merged).astype(np.int64))

    @property
    def M(self) -> int:
        return self.spins.shape[1]

    @property
    def N(self) -> int:
        return int(self.counts.sum())

    @property
    def n_unique(self) -> int:
        return self.spins.shape[0]

    @cached_property
    def frequencies(self) -> np.ndarray:
        f = self.counts / self.counts.sum()
        f.setflags(write=False)
        return f

    @cached_property
    def float_spins(self) -> np.ndarray:
        s = self.spins.astype(np.float64)
        s.setflags(write=False)
        return s

    def entries(self) -> dict[SpinConfiguration, int]:
        return {SpinConfiguration.from_spins(r): int(c) for r, c in zip(self.spins, self.counts)}

    def expand(self) -> np.ndarray:
        """All N observations as an (N, M) array (rows grouped by configuration)."""
        return np.repeat(self.spins, self.counts, axis=0)

    def __iter__(self) -> Iterator[tuple[np.ndarray, int]]:
        return zip(self.spins, self.counts.tolist())

    def __eq__(self, other) -> bool:
        if not isinstance(other, ObservationEnsemble):
            return NotImplemented
        return np.array_equal(self.spins, other.spins) and np.array_equal(self.counts, other.counts)


@dataclass(frozen=True, eq=False)
class ReweightedEnsemble:
    """Observed support with normalized weights that replace the frequencies."""

    spins: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        wts = np.asarray(self.weights, dtype=np.float64)
        if wts.shape != (self.spins.shape[0],) or np.any(wts < 0) or not np.all(np.isfinite(wts)):
            raise ValueError("weights must be finite, non-negative and match the support")
        object.__setattr__(self, "weights", wts)

    @property
    def M(self) -> int:
        return self.spins.shape[1]


def observed_moments(ens: ObservationEnsemble) -> np.ndarray:
    """Empirical ``<O_I>_f``: means of s_i, then of s_j s_k (j < k)."""
    return _pair_moments(ens.float_spins, ens.frequencies)


def weighted_moments(spins, weights) -> np.ndarray:
    return _pair_moments(np.asarray(spins, dtype=np.float64), np.asarray(weights, dtype=np.float64))


def mean_energy_observed(w, ens: ObservationEnsemble) -> float:
    """``<E>_f = -sum_s f_s w . O(s)`` over the raw observed frequencies."""
    p = as_params(w, ens.M)
    return -float(ens.frequencies @ operator_sum(p, ens.float_spins))


def _logsumexp(a: np.ndarray) -> float:
    m = np.max(a)
    return float(m + np.log(np.sum(np.exp(a - m))))


@dataclass(frozen=True)
class TruncatedLogZ:
    value: float
    max_scaled: float  # max_I |eps w_I|

    @property
    def valid(self) -> bool:
        """True when every scaled parameter is inside the expansion's range."""
        return self.max_scaled < 1.0

    def __float__(self) -> float:
        return self.value


def log_partition_truncated(w, eps: float) -> TruncatedLogZ:
    """Second-order estimate ``M ln 2 + sum ln cosh(eps w_I)`` of ``ln Z(eps w)``."""
    if eps < 0:
        raise ValueError("eps must be non-negative")
    p = as_params(w)
    x = eps * p.w
    # ln cosh(x) = |x| + log1p(exp(-2|x|)) - ln 2, stable for large |x|
    ax = np.abs(x)
    lncosh = ax + np.log1p(np.exp(-2.0 * ax)) - np.log(2.0)
    max_scaled = float(ax.max()) if ax.size else 0.0
    return TruncatedLogZ(p.M * np.log(2.0) + float(lncosh.sum()), max_scaled)


def _split(M: int) -> tuple[int, int]:
    """Spins in the low (enumerated per column) and high (per row) halves."""
    lo = (M + 1) // 2
    return lo, M - lo


def _check_cap(M: int, cap: int) -> None:
    if M > cap:
        raise IntractableEnumeration(
            f"exact enumeration over 2**{M} configurations exceeds the cap M <= {cap}"
        )


def _blocks(p: ParameterVector):
    """Yield (row_spins, col_spins, log_weights) blocks covering all 2**M states.

    State index is ``row_index * 2**lo + col_index``: the low ``lo`` spins are
    the columns, the high spins the rows. The cross term is a single GEMM so
    the cost per block is O(rows * cols * lo) instead of O(rows * cols * M^2).
    """
    M = p.M
    lo, hi = _split(M)
    h, J = p.h, p.J
    S_lo = all_spins(lo).astype(np.float64)
    e_lo = S_lo @ h[:lo] + 0.5 * np.einsum("ni,ni->n", S_lo @ J[:lo, :lo], S_lo)
    n_hi = 1 << hi
    rows_per_block = max(1, min(n_hi, _BLOCK_ENTRIES >> lo))
    for start in range(0, n_hi, rows_per_block):
        idx = np.arange(start, min(n_hi, start + rows_per_block), dtype=np.int64)
        S_hi = index_to_spins(idx, hi).astype(np.float64) if hi else np.zeros((1, 0))
        e_hi = S_hi @ h[lo:] + 0.5 * np.einsum("ni,ni->n", S_hi @ J[lo:, lo:], S_hi)
        cross = (S_hi @ J[lo:, :lo]) @ S_lo.T
        yield S_hi, S_lo, e_hi[:, None] + e_lo[None, :] + cross


def log_partition_exact(w, cap: int = DEFAULT_ENUMERATION_CAP) -> float:
    """``ln Z(w)`` by summing all 2**M Boltzmann weights (max-shifted)."""
    p = as_params(w)
    _check_cap(p.M, cap)
    acc_max = -np.inf
    acc = 0.0
    for _, _, E in _blocks(p):
        m = float(E.max())
        if m > acc_max:
            acc *= np.exp(acc_max - m)
            acc_max = m
        acc += float(np.exp(E - acc_max).sum())
    return acc_max + float(np.log(acc))


def exact_statistics(w, cap: int = DEFAULT_ENUMERATION_CAP) -> tuple[float, np.ndarray]:
    """``ln Z(w)`` and the model moments ``<O_I>_p`` by exact enumeration."""
    p = as_params(w)
    M = p.M
    _check_cap(M, cap)
    lo, hi = _split(M)
    acc_max = -np.inf
    Z = 0.0
    first = np.zeros(M)
    second = np.zeros((M, M))
    for S_hi, S_lo, E in _blocks(p):
        m = float(E.max())
        if m > acc_max:
            scale = np.exp(acc_max - m)
            Z *= scale
            first *= scale
            second *= scale
            acc_max = m
        P = np.exp(E - acc_max)
        r = P.sum(axis=1)
        c = P.sum(axis=0)
        Z += float(r.sum())
        first[:lo] += c @ S_lo
        first[lo:] += r @ S_hi
        second[:lo, :lo] += (S_lo * c[:, None]).T @ S_lo
        second[lo:, lo:] += (S_hi * r[:, None]).T @ S_hi
        second[lo:, :lo] += S_hi.T @ P @ S_lo
    second[:lo, lo:] = second[lo:, :lo].T
    moments = np.concatenate([first, second[np.triu_indices(M, 1)]]) / Z
    return acc_max + float(np.log(Z)), moments


def exact_moments(w, cap: int = DEFAULT_ENUMERATION_CAP) -> np.ndarray:
    return exact_statistics(w, cap)[1]


def log_weights_all(w, cap: int = DEFAULT_ENUMERATION_CAP) -> np.ndarray:
    """Unnormalized ``w . O(s)`` for every configuration, in index order."""
    p = as_params(w)
    _check_cap(p.M, cap)
    return np.concatenate([E.ravel() for _, _, E in _blocks(p)])


def exact_probabilities(w, cap: int = DEFAULT_ENUMERATION_CAP) -> np.ndarray:
    a = log_weights_all(w, cap)
    a -= a.max()
    np.exp(a, out=a)
    return a / a.sum()
