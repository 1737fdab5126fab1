"""Missing-pixel reconstruction for binarized images.

Pixels that take one value in more than ``majority`` of the training images
are *stable* and are filled with that value. The remaining *variable* pixels
get a pairwise model fitted with the erasure machine. A test image's missing
variable pixels are then set by maximizing ``w . O`` conditioned on the
observed pixels, either exactly (few missing pixels) or with iterated
conditional modes.
"""

from __future__ import annotations

import gzip
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .core import ObservationEnsemble, ParameterVector, all_spins, as_params
from .machine import DEFAULT_GRID, EmConfig, EpsilonScanReport, fit, scan_epsilon
from .sampler import make_rng

IDX_IMAGES = 2051
IDX_LABELS = 2049
EXHAUSTIVE_LIMIT = 15
MAX_SWEEPS = 100


# --------------------------------------------------------------------------
# File formats

def _open(path):
    path = Path(path)
    return gzip.open(path, "rb") if path.suffix == ".gz" else open(path, "rb")


def read_idx(path) -> np.ndarray:
    """Read an IDX image (magic 2051) or label (magic 2049) file, optionally gzipped."""
    with _open(path) as fh:
        data = fh.read()
    if len(data) < 8:
        raise ValueError(f"{path}: truncated IDX header")
    magic = struct.unpack(">I", data[:4])[0]
    if magic == IDX_IMAGES:
        n, rows, cols = struct.unpack(">III", data[4:16])
        shape, offset = (n, rows, cols), 16
    elif magic == IDX_LABELS:
        (n,) = struct.unpack(">I", data[4:8])
        shape, offset = (n,), 8
    else:
        raise ValueError(f"{path}: unsupported IDX magic {magic}")
    expected = int(np.prod(shape))
    body = np.frombuffer(data, dtype=np.uint8, offset=offset)
    if body.size != expected:
        raise ValueError(f"{path}: expected {expected} payload bytes, found {body.size}")
    return body.reshape(shape).copy()


def write_idx(path, array) -> None:
    a = np.asarray(array, dtype=np.uint8)
    if a.ndim == 3:
        header = struct.pack(">IIII", IDX_IMAGES, *a.shape)
    elif a.ndim == 1:
        header = struct.pack(">II", IDX_LABELS, a.shape[0])
    else:
        raise ValueError("IDX writer handles (n, rows, cols) images or (n,) labels")
    payload = header + a.tobytes()
    path = Path(path)
    if path.suffix == ".gz":
        with gzip.GzipFile(path, "wb", mtime=0) as fh:
            fh.write(payload)
    else:
        path.write_bytes(payload)


def load_digit(images_path, labels_path, digit: int | None) -> np.ndarray:
    """Images (n, rows, cols) uint8, restricted to ``digit`` when given."""
    images = read_idx(images_path)
    labels = read_idx(labels_path)
    if images.ndim != 3 or labels.ndim != 1 or len(images) != len(labels):
        raise ValueError("image and label files do not match")
    return images if digit is None else images[labels == digit]


def find_mnist(directory) -> dict[str, Path] | None:
    """Locate the four standard MNIST IDX files (plain or .gz) in ``directory``."""
    if directory is None:
        return None
    d = Path(directory)
    names = {
        "train_images": "train-images-idx3-ubyte",
        "train_labels": "train-labels-idx1-ubyte",
        "test_images": "t10k-images-idx3-ubyte",
        "test_labels": "t10k-labels-idx1-ubyte",
    }
    found = {}
    for key, stem in names.items():
        for cand in (d / stem, d / f"{stem}.gz", d / stem.replace("-idx", ".idx")):
            if cand.exists():
                found[key] = cand
                break
        else:
            return None
    return found


def write_pgm(path, image: "BinaryImage") -> None:
    """Binary PGM (P5, maxval 255); -1 -> 0, +1 -> 255."""
    if np.any(image.pixels == 0):
        raise ValueError("cannot write an image that still has missing pixels")
    body = np.where(image.pixels > 0, 255, 0).astype(np.uint8).tobytes()
    Path(path).write_bytes(f"P5\n{image.width} {image.height}\n255\n".encode() + body)


def read_pgm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    parts = data.split(maxsplit=4)
    if parts[0] != b"P5":
        raise ValueError(f"{path}: not a binary PGM")
    width, height, maxval = int(parts[1]), int(parts[2]), int(parts[3])
    if maxval != 255:
        raise ValueError(f"{path}: only maxval 255 is supported")
    return np.frombuffer(parts[4], dtype=np.uint8).reshape(height, width)


# --------------------------------------------------------------------------
# Images and partitions

@dataclass(frozen=True, eq=False)
class BinaryImage:
    width: int
    height: int
    pixels: np.ndarray  # int8 in {-1, 0, +1}; 0 marks a missing pixel

    def __post_init__(self):
        px = np.asarray(self.pixels, dtype=np.int8).ravel()
        if px.size != self.width * self.height:
            raise ValueError("pixel count does not match width * height")
        if not np.all((px == 1) | (px == -1) | (px == 0)):
            raise ValueError("pixels must be -1, 0 or +1")
        object.__setattr__(self, "pixels", px)

    @property
    def missing(self) -> np.ndarray:
        return np.flatnonzero(self.pixels == 0)

    def with_missing(self, indices) -> "BinaryImage":
        px = self.pixels.copy()
        px[np.asarray(indices, dtype=np.int64)] = 0
        return BinaryImage(self.width, self.height, px)

    def __eq__(self, other) -> bool:
        if not isinstance(other, BinaryImage):
            return NotImplemented
        return (self.width, self.height) == (other.width, other.height) and np.array_equal(
            self.pixels, other.pixels
        )


def binarize(raw, threshold: int = 1) -> BinaryImage:
    """+1 where the grey value is strictly above ``threshold``, else -1."""
    a = np.asarray(raw)
    if a.ndim == 1:
        a = a[None, :]
    height, width = a.shape
    return BinaryImage(width, height, np.where(a > threshold, 1, -1))


def binarize_stack(raw, threshold: int = 1) -> np.ndarray:
    """(n, rows, cols) grey images to (n, rows*cols) int8 spins."""
    a = np.asarray(raw)
    return np.where(a.reshape(len(a), -1) > threshold, 1, -1).astype(np.int8)


def _as_matrix(images) -> np.ndarray:
    if isinstance(images, np.ndarray):
        return np.asarray(images, dtype=np.int8).reshape(len(images), -1)
    return np.stack([im.pixels for im in images])


@dataclass(frozen=True, eq=False)
class PixelPartition:
    """Split of pixel indices into stable (fixed fill value) and variable ones.

    ``majority_value[i]`` is the more common training value of pixel ``i``
    (+1 on an exact split) and ``majority_fraction[i]`` its frequency.
    """

    majority_value: np.ndarray
    majority_fraction: np.ndarray
    stable: np.ndarray
    variable: np.ndarray
    threshold: float = 0.8

    @property
    def n_pixels(self) -> int:
        return self.majority_value.size

    @property
    def stable_values(self) -> np.ndarray:
        return self.majority_value[self.stable]


def partition_pixels(train, majority: float = 0.8) -> PixelPartition:
    if not 0.5 < majority < 1:
        raise ValueError("majority must lie strictly between 0.5 and 1")
    X = _as_matrix(train)
    if X.shape[0] == 0:
        raise ValueError("empty training set")
    frac_up = np.mean(X == 1, axis=0)
    value = np.where(frac_up >= 0.5, 1, -1).astype(np.int8)
    fraction = np.maximum(frac_up, 1.0 - frac_up)
    is_stable = fraction > majority
    return PixelPartition(
        majority_value=value,
        majority_fraction=fraction,
        stable=np.flatnonzero(is_stable),
        variable=np.flatnonzero(~is_stable),
        threshold=majority,
    )


def variable_ensemble(train, part: PixelPartition) -> ObservationEnsemble:
    return ObservationEnsemble.from_samples(_as_matrix(train)[:, part.variable])


# --------------------------------------------------------------------------
# Conditional maximization

def icm(x: np.ndarray, missing: np.ndarray, w, init: np.ndarray,
        max_sweeps: int = MAX_SWEEPS) -> tuple[np.ndarray, int]:
    """Iterated conditional modes over the ``missing`` slots of ``x``.

    ``x`` holds the variable-pixel spins (values at missing slots ignored).
    Missing slots start at ``init`` and are swept in ascending order, each
    set to the sign of its local field (ties go to +1), until a sweep changes
    nothing or ``max_sweeps`` is reached. Returns the filled vector and the
    number of sweeps run.
    """
    p = as_params(w)
    h, J = p.h, p.J
    s = np.array(x, dtype=np.float64)
    order = np.sort(np.asarray(missing, dtype=np.int64))
    s[order] = init
    sweeps = 0
    while sweeps < max_sweeps:
        sweeps += 1
        changed = False
        for i in order:
            new = 1.0 if h[i] + J[i] @ s >= 0 else -1.0
            if new != s[i]:
                s[i] = new
                changed = True
        if not changed:
            break
    return s.astype(np.int8), sweeps


def exhaustive(x: np.ndarray, missing: np.ndarray, w) -> np.ndarray:
    """Exact conditional argmax of ``w . O`` over all fillings of ``missing``.

    Ties resolve to the first maximizer in configuration-index order.
    """
    p = as_params(w)
    m = np.sort(np.asarray(missing, dtype=np.int64))
    s = np.array(x, dtype=np.float64)
    if m.size == 0:
        return s.astype(np.int8)
    if m.size > 24:
        raise ValueError(f"{m.size} missing pixels is too many for exhaustive search")
    s[m] = 0.0
    b = p.h[m] + p.J[m] @ s
    Jmm = p.J[np.ix_(m, m)]
    S = all_spins(m.size).astype(np.float64)
    score = S @ b + 0.5 * np.einsum("ni,ni->n", S @ Jmm, S)
    s[m] = S[int(np.argmax(score))]
    return s.astype(np.int8)


def conditional_score(x: np.ndarray, w) -> float:
    p = as_params(w)
    s = np.asarray(x, dtype=np.float64)
    return float(s @ p.h + 0.5 * s @ p.J @ s)


def reconstruct(test: BinaryImage, part: PixelPartition, w, method: str = "auto",
                max_sweeps: int = MAX_SWEEPS) -> BinaryImage:
    """Fill every missing pixel of ``test``.

    Stable pixels take their stored value. Variable pixels are maximized
    under ``w``: ``method`` is ``"icm"``, ``"exhaustive"``, or ``"auto"``
    (exhaustive when at most 15 variable pixels are missing, else ICM).
    """
    p = as_params(w)
    if p.M != part.variable.size:
        raise ValueError(
            f"dimension mismatch: model has M={p.M}, partition has {part.variable.size} variable pixels"
        )
    if test.pixels.size != part.n_pixels:
        raise ValueError("test image size does not match the partition")
    out = test.pixels.copy()
    miss = out == 0
    stable_miss = part.stable[miss[part.stable]]
    out[stable_miss] = part.majority_value[stable_miss]

    x = out[part.variable]
    slots = np.flatnonzero(x == 0)
    if slots.size:
        if method == "auto":
            method = "exhaustive" if slots.size <= EXHAUSTIVE_LIMIT else "icm"
        if method == "exhaustive":
            x = exhaustive(x, slots, p)
        elif method == "icm":
            init = part.majority_value[part.variable[slots]]
            x, _ = icm(x, slots, p, init, max_sweeps)
        else:
            raise ValueError(f"unknown method {method!r}")
        out[part.variable] = x
    return BinaryImage(test.width, test.height, out)


def majority_fill(test: BinaryImage, part: PixelPartition) -> BinaryImage:
    """Baseline: every missing pixel takes its training-majority value."""
    out = test.pixels.copy()
    miss = out == 0
    out[miss] = part.majority_value[miss]
    return BinaryImage(test.width, test.height, out)


# --------------------------------------------------------------------------
# Synthetic glyphs

def synthetic_glyphs(n: int, seed: int = 0, size: int = 16) -> np.ndarray:
    """``n`` grey (0-255) figure-eight glyphs on a ``size`` x ``size`` grid.

    Two stacked elliptical rings with per-glyph jitter in centre, radii,
    stroke width and slant, plus sparse speckle.
    """
    rng = make_rng(seed)
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    u = size / 16.0
    out = np.empty((n, size, size), dtype=np.uint8)
    for t in range(n):
        cx = 7.5 * u + rng.normal(0, 0.6 * u)
        slant = rng.normal(0, 0.12)
        stroke = rng.uniform(0.9, 1.6) * u
        img = np.zeros((size, size))
        for cy, ry, rx in (
            (4.3 * u + rng.normal(0, 0.4 * u), rng.uniform(2.6, 3.4) * u, rng.uniform(2.4, 3.4) * u),
            (11.0 * u + rng.normal(0, 0.4 * u), rng.uniform(3.0, 3.8) * u, rng.uniform(3.0, 4.2) * u),
        ):
            dx = xx - (cx + slant * (yy - 7.5 * u))
            r = np.sqrt((dx / rx) ** 2 + ((yy - cy) / ry) ** 2)
            ring = 1.0 - np.abs(r - 1.0) * min(rx, ry) / stroke
            img = np.maximum(img, np.clip(ring, 0.0, 1.0))
        speckle = rng.random((size, size)) < 0.02
        img[speckle] = 1.0 - img[speckle]
        out[t] = np.rint(255 * img).astype(np.uint8)
    return out


# --------------------------------------------------------------------------
# Pipeline

@dataclass
class ImageResult:
    index: int
    missing: np.ndarray
    accuracy: float
    baseline_accuracy: float
    variable_missing: int
    image: BinaryImage

    def to_dict(self) -> dict:
        return {
            "index": self.index,
            "n_missing": int(self.missing.size),
            "variable_missing": self.variable_missing,
            "accuracy": self.accuracy,
            "baseline_accuracy": self.baseline_accuracy,
        }


@dataclass
class ReconstructionResult:
    partition: PixelPartition
    w: ParameterVector
    epsilon: float
    scan: EpsilonScanReport | None
    images: list[ImageResult] = field(default_factory=list)
    settings: dict = field(default_factory=dict)

    @property
    def accuracies(self) -> np.ndarray:
        return np.array([r.accuracy for r in self.images])

    @property
    def baseline_accuracies(self) -> np.ndarray:
        return np.array([r.baseline_accuracy for r in self.images])

    def to_dict(self) -> dict:
        return {
            "settings": self.settings,
            "n_variable": int(self.partition.variable.size),
            "n_stable": int(self.partition.stable.size),
            "epsilon": self.epsilon,
            "mean_accuracy": float(self.accuracies.mean()) if self.images else None,
            "mean_baseline_accuracy": float(self.baseline_accuracies.mean()) if self.images else None,
            "images": [r.to_dict() for r in self.images],
        }


def run_pipeline(train_raw, test_raw, n_missing: int = 90, majority: float = 0.8,
                 threshold: int = 1, grid: Sequence[float] = DEFAULT_GRID,
                 eps: float | None = None, em_cfg: EmConfig | None = None,
                 seed: int = 0, method: str = "auto", test_source: str = "held-out") -> ReconstructionResult:
    """Fit on ``train_raw`` grey images and fill ``n_missing`` random pixels of
    each ``test_raw`` image.

    ``eps=None`` selects epsilon by scanning ``grid``. The missing pixels of
    test image ``j`` come from the stream ``make_rng(seed, j)``.
    """
    train = binarize_stack(train_raw, threshold)
    test = binarize_stack(test_raw, threshold)
    rows, cols = np.asarray(test_raw).shape[1:]
    part = partition_pixels(train, majority)
    ens = variable_ensemble(train, part)
    cfg = em_cfg or EmConfig()
    if eps is None:
        scan = scan_epsilon(ens, grid, cfg)
        w, chosen = scan.best.w, scan.selected_eps
    else:
        from dataclasses import replace

        scan = None
        w, chosen = fit(ens, replace(cfg, eps=eps)).w, eps
    result = ReconstructionResult(
        partition=part,
        w=w,
        epsilon=chosen,
        scan=scan,
        settings={
            "n_train": int(len(train)),
            "n_test": int(len(test)),
            "n_missing": n_missing,
            "majority": majority,
            "threshold": threshold,
            "eps_selection": "scan" if eps is None else "fixed",
            "method": method,
            "seed": seed,
            "test_source": test_source,
        },
    )
    P = train.shape[1]
    var_mask = np.zeros(P, dtype=bool)
    var_mask[part.variable] = True
    for j, pixels in enumerate(test):
        rng = make_rng(seed, j)
        missing = np.sort(rng.choice(P, size=n_missing, replace=False))
        original = BinaryImage(cols, rows, pixels)
        masked = original.with_missing(missing)
        filled = reconstruct(masked, part, w, method)
        base = majority_fill(masked, part)
        result.images.append(
            ImageResult(
                index=j,
                missing=missing,
                accuracy=float(np.mean(filled.pixels[missing] == pixels[missing])),
                baseline_accuracy=float(np.mean(base.pixels[missing] == pixels[missing])),
                variable_missing=int(var_mask[missing].sum()),
                image=filled,
            )
        )
    return result
