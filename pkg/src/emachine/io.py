"""Readers and writers for the ``spins-v1`` dataset format and JSON sidecars.

``spins-v1`` is plain text::

    M N
    count s_1 s_2 ... s_M     # one line per unique configuration

Every spin token must be ``-1`` or ``1`` (a leading ``+`` is accepted).
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .core import ObservationEnsemble


class DatasetFormatError(ValueError):
    pass


def write_spins(ens: ObservationEnsemble, path) -> None:
    lines = [f"{ens.M} {ens.N}"]
    for row, count in ens:
        lines.append(f"{count} " + " ".join(str(int(v)) for v in row))
    Path(path).write_text("\n".join(lines) + "\n")


def read_spins(path) -> ObservationEnsemble:
    text = Path(path).read_text().split("\n")
    lines = [ln.strip() for ln in text if ln.strip() and not ln.lstrip().startswith("#")]
    if not lines:
        raise DatasetFormatError(f"{path}: empty dataset")
    try:
        M, N = (int(t) for t in lines[0].split())
    except ValueError:
        raise DatasetFormatError(f"{path}: header must be 'M N'") from None
    rows, counts = [], []
    for lineno, line in enumerate(lines[1:], start=2):
        tokens = line.split()
        if len(tokens) != M + 1:
            raise DatasetFormatError(f"{path}:{lineno}: expected count plus {M} spins")
        try:
            count = int(tokens[0])
        except ValueError:
            raise DatasetFormatError(f"{path}:{lineno}: bad count {tokens[0]!r}") from None
        if count < 1:
            raise DatasetFormatError(f"{path}:{lineno}: count must be >= 1")
        row = []
        for tok in tokens[1:]:
            if tok in ("1", "+1"):
                row.append(1)
            elif tok == "-1":
                row.append(-1)
            else:
                raise DatasetFormatError(f"{path}:{lineno}: spin token {tok!r} not in {{-1, +1}}")
        rows.append(row)
        counts.append(count)
    if not rows:
        raise DatasetFormatError(f"{path}: no configurations")
    if sum(counts) != N:
        raise DatasetFormatError(f"{path}: counts sum to {sum(counts)}, header says N={N}")
    return ObservationEnsemble.from_samples_with_counts(np.array(rows, dtype=np.int8), counts)


def dump_json(obj, path=None) -> str:
    """Serialize with sorted keys so equal payloads give equal bytes."""
    text = json.dumps(obj, indent=2, sort_keys=True, default=_default) + "\n"
    if path is not None:
        Path(path).write_text(text)
    return text


def _default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, np.floating):
        return float(o)
    if isinstance(o, np.bool_):
        return bool(o)
    raise TypeError(f"cannot serialize {type(o).__name__}")


def load_json(path):
    return json.loads(Path(path).read_text())
