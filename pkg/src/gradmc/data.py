"""Datasets, minibatch sampling, seeded random streams, and CSV interchange.

A Dataset is a named collection of float64 arrays sharing their first axis
(one row per observation).  Minibatches are uniform index subsets drawn
without replacement, fresh on every call.  All randomness flows through
:class:`Rng`, a thin wrapper over numpy's PCG64 whose streams are fully
determined by (seed, call sequence) and can be spawned into statistically
independent children for parallel chains.
"""

from __future__ import annotations

import csv
import math
import re
from dataclasses import dataclass
from types import MappingProxyType
from typing import Mapping

import numpy as np

from .errors import CsvFormatError, DomainError, ShapeError

__all__ = [
    "Dataset",
    "Minibatch",
    "Rng",
    "resolve_minibatch_size",
    "sample_minibatch",
    "standard_normal",
    "load_csv_columns",
    "save_csv_columns",
]


class Rng:
    """Deterministic random stream backed by the 64-bit PCG64 generator.

    Identical (seed, consumption sequence) gives identical outputs on every
    platform for a fixed numpy version; ``draw_count`` records how many draw
    calls the stream has served.  A stream is single-owner: never share one
    across threads, spawn children instead.
    """

    ALGORITHM = "pcg64"

    def __init__(self, seed: int, _sequence: np.random.SeedSequence | None = None):
        self.seed = int(seed)
        self._sequence = (
            np.random.SeedSequence(self.seed) if _sequence is None else _sequence
        )
        self._generator = np.random.Generator(np.random.PCG64(self._sequence))
        self.draw_count = 0

    def spawn(self, n: int) -> list["Rng"]:
        """Derive n independent child streams (safe for parallel chains)."""
        return [Rng(self.seed, _sequence=seq) for seq in self._sequence.spawn(n)]

    def standard_normal(self, shape=()) -> np.ndarray:
        self.draw_count += 1
        return self._generator.standard_normal(shape)

    def uniform(self, shape=()) -> np.ndarray:
        self.draw_count += 1
        return self._generator.random(shape)

    def indices_without_replacement(self, n_total: int, n: int) -> np.ndarray:
        self.draw_count += 1
        return self._generator.choice(n_total, size=n, replace=False)


class Dataset:
    """Named tensors split along the first axis; immutable once constructed."""

    def __init__(self, entries: Mapping[str, "np.typing.ArrayLike"]):
        if not entries:
            raise DomainError("a dataset needs at least one entry")
        stored = {}
        n = None
        for name, value in entries.items():
            arr = np.array(value, dtype=np.float64)
            if arr.ndim == 0:
                raise ShapeError(f"entry {name!r} must have an observation axis")
            if n is None:
                n = arr.shape[0]
            elif arr.shape[0] != n:
                raise ShapeError(
                    f"entry {name!r} has {arr.shape[0]} rows, expected {n}"
                )
            arr.flags.writeable = False
            stored[name] = arr
        if n < 1:
            raise DomainError("a dataset needs at least one observation")
        self._entries = stored
        self._n = n

    @property
    def n(self) -> int:
        return self._n

    @property
    def entries(self) -> Mapping[str, np.ndarray]:
        return MappingProxyType(self._entries)

    def __contains__(self, name):
        return name in self._entries

    def __getitem__(self, name) -> np.ndarray:
        return self._entries[name]


@dataclass(frozen=True)
class Minibatch:
    """Distinct observation indices plus the selected rows of every entry."""

    indices: np.ndarray
    views: dict

    @property
    def size(self) -> int:
        return int(self.indices.size)


def resolve_minibatch_size(spec: float, n_total: int) -> int:
    """Turn a size spec into a count: below 1 it is a proportion of the data.

    A spec of exactly 1.0 counts as an absolute size of one observation.
    """
    spec = float(spec)
    if spec <= 0.0:
        raise DomainError(f"minibatch size spec must be positive, got {spec}")
    if spec < 1.0:
        return max(1, math.floor(spec * n_total))
    return min(int(round(spec)), n_total)


def sample_minibatch(dataset: Dataset, n: int, rng: Rng) -> Minibatch:
    """Draw n distinct observation indices uniformly and slice every entry."""
    if not 1 <= n <= dataset.n:
        raise DomainError(f"minibatch size {n} outside [1, {dataset.n}]")
    indices = rng.indices_without_replacement(dataset.n, n)
    views = {name: arr[indices] for name, arr in dataset.entries.items()}
    return Minibatch(indices=indices, views=views)


def standard_normal(rng: Rng, shape) -> np.ndarray:
    """I.i.d. standard normal tensor of the given shape."""
    return rng.standard_normal(tuple(shape))


# ---------------------------------------------------------------------------
# CSV interchange.  Header names the columns; columns named "name.1..name.k"
# group (in suffix order) into a matrix entry, a bare column stays a vector.
# Values are written with 17 significant digits so files round-trip exactly.
# ---------------------------------------------------------------------------

_GROUPED = re.compile(r"^(.+)\.(\d+)$")


def save_csv_columns(path, arrays: Mapping[str, np.ndarray]) -> None:
    """Write named vectors/matrices as one CSV with the grouping convention."""
    header = []
    columns = []
    n_rows = None
    for name in arrays:
        arr = np.asarray(arrays[name], dtype=np.float64)
        if arr.ndim == 1:
            header.append(name)
            columns.append(arr)
        elif arr.ndim == 2:
            for j in range(arr.shape[1]):
                header.append(f"{name}.{j + 1}")
                columns.append(arr[:, j])
        else:
            raise ShapeError(f"cannot write rank-{arr.ndim} entry {name!r} to CSV")
        if n_rows is None:
            n_rows = arr.shape[0]
        elif arr.shape[0] != n_rows:
            raise ShapeError(f"entry {name!r} row count differs")
    with open(path, "w", newline="") as handle:
        handle.write(",".join(header) + "\n")
        for i in range(n_rows or 0):
            handle.write(",".join(f"{col[i]:.17g}" for col in columns) + "\n")


def load_csv_columns(path) -> dict[str, np.ndarray]:
    """Read a CSV back into named float64 arrays.

    Malformed rows (wrong field count, unparseable numbers) are hard errors
    carrying the path and 1-based line number.
    """
    with open(path, newline="") as handle:
        reader = csv.reader(row for row in handle if not row.startswith("#"))
        try:
            header = next(reader)
        except StopIteration:
            raise CsvFormatError(f"{path}:1: empty file") from None
        header = [h.strip() for h in header]
        if any(not h for h in header):
            raise CsvFormatError(f"{path}:1: blank column name in header")
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise CsvFormatError(
                    f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}"
                )
            try:
                rows.append([float(field) for field in row])
            except ValueError as exc:
                raise CsvFormatError(f"{path}:{lineno}: {exc}") from None
    table = np.asarray(rows, dtype=np.float64).reshape(len(rows), len(header))

    groups: dict[str, dict[int, int]] = {}
    order: list[str] = []
    for col, name in enumerate(header):
        match = _GROUPED.match(name)
        if match:
            base, suffix = match.group(1), int(match.group(2))
            if base not in groups:
                order.append(base)
                groups[base] = {}
            if suffix in groups[base] or 0 in groups[base]:
                raise CsvFormatError(
                    f"{path}:1: column {name!r} clashes with another {base!r} column"
                )
            groups[base][suffix] = col
        else:
            if name in groups:
                raise CsvFormatError(f"{path}:1: duplicate column {name!r}")
            order.append(name)
            groups[name] = {0: col}

    result = {}
    for base in order:
        cols = groups[base]
        if 0 in cols:
            result[base] = table[:, cols[0]]
        else:
            suffixes = sorted(cols)
            if suffixes != list(range(1, len(suffixes) + 1)):
                raise CsvFormatError(
                    f"{path}:1: group {base!r} has gaps in its column suffixes"
                )
            result[base] = table[:, [cols[s] for s in suffixes]]
    return result
