"""Tabular process-condition data: schema, CSV I/O, normalization, splits."""

from __future__ import annotations

import csv
import json
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .exceptions import (
    BadFraction,
    ConstantFeature,
    EmptyFile,
    MalformedHeader,
    NonNumericCell,
    TooFewRows,
    ValidationError,
)

FEATURES = ("velocity_ms", "particle_temp_K", "friction")
TARGETS = (
    "max_peeq",
    "avg_peeq_contact",
    "max_temp_K",
    "max_von_mises_MPa",
    "deformation_ratio",
)
HEADER = FEATURES + TARGETS

# Parameter envelope of the reference simulation campaign.
RANGES = {
    "velocity_ms": (400.0, 900.0),
    "particle_temp_K": (300.0, 600.0),
    "friction": (0.10, 0.50),
}


class OutOfRangeWarning(UserWarning):
    """Input lies outside the sampled parameter envelope."""


@dataclass(frozen=True)
class SampleRecord:
    """One process condition and whichever targets were measured for it."""

    velocity: float
    particle_temp: float
    friction: float
    targets: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self):
        for name, value in zip(FEATURES, self.features):
            if not math.isfinite(value):
                raise ValidationError(f"{name} must be finite, got {value}")
        if self.friction < 0:
            raise ValidationError(f"friction must be >= 0, got {self.friction}")
        if self.particle_temp <= 0:
            raise ValidationError(f"particle_temp must be > 0 K, got {self.particle_temp}")
        for name, value in self.targets.items():
            if name not in TARGETS:
                raise ValidationError(f"unknown target {name!r}")
            if not math.isfinite(value):
                raise ValidationError(f"target {name} must be finite, got {value}")
        if self.targets.get("max_temp_K", 1.0) <= 0:
            raise ValidationError("max_temp_K must be > 0")
        if self.targets.get("deformation_ratio", 0.0) < 0:
            raise ValidationError("deformation_ratio must be >= 0")
        object.__setattr__(self, "targets", dict(self.targets))

    @property
    def features(self) -> tuple[float, float, float]:
        return (self.velocity, self.particle_temp, self.friction)

    def range_flags(self) -> list[str]:
        """Names of inputs outside the reference envelope."""
        return [
            name
            for name, value in zip(FEATURES, self.features)
            if not RANGES[name][0] <= value <= RANGES[name][1]
        ]


def records_to_arrays(records: Sequence[SampleRecord]) -> tuple[np.ndarray, dict[str, np.ndarray]]:
    """Return the N x 3 raw feature matrix and per-target columns (NaN = missing)."""
    X = np.array([r.features for r in records], dtype=np.float64).reshape(-1, 3)
    Y = {
        t: np.array([r.targets.get(t, np.nan) for r in records], dtype=np.float64)
        for t in TARGETS
    }
    return X, Y


def format_number(value: float) -> str:
    """Canonical number format: shortest repr that round-trips exactly."""
    return repr(float(value))


def load_csv(path) -> list[SampleRecord]:
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise EmptyFile(f"{path}: file is empty") from None
        if tuple(h.strip() for h in header) != HEADER:
            raise MalformedHeader(
                f"{path}: expected header {','.join(HEADER)!r}, got {','.join(header)!r}"
            )
        records = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(HEADER):
                raise MalformedHeader(f"{path}: row {lineno} has {len(row)} cells, expected {len(HEADER)}")
            values = {}
            for name, cell in zip(HEADER, row):
                cell = cell.strip()
                if cell == "":
                    if name in FEATURES:
                        raise NonNumericCell(lineno, name, cell)
                    continue
                try:
                    values[name] = float(cell)
                except ValueError:
                    raise NonNumericCell(lineno, name, cell) from None
            rec = SampleRecord(
                values["velocity_ms"],
                values["particle_temp_K"],
                values["friction"],
                {t: values[t] for t in TARGETS if t in values},
            )
            flags = rec.range_flags()
            if flags:
                warnings.warn(f"row {lineno}: {', '.join(flags)} outside reference range", OutOfRangeWarning)
            records.append(rec)
    if not records:
        raise EmptyFile(f"{path}: no data rows")
    return records


def write_csv(records: Sequence[SampleRecord], path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(HEADER)
        for r in records:
            row = [format_number(v) for v in r.features]
            row += [format_number(r.targets[t]) if t in r.targets else "" for t in TARGETS]
            writer.writerow(row)


@dataclass(frozen=True)
class NormStats:
    """Per-column z-score statistics (population std)."""

    mean: np.ndarray
    std: np.ndarray
    names: tuple[str, ...] = FEATURES

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=np.float64).reshape(-1)
        std = np.asarray(self.std, dtype=np.float64).reshape(-1)
        if mean.shape != std.shape or len(self.names) != mean.size:
            raise ValidationError("NormStats fields must have equal length")
        for name, s in zip(self.names, std):
            if not s > 0:
                raise ConstantFeature(name)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "std", std)
        object.__setattr__(self, "names", tuple(self.names))

    def apply(self, A: np.ndarray) -> np.ndarray:
        return (np.asarray(A, dtype=np.float64) - self.mean) / self.std

    def invert(self, Z: np.ndarray) -> np.ndarray:
        return np.asarray(Z, dtype=np.float64) * self.std + self.mean

    def to_dict(self) -> dict:
        return {
            "names": list(self.names),
            "mean": [float(m) for m in self.mean],
            "std": [float(s) for s in self.std],
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "NormStats":
        return cls(np.array(d["mean"], dtype=np.float64), np.array(d["std"], dtype=np.float64), tuple(d["names"]))


def _as_matrix(data) -> np.ndarray:
    if isinstance(data, np.ndarray):
        return np.asarray(data, dtype=np.float64)
    data = list(data)
    if data and isinstance(data[0], SampleRecord):
        return records_to_arrays(data)[0]
    return np.asarray(data, dtype=np.float64)


def fit_columns(A, mask=None, names: Sequence[str] | None = None) -> NormStats:
    """Z-score statistics of the columns of ``A`` over the rows selected by ``mask``."""
    A = _as_matrix(A)
    if A.ndim == 1:
        A = A[:, None]
    rows = A if mask is None else A[np.asarray(mask, dtype=bool)]
    if names is None:
        names = tuple(f"col{j}" for j in range(A.shape[1]))
    if rows.shape[0] < 2:
        raise TooFewRows(f"need at least 2 fitting rows, got {rows.shape[0]}")
    mean = rows.mean(axis=0)
    std = np.sqrt(((rows - mean) ** 2).mean(axis=0))
    for name, s, col in zip(names, std, rows.T):
        # Catch columns whose spread is pure rounding noise.
        if s == 0 or np.all(col == col[0]):
            raise ConstantFeature(name)
    return NormStats(mean, std, tuple(names))


def zscore_fit(records, train_mask) -> NormStats:
    return fit_columns(records, train_mask, FEATURES)


def zscore_apply(records, stats: NormStats) -> np.ndarray:
    return stats.apply(_as_matrix(records))


@dataclass(frozen=True)
class SplitMasks:
    train_mask: np.ndarray
    test_mask: np.ndarray

    def __post_init__(self):
        tr = np.asarray(self.train_mask, dtype=bool)
        te = np.asarray(self.test_mask, dtype=bool)
        if tr.shape != te.shape or tr.ndim != 1:
            raise ValidationError("train and test masks must be 1-D and the same length")
        if np.any(tr & te):
            raise ValidationError("train and test masks overlap")
        if not np.all(tr | te):
            raise ValidationError("train and test masks must cover every row")
        if not tr.any() or not te.any():
            raise ValidationError("train and test masks must both be non-empty")
        object.__setattr__(self, "train_mask", tr)
        object.__setattr__(self, "test_mask", te)

    @property
    def n(self) -> int:
        return self.train_mask.size

    def to_dict(self) -> dict:
        return {"n": self.n, "test_indices": np.flatnonzero(self.test_mask).tolist()}

    @classmethod
    def from_dict(cls, d: Mapping) -> "SplitMasks":
        test = np.zeros(int(d["n"]), dtype=bool)
        test[np.asarray(d["test_indices"], dtype=int)] = True
        return cls(~test, test)


def split_masks(n: int, test_fraction: float = 0.2, seed: int = 7) -> SplitMasks:
    if n < 5:
        raise TooFewRows(f"need at least 5 rows to split, got {n}")
    if not 0.0 < test_fraction < 1.0:
        raise BadFraction(f"test_fraction must lie in (0, 1), got {test_fraction}")
    n_test = int(math.floor(n * test_fraction + 0.5))
    if not 1 <= n_test <= n - 2:
        raise BadFraction(f"test_fraction {test_fraction} gives {n_test} test rows out of {n}")
    rng = np.random.default_rng(seed)
    test = np.zeros(n, dtype=bool)
    test[rng.permutation(n)[:n_test]] = True
    return SplitMasks(~test, test)


def save_json(obj, path) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")
