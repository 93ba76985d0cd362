"""Household half-hourly load/PV data: CSV ingestion, synthesis, splitting, episodes.

CSV layout (UTF-8, header mandatory)::

    day,slot,household_id,load_kw,gen_kw

Every household must cover exactly the same (day, slot) grid, with 48 slots
per day.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .tariff import SLOTS_PER_DAY

CSV_HEADER = ("day", "slot", "household_id", "load_kw", "gen_kw")


class DatasetError(ValueError):
    pass


@dataclass(frozen=True)
class HouseholdTimeseries:
    household_id: str
    load: np.ndarray
    generation: np.ndarray
    resolution_minutes: int = 30

    def __post_init__(self):
        if self.load.shape != self.generation.shape:
            raise DatasetError(f"household {self.household_id}: load/generation lengths differ")


@dataclass(frozen=True)
class Dataset:
    """Load and generation arrays of shape (days, 48, households)."""

    household_ids: tuple[str, ...]
    load: np.ndarray
    generation: np.ndarray
    day_labels: tuple[int, ...] = ()

    def __post_init__(self):
        if self.load.shape != self.generation.shape or self.load.ndim != 3:
            raise DatasetError("load/generation must share shape (days, 48, households)")
        if self.load.shape[1] != SLOTS_PER_DAY:
            raise DatasetError(f"expected {SLOTS_PER_DAY} slots per day, got {self.load.shape[1]}")
        if len(self.household_ids) != self.load.shape[2]:
            raise DatasetError("household id count does not match data")
        if not self.day_labels:
            object.__setattr__(self, "day_labels", tuple(range(self.load.shape[0])))

    @property
    def n_days(self) -> int:
        return self.load.shape[0]

    @property
    def n_households(self) -> int:
        return self.load.shape[2]

    @property
    def series(self) -> list[HouseholdTimeseries]:
        return [HouseholdTimeseries(hid, self.load[:, :, i].ravel(), self.generation[:, :, i].ravel())
                for i, hid in enumerate(self.household_ids)]

    def subset(self, households: int) -> "Dataset":
        if households > self.n_households:
            raise DatasetError(f"dataset has {self.n_households} households, {households} requested")
        return Dataset(self.household_ids[:households], self.load[:, :, :households],
                       self.generation[:, :, :households], self.day_labels)


@dataclass(frozen=True)
class EpisodeBatch:
    day_index: int
    load: np.ndarray  # (48, H)
    generation: np.ndarray  # (48, H)

    def __post_init__(self):
        if self.load.shape != self.generation.shape or self.load.shape[0] != SLOTS_PER_DAY:
            raise DatasetError(f"episode must have {SLOTS_PER_DAY} timesteps")

    @property
    def household_count(self) -> int:
        return self.load.shape[1]


def load_dataset(path, household_count: int | None = None) -> Dataset:
    """Read and validate a dataset CSV.

    Households are kept in order of first appearance; ``household_count``
    truncates to the first n of them.

    Raises:
        DatasetError: on a missing header, malformed or negative row (the
            message names the line), or incomplete household coverage.
    """
    path = Path(path)
    records: dict[str, dict[tuple[int, int], tuple[float, float]]] = {}
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise DatasetError(f"{path}: no data rows")
        if tuple(h.strip() for h in header) != CSV_HEADER:
            raise DatasetError(f"{path}: header must be {','.join(CSV_HEADER)}, got {','.join(header)}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(CSV_HEADER):
                raise DatasetError(f"{path}:{lineno}: expected {len(CSV_HEADER)} fields, got {len(row)}")
            try:
                day, slot = int(row[0]), int(row[1])
                load, gen = float(row[3]), float(row[4])
            except ValueError as exc:
                raise DatasetError(f"{path}:{lineno}: malformed value ({exc})") from None
            hid = row[2].strip()
            if not 0 <= slot < SLOTS_PER_DAY:
                raise DatasetError(f"{path}:{lineno}: slot {slot} outside 0..{SLOTS_PER_DAY - 1}")
            if not (math.isfinite(load) and math.isfinite(gen)):
                raise DatasetError(f"{path}:{lineno}: non-finite value")
            if load < 0 or gen < 0:
                raise DatasetError(f"{path}:{lineno}: negative value (load {load}, gen {gen})")
            rows = records.setdefault(hid, {})
            if (day, slot) in rows:
                raise DatasetError(f"{path}:{lineno}: duplicate entry for household {hid} day {day} slot {slot}")
            rows[(day, slot)] = (load, gen)
    if not records:
        raise DatasetError(f"{path}: no data rows")

    ids = list(records)
    if household_count is not None:
        if household_count > len(ids):
            raise DatasetError(f"{path}: {len(ids)} households present, {household_count} requested")
        ids = ids[:household_count]
    keys = sorted(records[ids[0]])
    days = sorted({d for d, _ in keys})
    expected = {(d, s) for d in days for s in range(SLOTS_PER_DAY)}
    for hid in ids:
        have = set(records[hid])
        if have != expected:
            missing = sorted(expected - have)[:3]
            raise DatasetError(
                f"{path}: household {hid} length mismatch ({len(have)} rows, expected {len(expected)};"
                f" e.g. missing {missing})"
            )
    load = np.empty((len(days), SLOTS_PER_DAY, len(ids)))
    gen = np.empty_like(load)
    day_pos = {d: i for i, d in enumerate(days)}
    for j, hid in enumerate(ids):
        for (d, s), (l, g) in records[hid].items():
            load[day_pos[d], s, j] = l
            gen[day_pos[d], s, j] = g
    return Dataset(tuple(ids), load, gen, tuple(days))


def write_dataset(dataset: Dataset, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for d, day in enumerate(dataset.day_labels):
            for s in range(SLOTS_PER_DAY):
                for j, hid in enumerate(dataset.household_ids):
                    w.writerow([day, s, hid, f"{dataset.load[d, s, j]:.6f}", f"{dataset.generation[d, s, j]:.6f}"])


def synthesize(households: int, days: int, seed: int = 0) -> Dataset:
    """Synthetic solar/load days for tests and desk-scale experiments.

    PV follows a clear-sky bell between 06:00 and 20:00 scaled by a daily
    clearness draw and per-slot cloud noise; it is exactly zero outside that
    window. Load is a base level plus morning and evening peaks. Values are
    rounded to 6 decimals so a CSV round trip is exact.
    """
    if households < 1 or days < 1:
        raise ValueError("need at least one household and one day")
    rng = np.random.default_rng(seed)
    hours = np.arange(SLOTS_PER_DAY) / 2.0 + 0.25
    sun = np.clip(np.sin(np.pi * (hours - 6.0) / 14.0), 0.0, None) ** 1.5
    sun[(hours <= 6.0) | (hours >= 20.0)] = 0.0

    capacity = rng.uniform(3.0, 5.0, size=households)
    base = rng.uniform(0.25, 0.55, size=households)
    morning = rng.uniform(0.4, 0.9, size=households)
    evening = rng.uniform(0.7, 1.3, size=households)

    clearness = rng.beta(5.0, 1.6, size=(days, 1, 1))
    clouds = np.clip(1.0 - rng.gamma(0.6, 0.08, size=(days, SLOTS_PER_DAY, households)), 0.2, 1.0)
    gen = capacity * sun[None, :, None] * clearness * clouds

    bumps = (morning * np.exp(-0.5 * ((hours[:, None] - 7.5) / 1.0) ** 2)
             + evening * np.exp(-0.5 * ((hours[:, None] - 18.5) / 1.5) ** 2))
    noise = rng.lognormal(0.0, 0.2, size=(days, SLOTS_PER_DAY, households))
    load = (base + bumps)[None] * noise
    load = np.minimum(load, 2.5)

    ids = tuple(f"h{i:02d}" for i in range(households))
    return Dataset(ids, np.round(load, 6), np.round(gen, 6))


def split_train_test(n_days: int, train_fraction: float = 0.8, seed: int = 0,
                     method: str = "random") -> tuple[np.ndarray, np.ndarray]:
    """Split day indices into train/test pools at whole-day granularity.

    ``floor(train_fraction * n_days)`` days go to training. ``random``
    shuffles days with ``seed``; ``chrono`` keeps the first days for training.
    """
    if not 0 < train_fraction < 1:
        raise ValueError("train_fraction must lie strictly between 0 and 1")
    if n_days < 2:
        raise ValueError("need at least two days to split")
    n_train = int(math.floor(train_fraction * n_days + 1e-9))
    if n_train == 0 or n_train == n_days:
        raise ValueError(f"split of {n_days} days at {train_fraction} leaves an empty pool")
    if method == "chrono":
        order = np.arange(n_days)
    elif method == "random":
        order = np.random.default_rng(seed).permutation(n_days)
    else:
        raise ValueError(f"unknown split method {method!r}")
    return np.sort(order[:n_train]), np.sort(order[n_train:])


def episode(dataset: Dataset, day: int) -> EpisodeBatch:
    return EpisodeBatch(int(day), dataset.load[day].copy(), dataset.generation[day].copy())


def sample_episode(dataset: Dataset, days, rng: np.random.Generator) -> EpisodeBatch:
    """Uniformly pick one day from ``days``; the batch starts at midnight."""
    days = np.asarray(days)
    if days.size == 0:
        raise ValueError("cannot sample from an empty day pool")
    return episode(dataset, int(days[rng.integers(days.size)]))
