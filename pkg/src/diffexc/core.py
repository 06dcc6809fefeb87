"""Domain types: time grids, paths, marked arrival sequences, seeded RNG streams."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "TimeGrid",
    "Path",
    "MarkedArrivals",
    "RngSeed",
    "interarrivals_from_arrivals",
    "split_by_mark",
    "merge_by_time",
    "per_mark_interarrivals",
    "read_arrivals_csv",
    "write_arrivals_csv",
    "InvalidArrivalsError",
]


class InvalidArrivalsError(ValueError):
    """Raised when arrival data violates the monotonicity/shape contract."""


def _frozen(a):
    a = np.asarray(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid t0 + i*dt for i in 0..n_steps."""

    t0: float
    dt: float
    n_steps: int

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        if self.n_steps < 1:
            raise ValueError(f"n_steps must be >= 1, got {self.n_steps}")

    @property
    def horizon(self):
        return self.n_steps * self.dt

    @property
    def t_end(self):
        return self.t0 + self.n_steps * self.dt

    def times(self):
        return self.t0 + np.arange(self.n_steps + 1) * self.dt


@dataclass(frozen=True)
class Path:
    """A discretely sampled trajectory: values[i] is the d-dim state at grid point i."""

    grid: TimeGrid
    values: np.ndarray  # shape (n_steps + 1, d)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim == 1:
            v = v[:, None]
        if v.shape[0] != self.grid.n_steps + 1:
            raise ValueError(
                f"values length {v.shape[0]} != n_steps+1 = {self.grid.n_steps + 1}")
        if not np.all(np.isfinite(v)):
            raise ValueError("path values must be finite")
        object.__setattr__(self, "values", _frozen(v))

    @property
    def dim(self):
        return self.values.shape[1]

    @property
    def flat(self):
        """1-d view of a scalar path."""
        if self.values.shape[1] != 1:
            raise ValueError("flat view requires a 1-d path")
        return self.values[:, 0]

    def times(self):
        return self.grid.times()


@dataclass(frozen=True)
class MarkedArrivals:
    """Strictly increasing arrival times with integer marks."""

    times: np.ndarray
    marks: np.ndarray
    origin: float = 0.0

    def __post_init__(self):
        t = np.asarray(self.times, dtype=np.float64).ravel()
        m = np.asarray(self.marks, dtype=np.int64).ravel()
        if t.size != m.size:
            raise InvalidArrivalsError(
                f"times ({t.size}) and marks ({m.size}) must have equal length")
        if t.size:
            if not np.all(np.isfinite(t)):
                raise InvalidArrivalsError("arrival times must be finite")
            if np.any(np.diff(t) <= 0):
                raise InvalidArrivalsError("arrival times must be strictly increasing")
            if t[0] < self.origin:
                raise InvalidArrivalsError(
                    f"first arrival {t[0]} precedes origin {self.origin}")
        object.__setattr__(self, "times", _frozen(t))
        object.__setattr__(self, "marks", _frozen(m))

    def __len__(self):
        return self.times.size


@dataclass(frozen=True)
class RngSeed:
    """Deterministic stream identity: (seed, stream_id) fixes the random sequence.

    Streams are counter-based (Philox), so child streams derived with
    .child() are statistically independent and reproducible.
    """

    seed: int
    stream_id: int = 0
    _path: tuple = field(default=())

    def generator(self) -> np.random.Generator:
        ss = np.random.SeedSequence(entropy=self.seed,
                                    spawn_key=(self.stream_id, *self._path))
        return np.random.Generator(np.random.Philox(ss))

    def child(self, *indices: int) -> "RngSeed":
        return RngSeed(self.seed, self.stream_id, self._path + tuple(indices))


def interarrivals_from_arrivals(a: MarkedArrivals, include_first: bool = True):
    """Durations between consecutive arrivals, paired with the terminating mark.

    The gap from the origin to the first arrival is included unless
    include_first is False.
    """
    t = a.times
    if t.size == 0:
        return []
    prev = np.concatenate([[a.origin], t[:-1]])
    durs = t - prev
    if np.any(durs[1 if not include_first else 0:] <= 0):
        raise InvalidArrivalsError("non-positive interarrival duration")
    pairs = [(float(d), int(m)) for d, m in zip(durs, a.marks)]
    if not include_first:
        pairs = pairs[1:]
    return pairs


def split_by_mark(a: MarkedArrivals) -> dict:
    """Partition arrivals by mark; each output keeps the common origin."""
    out = {}
    for m in np.unique(a.marks):
        sel = a.marks == m
        out[int(m)] = MarkedArrivals(a.times[sel], a.marks[sel], a.origin)
    return out


def merge_by_time(parts) -> MarkedArrivals:
    """Inverse of split_by_mark: merge mark-sorted sequences by time."""
    parts = list(parts)
    if not parts:
        return MarkedArrivals(np.array([]), np.array([], dtype=np.int64), 0.0)
    t = np.concatenate([p.times for p in parts])
    m = np.concatenate([p.marks for p in parts])
    order = np.argsort(t, kind="stable")
    return MarkedArrivals(t[order], m[order], min(p.origin for p in parts))


def per_mark_interarrivals(a: MarkedArrivals, include_first: bool = True):
    """Interarrival durations within each mark's own arrival stream.

    For a delta-filtered diffusion each mark (sign or coordinate) forms its
    own point process; gaps are measured between consecutive same-mark
    arrivals. Returns (durations, marks) arrays pooled over marks.
    """
    durs, marks = [], []
    for m, part in sorted(split_by_mark(a).items()):
        pairs = interarrivals_from_arrivals(part, include_first=include_first)
        durs.extend(d for d, _ in pairs)
        marks.extend(m for _ in pairs)
    return np.asarray(durs, dtype=np.float64), np.asarray(marks, dtype=np.int64)


def read_arrivals_csv(path) -> dict:
    """Read `seq_id,time,mark` rows into {seq_id: MarkedArrivals} (origin 0)."""
    seqs = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        need = {"seq_id", "time", "mark"}
        if reader.fieldnames is None or not need.issubset(reader.fieldnames):
            raise InvalidArrivalsError(
                f"arrivals CSV must have header seq_id,time,mark, got {reader.fieldnames}")
        for row in reader:
            seqs.setdefault(row["seq_id"], []).append(
                (float(row["time"]), int(row["mark"])))
    out = {}
    for sid, rows in seqs.items():
        t = np.array([r[0] for r in rows])
        m = np.array([r[1] for r in rows], dtype=np.int64)
        out[sid] = MarkedArrivals(t, m, origin=0.0)
    return out


def write_arrivals_csv(path, sequences: dict):
    """Write {seq_id: MarkedArrivals} in the `seq_id,time,mark` format."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["seq_id", "time", "mark"])
        for sid in sequences:
            a = sequences[sid]
            for t, m in zip(a.times, a.marks):
                w.writerow([sid, repr(float(t)), int(m)])
