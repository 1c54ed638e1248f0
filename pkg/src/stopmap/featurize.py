"""Stop detection and stacked 2D histograms from position time series.

A stop is a maximal run of samples whose forward-difference speed stays
at or below v_max (5 cm/s by default) for at least min_duration (1 s),
with no tracking gap longer than max_gap inside the run.  Stops are then
counted on an NxN grid over the cage per time interval, giving the
[T, N, N] feature tensor consumed by the CNN.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DataError

log = logging.getLogger(__name__)


@dataclass
class FeaturizeConfig:
    cage_w: float = 50.0
    cage_h: float = 50.0
    grid_n: int = 30
    intervals_t: int = 72
    interval_len: float = 3600.0
    v_max: float = 5.0
    min_duration: float = 1.0
    fps: float = 30.0
    max_gap: float = 0.5

    def __post_init__(self):
        for name in ("cage_w", "cage_h", "interval_len", "v_max",
                     "min_duration", "fps", "max_gap"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        if self.grid_n < 1 or self.intervals_t < 1:
            raise ConfigError("grid_n and intervals_t must be >= 1")


@dataclass
class StopEvent:
    t_start: float
    t_end: float
    x: float
    y: float

    @property
    def duration(self) -> float:
        return self.t_end - self.t_start


@dataclass
class HistogramStack:
    t_bins: int
    n: int
    counts: np.ndarray  # [T, N, N], integer-valued floats
    discarded: int = 0  # events beyond the T-interval horizon

    @property
    def total(self) -> float:
        return float(self.counts.sum())


def _as_samples(samples) -> np.ndarray:
    arr = np.asarray(samples, dtype=float)
    if arr.ndim != 2 or arr.shape[1] != 3:
        raise DataError(f"samples must be (n, 3) rows of t,x,y; got {arr.shape}")
    return arr


def compute_velocity(samples) -> np.ndarray:
    """Forward-difference speeds: rows (t_i, v_i), length n-1."""
    arr = _as_samples(samples)
    if arr.shape[0] < 2:
        raise DataError("need at least 2 samples to compute velocity")
    dt = np.diff(arr[:, 0])
    if np.any(dt == 0):
        raise DataError("duplicate timestamps in trajectory")
    if np.any(dt < 0):
        raise DataError("timestamps must be strictly increasing")
    dist = np.hypot(np.diff(arr[:, 1]), np.diff(arr[:, 2]))
    return np.column_stack([arr[:-1, 0], dist / dt])


def detect_stops(samples, config: FeaturizeConfig) -> list[StopEvent]:
    """Maximal qualifying low-velocity runs as StopEvents, sorted by start."""
    arr = _as_samples(samples)
    tv = compute_velocity(arr)
    v = tv[:, 1]
    dt = np.diff(arr[:, 0])
    ok = (v <= config.v_max) & (dt <= config.max_gap)

    stops = []
    edges = np.flatnonzero(np.diff(np.concatenate([[0], ok.view(np.int8), [0]])))
    for start, stop in zip(edges[::2], edges[1::2]):
        # velocity indices start..stop-1 cover samples start..stop
        t0 = arr[start, 0]
        t1 = arr[stop, 0]
        if t1 - t0 >= config.min_duration:
            seg = arr[start : stop + 1]
            stops.append(
                StopEvent(t_start=t0, t_end=t1,
                          x=float(seg[:, 1].mean()), y=float(seg[:, 2].mean()))
            )
    return stops


def build_histogram_stack(stops, config: FeaturizeConfig) -> HistogramStack:
    """Count stop events per grid tile per time interval."""
    t_bins, n = config.intervals_t, config.grid_n
    counts = np.zeros((t_bins, n, n))
    tile_w = config.cage_w / n
    tile_h = config.cage_h / n
    discarded = 0
    for s in stops:
        if s.x < 0 or s.y < 0:
            raise DataError(f"negative stop coordinate ({s.x}, {s.y})")
        bin_t = int(s.t_start // config.interval_len)
        if bin_t >= t_bins:
            discarded += 1
            continue
        bx = min(int(s.x // tile_w), n - 1)
        by = min(int(s.y // tile_h), n - 1)
        counts[bin_t, by, bx] += 1
    if discarded:
        log.warning("%d stop events beyond the %d-interval horizon discarded",
                    discarded, t_bins)
    return HistogramStack(t_bins=t_bins, n=n, counts=counts, discarded=discarded)


def normalize_stack(stack, mode: str) -> np.ndarray:
    """Scale the stack for the CNN: none, total (sum to 1) or max."""
    arr = stack.counts if isinstance(stack, HistogramStack) else np.asarray(stack)
    arr = arr.astype(float)
    if mode == "none":
        return arr.copy()
    if mode == "total":
        s = arr.sum()
        return arr / s if s > 0 else arr.copy()
    if mode == "max":
        m = arr.max() if arr.size else 0.0
        return arr / m if m > 0 else arr.copy()
    raise ConfigError(f"unknown normalization mode {mode!r}")
