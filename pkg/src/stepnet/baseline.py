"""Piecewise aggregate approximation + peak merge step counter.

A non-learned reference: accel magnitude, PAA smoothing, peaks above the
global mean plus a threshold, and merging of peaks that sit too close
together.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .ingest import Recording, RecordingError


@dataclass(frozen=True)
class PaaConfig:
    frame: int = 3
    peak_threshold: float = 0.05
    merge_window_s: float = 0.25

    def __post_init__(self):
        if self.frame < 1:
            raise ValueError("frame must be >= 1")
        if self.merge_window_s < 0:
            raise ValueError("merge_window_s must be >= 0")


def paa(series, frame: int) -> np.ndarray:
    """Segment means over consecutive blocks of ``frame`` samples.

    A trailing partial block is averaged over its actual length, so the
    output has ``ceil(n / frame)`` entries.
    """
    x = np.asarray(series, dtype=np.float64)
    if x.size == 0:
        raise ValueError("empty series")
    if frame < 1:
        raise ValueError("frame must be >= 1")
    n = len(x)
    starts = np.arange(0, n, frame)
    sums = np.add.reduceat(x, starts)
    lens = np.minimum(starts + frame, n) - starts
    return sums / lens


def local_maxima(y: np.ndarray, threshold: float) -> np.ndarray:
    """Indices of strict local maxima with value above ``threshold``."""
    if len(y) < 3:
        return np.array([], dtype=np.int64)
    mid = y[1:-1]
    idx = np.flatnonzero((mid > y[:-2]) & (mid > y[2:]) & (mid > threshold)) + 1
    return idx


def merge_peaks(times: np.ndarray, heights: np.ndarray, window_s: float) -> np.ndarray:
    """Greedy merge: repeatedly keep the tallest peak, drop others within ``window_s`` of it.

    Returns a boolean keep-mask. A peak exactly ``window_s`` away survives.
    Equal heights favour the earlier peak.
    """
    times = np.asarray(times, dtype=np.float64)
    heights = np.asarray(heights, dtype=np.float64)
    keep = np.zeros(len(times), dtype=bool)
    alive = np.ones(len(times), dtype=bool)
    for i in np.lexsort((times, -heights)):
        if not alive[i]:
            continue
        keep[i] = True
        alive &= ~(np.abs(times - times[i]) < window_s)
    return keep


def baseline_count(rec15: Recording, cfg: PaaConfig = PaaConfig()) -> int:
    """Step count of a 15 Hz recording by magnitude PAA peaks and merging."""
    if len(rec15) < 2 or abs(rec15.native_rate_hz - 15.0) > 1e-6:
        raise RecordingError("baseline_count expects a recording resampled to 15 Hz")
    mag = np.sqrt(np.sum(rec15.x[:, :3] ** 2, axis=1))
    y = paa(mag, cfg.frame)
    # frame centre times
    starts = np.arange(0, len(mag), cfg.frame)
    ends = np.minimum(starts + cfg.frame, len(mag)) - 1
    t = 0.5 * (rec15.t[starts] + rec15.t[ends])
    peaks = local_maxima(y, y.mean() + cfg.peak_threshold)
    keep = merge_peaks(t[peaks], y[peaks], cfg.merge_window_s)
    return int(np.count_nonzero(keep))
