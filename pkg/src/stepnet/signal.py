"""Resampling to 15 Hz and cutting 7-sample labeled windows."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .ingest import Foot, Recording, RecordingError

TARGET_HZ = 15.0
# 0.4666... s at 15 Hz
WINDOW_LEN = 7
N_CHANNELS = 6
assert round(7 / 15 * TARGET_HZ) == WINDOW_LEN


def resample(rec: Recording, target_hz: float = TARGET_HZ) -> Recording:
    """Linearly interpolate every channel onto a uniform ``target_hz`` grid.

    The grid starts at the first sample and is ``t0 + k / target_hz`` for
    every ``k`` that stays within the last sample time. Step events are
    carried over unchanged.
    """
    if not target_hz > 0:
        raise ValueError("target_hz must be positive")
    if len(rec) < 2:
        raise RecordingError("resampling needs at least 2 samples")
    t0, t1 = rec.t[0], rec.t[-1]
    n = int(np.floor((t1 - t0) * target_hz + 1e-9)) + 1
    t_new = t0 + np.arange(n) / target_hz
    # guard the float edge where t0 + k/hz lands a hair past t1
    t_new = np.minimum(t_new, t1)
    x_new = np.column_stack([np.interp(t_new, rec.t, rec.x[:, j]) for j in range(rec.x.shape[1])])
    return Recording(
        subject_id=rec.subject_id,
        device=rec.device,
        t=t_new,
        x=x_new,
        events=rec.events,
        native_rate_hz=target_hz,
    )


def label_window(events, t_center: float) -> Foot:
    """Stance foot at ``t_center``: the foot of the latest event at or before it.

    Before the first event the first event's foot is used.
    """
    if not events:
        raise ValueError("cannot label a window without step events")
    times = np.fromiter((e.t for e in events), dtype=np.float64, count=len(events))
    i = int(np.searchsorted(times, t_center, side="right")) - 1
    return events[max(i, 0)].foot


def label_windows(events, t_centers: np.ndarray) -> np.ndarray:
    """Vectorized :func:`label_window`; returns class indices (0=Left, 1=Right)."""
    if not events:
        raise ValueError("cannot label windows without step events")
    times = np.array([e.t for e in events])
    feet = np.array([e.foot.index for e in events])
    idx = np.searchsorted(times, t_centers, side="right") - 1
    return feet[np.maximum(idx, 0)]


@dataclass(frozen=True, eq=False)
class Window:
    x: np.ndarray
    label: Foot
    t_center: float

    def __post_init__(self):
        x = np.asarray(self.x, dtype=np.float64)
        if x.shape != (WINDOW_LEN, N_CHANNELS):
            raise ValueError(f"window must be {WINDOW_LEN}x{N_CHANNELS}, got {x.shape}")
        if not np.all(np.isfinite(x)):
            raise ValueError("window contains non-finite values")
        object.__setattr__(self, "x", x)


@dataclass(frozen=True, eq=False)
class WindowSet:
    """All windows of one subject, in time order.

    ``X`` is ``(n, 7, 6)``, ``labels`` holds class indices (0=Left,
    1=Right). ``t_start`` is each window's first sample time; a window spans
    ``[t_start, t_start + 7 / rate_hz)``. ``event_times`` keeps the
    annotated strikes so sub-ranges can recount their ground truth.
    """

    subject_id: str
    X: np.ndarray
    labels: np.ndarray
    t_center: np.ndarray
    t_start: np.ndarray
    event_times: np.ndarray = field(repr=False)
    rate_hz: float = TARGET_HZ
    ground_truth_steps: int = field(init=False)

    def __post_init__(self):
        if self.X.ndim != 3 or self.X.shape[1:] != (WINDOW_LEN, N_CHANNELS):
            raise ValueError(f"windows must be (n, {WINDOW_LEN}, {N_CHANNELS}), got {self.X.shape}")
        n = len(self.X)
        if not (len(self.labels) == len(self.t_center) == len(self.t_start) == n):
            raise ValueError("window arrays have inconsistent lengths")
        if n:
            lo, hi = self.span
            gt = int(np.count_nonzero((self.event_times >= lo) & (self.event_times < hi)))
        else:
            gt = 0
        object.__setattr__(self, "ground_truth_steps", gt)

    def __len__(self):
        return len(self.X)

    @property
    def span(self) -> tuple[float, float]:
        return float(self.t_start[0]), float(self.t_start[-1] + WINDOW_LEN / self.rate_hz)

    @property
    def duration(self) -> float:
        lo, hi = self.span
        return hi - lo

    @property
    def windows(self) -> list[Window]:
        return [
            Window(x, Foot.from_index(lbl), float(tc))
            for x, lbl, tc in zip(self.X, self.labels, self.t_center)
        ]

    def subset(self, sl: slice) -> "WindowSet":
        """Contiguous sub-range of windows with its own ground-truth count."""
        return WindowSet(
            subject_id=self.subject_id,
            X=self.X[sl],
            labels=self.labels[sl],
            t_center=self.t_center[sl],
            t_start=self.t_start[sl],
            event_times=self.event_times,
            rate_hz=self.rate_hz,
        )

    def with_labels(self, labels) -> "WindowSet":
        return WindowSet(
            subject_id=self.subject_id,
            X=self.X,
            labels=np.asarray(labels, dtype=np.int64),
            t_center=self.t_center,
            t_start=self.t_start,
            event_times=self.event_times,
            rate_hz=self.rate_hz,
        )


def make_windows(rec15: Recording) -> WindowSet:
    """Cut a 15 Hz recording into consecutive non-overlapping 7-sample windows.

    A trailing remainder shorter than a window is dropped. Labels follow
    :func:`label_window` evaluated at each window's middle sample; an
    unannotated recording gets label -1 everywhere.
    """
    n = len(rec15)
    if n < WINDOW_LEN:
        raise RecordingError(f"need at least {WINDOW_LEN} samples to window, got {n}")
    dt = np.diff(rec15.t)
    period = 1.0 / TARGET_HZ
    if abs(rec15.native_rate_hz - TARGET_HZ) > 1e-6 or np.any(np.abs(dt - period) > 1e-6):
        raise RecordingError("make_windows expects a recording resampled to 15 Hz")
    k = n // WINDOW_LEN
    X = rec15.x[: k * WINDOW_LEN].reshape(k, WINDOW_LEN, N_CHANNELS).copy()
    starts = rec15.t[0 : k * WINDOW_LEN : WINDOW_LEN].copy()
    centers = rec15.t[WINDOW_LEN // 2 : k * WINDOW_LEN : WINDOW_LEN].copy()
    labels = label_windows(rec15.events, centers) if rec15.events else np.full(k, -1, dtype=np.int64)
    return WindowSet(
        subject_id=rec15.subject_id,
        X=X,
        labels=labels,
        t_center=centers,
        t_start=starts,
        event_times=np.array([e.t for e in rec15.events], dtype=np.float64),
        rate_hz=TARGET_HZ,
    )


def prepare(rec: Recording) -> WindowSet:
    """Resample to 15 Hz and window in one go."""
    return make_windows(resample(rec, TARGET_HZ))
