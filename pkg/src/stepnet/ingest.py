"""Sensor recordings: CSV loading/writing and a synthetic gait generator.

Samples are stored column-wise as a ``(n, 6)`` float64 array with channel
order ``ax, ay, az, gx, gy, gz`` (accel in g, gyro in deg/s) next to a
``(n,)`` timestamp vector in seconds.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import logging
import math
import os
import warnings
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

logger = logging.getLogger(__name__)

CHANNELS = ("ax", "ay", "az", "gx", "gy", "gz")
SENSOR_HEADER = ("t",) + CHANNELS
ANNOT_HEADER = ("t", "foot")

# Floats are written with repr(): shortest decimal that round-trips exactly,
# so files written here reload bit-identically.
FLOAT_FORMAT = repr


class Foot(Enum):
    LEFT = "L"
    RIGHT = "R"

    @property
    def index(self) -> int:
        return 0 if self is Foot.LEFT else 1

    @classmethod
    def from_index(cls, i: int) -> "Foot":
        return cls.LEFT if int(i) == 0 else cls.RIGHT

    def other(self) -> "Foot":
        return Foot.RIGHT if self is Foot.LEFT else Foot.LEFT


class RecordingError(ValueError):
    """Raised for malformed or inconsistent sensor data."""


@dataclass(frozen=True)
class SensorSample:
    t: float
    ax: float
    ay: float
    az: float
    gx: float
    gy: float
    gz: float

    def __post_init__(self):
        vals = dataclasses.astuple(self)
        if not all(math.isfinite(v) for v in vals):
            raise RecordingError(f"non-finite value in sample {vals}")
        if self.t < 0:
            raise RecordingError(f"negative timestamp {self.t}")


@dataclass(frozen=True)
class StepEvent:
    t: float
    foot: Foot


@dataclass(frozen=True, eq=False)
class Recording:
    """One subject's labeled session.

    ``t`` and ``x`` are read-only numpy arrays; ``events`` is a tuple of
    :class:`StepEvent` in increasing time order.
    """

    subject_id: str
    device: str
    t: np.ndarray
    x: np.ndarray
    events: tuple[StepEvent, ...] = ()
    native_rate_hz: float = field(default=0.0)

    def __post_init__(self):
        t = np.array(self.t, dtype=np.float64)
        x = np.array(self.x, dtype=np.float64).reshape(-1, 6)
        if t.ndim != 1 or len(t) == 0:
            raise RecordingError("recording has no samples")
        if len(t) != len(x):
            raise RecordingError(f"{len(t)} timestamps but {len(x)} samples")
        if not (np.all(np.isfinite(t)) and np.all(np.isfinite(x))):
            raise RecordingError("non-finite sample values")
        if t[0] < 0:
            raise RecordingError("negative timestamp")
        if np.any(np.diff(t) < 0):
            raise RecordingError("timestamps are not monotone non-decreasing")
        t.flags.writeable = False
        x.flags.writeable = False
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "x", x)
        events = tuple(self.events)
        object.__setattr__(self, "events", events)
        _check_events(events, t[0], t[-1])
        rate = self.native_rate_hz or estimate_rate(t)
        if not rate > 0:
            raise RecordingError(f"native_rate_hz must be positive, got {rate}")
        object.__setattr__(self, "native_rate_hz", float(rate))

    def __len__(self):
        return len(self.t)

    def __eq__(self, other):
        if not isinstance(other, Recording):
            return NotImplemented
        return (
            self.subject_id == other.subject_id
            and self.device == other.device
            and self.events == other.events
            and self.native_rate_hz == other.native_rate_hz
            and np.array_equal(self.t, other.t)
            and np.array_equal(self.x, other.x)
        )

    __hash__ = None

    @property
    def samples(self) -> list[SensorSample]:
        return [SensorSample(float(ti), *map(float, xi)) for ti, xi in zip(self.t, self.x)]

    @property
    def duration(self) -> float:
        return float(self.t[-1] - self.t[0])


def estimate_rate(t: np.ndarray) -> float:
    if len(t) < 2 or t[-1] == t[0]:
        # single sample: rate is undefined, keep a positive placeholder
        return 1.0
    return (len(t) - 1) / float(t[-1] - t[0])


def _check_events(events, t_first, t_last):
    for ev in events:
        if not (t_first <= ev.t <= t_last):
            raise RecordingError(
                f"step event at t={ev.t} outside sample span [{t_first}, {t_last}]"
            )
    for a, b in zip(events, events[1:]):
        if not b.t > a.t:
            raise RecordingError(f"step events not strictly increasing at t={b.t}")
        if a.foot == b.foot:
            warnings.warn(f"consecutive {a.foot.name} steps at t={a.t} and t={b.t}", stacklevel=3)


# ---------------------------------------------------------------------------
# CSV I/O
# ---------------------------------------------------------------------------


def _read_rows(path, header):
    path = Path(path)
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            first = next(reader)
        except StopIteration:
            raise RecordingError(f"{path}: empty file") from None
        if tuple(c.strip() for c in first) != header:
            raise RecordingError(f"{path}:1: expected header {','.join(header)}, got {','.join(first)}")
        for row in reader:
            if not row or all(not c.strip() for c in row):
                continue
            yield reader.line_num, row


def load_recording(csv_path, annot_path, subject_id: str, device: str) -> Recording:
    """Load a sensor CSV and its step annotation CSV into a :class:`Recording`.

    Samples are stably sorted by time. Parse errors carry the file name and
    line number. ``annot_path=None`` gives an unannotated recording.
    """
    rows = []
    for lineno, row in _read_rows(csv_path, SENSOR_HEADER):
        if len(row) != 7:
            raise RecordingError(f"{csv_path}:{lineno}: expected 7 fields, got {len(row)}")
        try:
            vals = [float(v) for v in row]
        except ValueError as exc:
            raise RecordingError(f"{csv_path}:{lineno}: {exc}") from None
        if not all(math.isfinite(v) for v in vals):
            raise RecordingError(f"{csv_path}:{lineno}: non-finite value")
        rows.append(vals)
    if not rows:
        raise RecordingError(f"{csv_path}: no samples")
    data = np.array(rows, dtype=np.float64)
    order = np.argsort(data[:, 0], kind="stable")
    data = data[order]

    events = []
    annot_rows = _read_rows(annot_path, ANNOT_HEADER) if annot_path is not None else ()
    for lineno, row in annot_rows:
        if len(row) != 2:
            raise RecordingError(f"{annot_path}:{lineno}: expected 2 fields, got {len(row)}")
        try:
            t = float(row[0])
            foot = Foot(row[1].strip().upper())
        except ValueError as exc:
            raise RecordingError(f"{annot_path}:{lineno}: {exc}") from None
        events.append(StepEvent(t, foot))

    return Recording(
        subject_id=subject_id,
        device=device,
        t=data[:, 0],
        x=data[:, 1:],
        events=tuple(events),
        native_rate_hz=estimate_rate(data[:, 0]),
    )


def _atomic_write_text(path: Path, text: str):
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)


def write_recording(rec: Recording, csv_path, annot_path):
    """Write ``rec`` as the sensor CSV + annotation CSV pair.

    Floats are written with ``repr`` so :func:`load_recording` restores them
    bit-exactly.
    """
    lines = [",".join(SENSOR_HEADER)]
    for ti, xi in zip(rec.t.tolist(), rec.x.tolist()):
        lines.append(",".join(FLOAT_FORMAT(v) for v in [ti, *xi]))
    _atomic_write_text(Path(csv_path), "\n".join(lines) + "\n")
    lines = [",".join(ANNOT_HEADER)]
    lines += [f"{FLOAT_FORMAT(ev.t)},{ev.foot.value}" for ev in rec.events]
    _atomic_write_text(Path(annot_path), "\n".join(lines) + "\n")


def convert_pedometer(raw_csv, out_csv, time_col, accel_cols, gyro_cols, time_scale=1.0,
                      accel_scale=1.0, gyro_scale=1.0, delimiter=","):
    """One-shot conversion of an arbitrary column-oriented IMU export to the sensor CSV.

    Column arguments are header names in ``raw_csv``. Scales convert to
    seconds, g and deg/s respectively (e.g. ``accel_scale=1/9.80665`` for
    m/s^2, ``gyro_scale=180/pi`` for rad/s). Timestamps are shifted so the
    first sample is at ``t=0``. Step annotations must be converted
    separately into the ``t,foot`` format.
    """
    with open(raw_csv, newline="") as fh:
        reader = csv.DictReader(fh, delimiter=delimiter)
        rows = []
        for rec in reader:
            t = float(rec[time_col]) * time_scale
            a = [float(rec[c]) * accel_scale for c in accel_cols]
            g = [float(rec[c]) * gyro_scale for c in gyro_cols]
            rows.append([t, *a, *g])
    if not rows:
        raise RecordingError(f"{raw_csv}: no samples")
    data = np.array(rows)
    data[:, 0] -= data[:, 0].min()
    lines = [",".join(SENSOR_HEADER)]
    lines += [",".join(FLOAT_FORMAT(v) for v in r) for r in data.tolist()]
    _atomic_write_text(Path(out_csv), "\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# Synthetic gait
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SynthConfig:
    cadence_spm: float = 120.0
    duration_s: float = 60.0
    accel_amp: float = 0.3
    gyro_amp: float = 60.0
    noise_sd: float = 0.05
    axis_rotation_deg: float = 0.0
    scale: float = 1.0
    sample_rate_hz: float = 100.0
    seed: int = 0

    def __post_init__(self):
        if not self.cadence_spm > 0:
            raise ValueError("cadence_spm must be > 0")
        if not self.duration_s > 0:
            raise ValueError("duration_s must be > 0")
        if not self.sample_rate_hz >= 15:
            raise ValueError("sample_rate_hz must be >= 15")
        if not self.scale > 0:
            raise ValueError("scale must be > 0")
        if not self.noise_sd >= 0:
            raise ValueError("noise_sd must be >= 0")

    def to_json(self) -> str:
        return json.dumps(dataclasses.asdict(self), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "SynthConfig":
        return cls(**json.loads(text))


def gait_signals(t: np.ndarray, step_hz: float, accel_amp: float, gyro_amp: float) -> np.ndarray:
    """Noise-free, unrotated 6-axis gait pattern at times ``t``.

    Axes: x forward, y lateral, z vertical. The vertical accel peaks once per
    step; the lateral-axis gyro runs at half the step rate (one full gait
    cycle) so its sign tells left from right.
    """
    w = 2 * np.pi * step_hz
    out = np.empty((len(t), 6))
    out[:, 0] = 0.4 * accel_amp * np.sin(2 * w * t)
    out[:, 1] = 0.25 * accel_amp * np.sin(0.5 * w * t + np.pi / 2)
    out[:, 2] = 1.0 + accel_amp * np.sin(w * t)
    out[:, 3] = 3.0 * gyro_amp * np.sin(w * t + np.pi / 3)
    out[:, 4] = gyro_amp * np.sin(0.5 * w * t)
    out[:, 5] = 0.3 * gyro_amp * np.sin(w * t - np.pi / 4)
    return out


def rotate_about_vertical(x: np.ndarray, degrees: float) -> np.ndarray:
    """Rotate accel and gyro x/y components about the z axis."""
    if degrees == 0:
        return x.copy()
    th = np.deg2rad(degrees)
    c, s = np.cos(th), np.sin(th)
    out = x.copy()
    for i, j in ((0, 1), (3, 4)):
        out[:, i] = c * x[:, i] - s * x[:, j]
        out[:, j] = s * x[:, i] + c * x[:, j]
    return out


def synthesize(cfg: SynthConfig, subject_id: str = "synth", device: str = "synthetic") -> Recording:
    """Generate a walking recording with exact foot-strike annotations.

    Foot strikes sit at the peaks of the vertical accel sinusoid,
    ``t_k = (k + 1/4) / f_step``, alternating L, R, L, ... There are exactly
    ``floor(cadence * duration / 60)`` of them. Channels are then rotated,
    scaled by ``cfg.scale`` and perturbed by Gaussian noise whose sd is
    ``noise_sd`` times the accel or gyro amplitude.
    """
    rng = np.random.default_rng(cfg.seed)
    step_hz = cfg.cadence_spm / 60.0
    n = int(math.floor(cfg.duration_s * cfg.sample_rate_hz + 1e-9)) + 1
    t = np.arange(n) / cfg.sample_rate_hz

    x = gait_signals(t, step_hz, cfg.accel_amp, cfg.gyro_amp)
    x = rotate_about_vertical(x, cfg.axis_rotation_deg) * cfg.scale
    if cfg.noise_sd > 0:
        sd = np.array([cfg.accel_amp] * 3 + [cfg.gyro_amp] * 3) * cfg.noise_sd
        x = x + rng.standard_normal(x.shape) * sd

    n_steps = int(math.floor(cfg.cadence_spm * cfg.duration_s / 60.0 + 1e-9))
    strikes = (np.arange(n_steps) + 0.25) / step_hz
    events = tuple(StepEvent(float(ts), Foot.from_index(k % 2)) for k, ts in enumerate(strikes))
    return Recording(
        subject_id=subject_id,
        device=device,
        t=t,
        x=x,
        events=events,
        native_rate_hz=cfg.sample_rate_hz,
    )


def write_synthetic(rec: Recording, cfg: SynthConfig, out_dir, stem: str | None = None):
    """Write ``<stem>.csv``, ``<stem>.steps.csv`` and ``<stem>.meta.json``."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    stem = stem or rec.subject_id
    csv_path = out_dir / f"{stem}.csv"
    annot_path = out_dir / f"{stem}.steps.csv"
    meta_path = out_dir / f"{stem}.meta.json"
    write_recording(rec, csv_path, annot_path)
    meta = {"subject_id": rec.subject_id, "device": rec.device, "synth_config": dataclasses.asdict(cfg)}
    _atomic_write_text(meta_path, json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return csv_path, annot_path, meta_path


def load_dataset(data_dir) -> list[Recording]:
    """Load every ``<stem>.csv`` / ``<stem>.steps.csv`` pair in ``data_dir``.

    Subject id and device come from ``<stem>.meta.json`` when present,
    otherwise the stem and ``"unknown"``. Sorted by subject id.
    """
    data_dir = Path(data_dir)
    if not data_dir.is_dir():
        raise FileNotFoundError(f"data directory not found: {data_dir}")
    recs = []
    for csv_path in sorted(data_dir.glob("*.csv")):
        if csv_path.name.endswith(".steps.csv"):
            continue
        stem = csv_path.name[: -len(".csv")]
        annot = data_dir / f"{stem}.steps.csv"
        if not annot.exists():
            logger.warning("no annotation file for %s, skipping", csv_path)
            continue
        subject_id, device = stem, "unknown"
        meta = data_dir / f"{stem}.meta.json"
        if meta.exists():
            m = json.loads(meta.read_text())
            subject_id = m.get("subject_id", stem)
            device = m.get("device", device)
        recs.append(load_recording(csv_path, annot, subject_id, device))
    if not recs:
        raise RecordingError(f"no recordings found in {data_dir}")
    return sorted(recs, key=lambda r: r.subject_id)


# per-device shift used for the cross-device experiments
SHIFTED_DEVICE = {"scale": 1.3, "axis_rotation_deg": 20.0, "noise_factor": 2.0}


def subject_config(index: int, seed: int, duration_s: float, base: SynthConfig = SynthConfig(),
                   shift: dict | None = None) -> SynthConfig:
    """Per-subject synthetic config with seeded inter-subject variation.

    Cadence is uniform in [100, 130] spm and both amplitudes vary by up to
    +-20% around ``base``. ``shift`` (see :data:`SHIFTED_DEVICE`) applies a
    device change on top: channel gain, rotation about the vertical axis and
    a noise multiplier.
    """
    rng = np.random.default_rng([seed, index])
    cadence = rng.uniform(100.0, 130.0)
    accel_amp = base.accel_amp * rng.uniform(0.8, 1.2)
    gyro_amp = base.gyro_amp * rng.uniform(0.8, 1.2)
    sub_seed = int(rng.integers(0, 2**63 - 1))
    cfg = dataclasses.replace(
        base, cadence_spm=cadence, duration_s=duration_s, accel_amp=accel_amp,
        gyro_amp=gyro_amp, seed=sub_seed,
    )
    if shift:
        cfg = dataclasses.replace(
            cfg,
            scale=shift.get("scale", 1.0),
            axis_rotation_deg=shift.get("axis_rotation_deg", 0.0),
            noise_sd=cfg.noise_sd * shift.get("noise_factor", 1.0),
        )
    return cfg


def synth_cohort(n_subjects: int, duration_s: float, seed: int, base: SynthConfig = SynthConfig(),
                 shift: dict | None = None, prefix: str = "S", device: str = "synthetic"):
    """``n_subjects`` synthetic recordings; returns ``[(Recording, SynthConfig), ...]``."""
    if n_subjects < 1:
        raise ValueError("n_subjects must be >= 1")
    out = []
    for i in range(n_subjects):
        cfg = subject_config(i, seed, duration_s, base, shift)
        out.append((synthesize(cfg, subject_id=f"{prefix}{i:02d}", device=device), cfg))
    return out
