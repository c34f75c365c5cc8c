import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from stepnet.counting import count_steps
from stepnet.ingest import Foot, Recording, RecordingError, StepEvent, SynthConfig, gait_signals, synthesize
from stepnet.signal import WindowSet, label_window, label_windows, make_windows, prepare, resample


def _rec(t, x, events=()):
    return Recording("s", "d", np.asarray(t, float), np.asarray(x, float), tuple(events))


def test_constant_preserved_exactly():
    t = np.arange(500) / 50.0
    rec = _rec(t, np.full((500, 6), 0.5))
    out = resample(rec)
    assert np.all(out.x == 0.5)


def test_linear_ramp():
    x = np.zeros((2, 6))
    x[1, 0] = 1.0
    out = resample(_rec([0.0, 1.0], x))
    assert out.x[1, 0] == 1 / 15
    assert len(out) == 16


def test_grid_is_arithmetic():
    rec = synthesize(SynthConfig(duration_s=20, sample_rate_hz=97.0))
    out = resample(rec)
    np.testing.assert_array_equal(out.t, rec.t[0] + np.arange(len(out)) / 15.0)
    assert out.t[-1] <= rec.t[-1]
    assert out.native_rate_hz == 15.0
    assert out.events == rec.events


def test_sinusoid_fidelity():
    # closed-form reference signal sampled directly on the 15 Hz grid
    cfg = SynthConfig(cadence_spm=120, duration_s=60, noise_sd=0.0, sample_rate_hz=100)
    out = resample(synthesize(cfg))
    ref = gait_signals(out.t, 2.0, cfg.accel_amp, cfg.gyro_amp)
    rms = np.sqrt(np.mean((out.x[:, 2] - ref[:, 2]) ** 2))
    assert rms < 0.01 * cfg.accel_amp


def test_resample_needs_two_samples():
    with pytest.raises(RecordingError):
        resample(_rec([0.0], np.zeros((1, 6))))


@pytest.mark.parametrize("n,k", [(70, 10), (69, 9), (7, 1), (13, 1)])
def test_window_counts(n, k):
    ws = make_windows(_rec(np.arange(n) / 15.0, np.zeros((n, 6)), [StepEvent(0.0, Foot.LEFT)]))
    assert len(ws) == k
    assert ws.X.shape == (k, 7, 6)


def test_sixty_second_recording():
    ws = prepare(synthesize(SynthConfig(duration_s=60)))
    assert len(ws) == 128


@settings(max_examples=40, deadline=None)
@given(st.integers(min_value=7, max_value=400))
def test_window_count_property(n):
    ws = make_windows(_rec(np.arange(n) / 15.0, np.zeros((n, 6)), [StepEvent(0.0, Foot.RIGHT)]))
    assert len(ws) == n // 7


def test_make_windows_errors():
    with pytest.raises(RecordingError):
        make_windows(_rec(np.arange(6) / 15.0, np.zeros((6, 6))))
    with pytest.raises(RecordingError, match="15 Hz"):
        make_windows(_rec(np.arange(20) / 50.0, np.zeros((20, 6))))


def test_window_contents_and_centres():
    n = 21
    x = np.arange(n * 6, dtype=float).reshape(n, 6)
    ws = make_windows(_rec(np.arange(n) / 15.0, x, [StepEvent(0.0, Foot.LEFT)]))
    np.testing.assert_array_equal(ws.X[1], x[7:14])
    np.testing.assert_allclose(ws.t_center, [3 / 15, 10 / 15, 17 / 15])


def test_label_window_examples():
    ev = [StepEvent(1.0, Foot.LEFT), StepEvent(1.5, Foot.RIGHT)]
    assert label_window(ev, 1.2) is Foot.LEFT
    assert label_window(ev, 1.5) is Foot.RIGHT
    assert label_window([StepEvent(1.0, Foot.LEFT)], 0.2) is Foot.LEFT
    with pytest.raises(ValueError):
        label_window([], 1.0)


def test_label_sequence_alternates_with_step_period():
    # events every 0.5 s; brute force: label = parity of the number of events at or before t
    events = [StepEvent(0.25 + 0.5 * k, Foot.from_index(k % 2)) for k in range(40)]
    centers = np.arange(0.3, 19.9, 0.05)
    got = label_windows(events, centers)
    brute = [(sum(e.t <= c for e in events) - 1) % 2 for c in centers]
    np.testing.assert_array_equal(got, brute)
    # within each 1 s gait cycle both feet appear for exactly half the time
    assert np.mean(got) == pytest.approx(0.5, abs=0.02)


def test_ground_truth_counts_covered_span():
    rec = synthesize(SynthConfig(cadence_spm=120, duration_s=60))
    ws = prepare(rec)
    lo, hi = ws.span
    assert hi == pytest.approx(128 * 7 / 15)
    assert ws.ground_truth_steps == sum(lo <= e.t < hi for e in rec.events)


def test_subset_recounts():
    ws = prepare(synthesize(SynthConfig(cadence_spm=120, duration_s=60)))
    a, b = ws.subset(slice(0, 64)), ws.subset(slice(64, None))
    assert a.ground_truth_steps + b.ground_truth_steps == ws.ground_truth_steps
    assert isinstance(a, WindowSet) and len(a) == 64


def test_noiseless_labels_reconstruct_step_count():
    # oracle chain: true window labels -> transitions ~ annotated steps
    for cadence in (100, 110, 120, 128):
        ws = prepare(synthesize(SynthConfig(cadence_spm=cadence, duration_s=60, noise_sd=0.0)))
        steps = count_steps(ws.labels)
        assert abs(steps - ws.ground_truth_steps) <= 2


def test_unannotated_recording_windows():
    ws = make_windows(_rec(np.arange(14) / 15.0, np.zeros((14, 6))))
    assert list(ws.labels) == [-1, -1]
    assert ws.ground_truth_steps == 0
