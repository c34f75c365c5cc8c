import numpy as np
import pytest
from hypothesis import given, strategies as st

from stepnet.counting import (
    MetricsReport,
    accuracy_class,
    accuracy_steps,
    aggregate,
    class_counts,
    count_steps,
    evaluate,
)
from stepnet.ingest import Foot, SynthConfig, synthesize
from stepnet.signal import prepare

labels = st.lists(st.sampled_from([0, 1]), max_size=60)


def test_count_examples():
    assert count_steps(["L", "R", "L", "R"]) == 3
    assert count_steps(["L", "L", "L"]) == 0
    assert count_steps([]) == 0
    assert count_steps(["L"]) == 0
    assert count_steps([Foot.LEFT, Foot.RIGHT]) == 1


@given(labels)
def test_count_matches_pairwise_scan(seq):
    assert count_steps(seq) == sum(1 for a, b in zip(seq, seq[1:]) if a != b)
    assert count_steps(np.array(seq, dtype=np.int64)) == count_steps(seq)


@given(labels)
def test_count_reverse_invariant(seq):
    assert count_steps(seq) == count_steps(seq[::-1])


@given(st.lists(st.tuples(st.sampled_from([0, 1]), st.sampled_from([0, 1])), min_size=1, max_size=50))
def test_accuracy_class_relabel_invariant(pairs):
    p, t = [a for a, _ in pairs], [b for _, b in pairs]
    flip = lambda s: [1 - v for v in s]  # noqa: E731
    assert accuracy_class(p, t) == accuracy_class(flip(p), flip(t))


def test_accuracy_class_examples():
    assert accuracy_class([0, 1, 1], [0, 1, 1]) == 100.0
    truth = [1] * 50 + [0] * 50
    pred = [1] * 40 + [0] * 10 + [0] * 45 + [1] * 5
    c = class_counts(pred, truth)
    assert (c.n_right_correct, c.n_left_correct, c.n_total) == (40, 45, 100)
    assert accuracy_class(pred, truth) == 85.0
    with pytest.raises(ValueError):
        accuracy_class([0], [0, 1])
    with pytest.raises(ValueError):
        accuracy_class([], [])


def test_accuracy_steps_examples():
    assert accuracy_steps(500, 500) == 100.0
    assert accuracy_steps(490, 500) == 98.0
    assert accuracy_steps(0, 500) == 0.0
    assert accuracy_steps(1100, 500) == pytest.approx(-20.0)
    with pytest.raises(ValueError):
        accuracy_steps(3, 0)


def test_misclassified_run_undercounts():
    # alternating truth: flipping an even-length run loses at most 2 transitions
    truth = [k % 2 for k in range(30)]
    base = count_steps(truth)
    for start in range(0, 26):
        for length in (2, 4):
            pred = list(truth)
            for j in range(start, start + length):
                pred[j] = 1 - pred[j]
            assert base - count_steps(pred) <= 2


class _Oracle:
    def __init__(self, labels):
        self.labels = labels

    def predict(self, X):
        return self.labels


class _Constant:
    def predict(self, X):
        return np.zeros(len(X), dtype=np.int64)


def test_evaluate_with_truth_stub():
    ws = prepare(synthesize(SynthConfig(cadence_spm=120, duration_s=60, noise_sd=0.0)))
    r = evaluate(_Oracle(ws.labels), ws)
    assert r.accuracy_class == 100.0
    assert r.steps_predicted == count_steps(ws.labels)
    assert r.accuracy_steps == accuracy_steps(count_steps(ws.labels), ws.ground_truth_steps)
    assert abs(r.accuracy_steps - 100) <= 2 / ws.ground_truth_steps * 100 + 1e-9
    assert r.n_left_correct + r.n_right_correct == r.n_total


def test_evaluate_constant_predictor_chance():
    ws = prepare(synthesize(SynthConfig(cadence_spm=110, duration_s=120)))
    r = evaluate(_Constant(), ws)
    assert 45 <= r.accuracy_class <= 55
    assert r.steps_predicted == 0


def test_metrics_report_invariants():
    with pytest.raises(ValueError):
        MetricsReport("s", 5, 6, 10, 0, 1, 0.0, 0.0)


def test_aggregate_medians():
    rs = [MetricsReport("a", 1, 1, 2, 1, 1, 100.0, 97.0), MetricsReport("b", 0, 1, 2, 1, 1, 50.0, 99.0)]
    agg = aggregate(rs)
    assert agg["median_accuracy_steps"] == 98.0
    assert agg["median_accuracy_class"] == 75.0
    assert len(agg["subjects"]) == 2
