"""Step counting from window labels and the two accuracy metrics."""

from __future__ import annotations

import dataclasses
import json
import statistics
from dataclasses import dataclass

import numpy as np

LEFT, RIGHT = 0, 1


def _as_index(labels) -> np.ndarray:
    """Accept class indices, ``Foot`` members or ``"L"``/``"R"`` strings."""
    out = []
    for v in labels:
        if hasattr(v, "index") and hasattr(v, "value") and not isinstance(v, str):
            out.append(v.index)
        elif isinstance(v, str):
            out.append({"L": LEFT, "R": RIGHT}[v.upper()])
        else:
            out.append(int(v))
    return np.asarray(out, dtype=np.int64)


def count_steps(labels) -> int:
    """Number of adjacent label changes."""
    a = labels if isinstance(labels, np.ndarray) else _as_index(labels)
    if len(a) < 2:
        return 0
    return int(np.count_nonzero(a[1:] != a[:-1]))


@dataclass(frozen=True)
class ClassCounts:
    n_right_correct: int
    n_left_correct: int
    n_total: int


def class_counts(pred, truth) -> ClassCounts:
    p = pred if isinstance(pred, np.ndarray) else _as_index(pred)
    t = truth if isinstance(truth, np.ndarray) else _as_index(truth)
    if len(p) != len(t):
        raise ValueError(f"prediction/truth length mismatch: {len(p)} vs {len(t)}")
    if len(t) == 0:
        raise ValueError("empty label sequences")
    hit = p == t
    return ClassCounts(
        n_right_correct=int(np.count_nonzero(hit & (t == RIGHT))),
        n_left_correct=int(np.count_nonzero(hit & (t == LEFT))),
        n_total=len(t),
    )


def accuracy_class(pred, truth) -> float:
    """Percentage of windows whose Left/Right label is predicted correctly."""
    c = class_counts(pred, truth)
    return (c.n_right_correct + c.n_left_correct) / c.n_total * 100


def accuracy_steps(predicted: int, ground_truth: int) -> float:
    """``(1 - |predicted - truth| / truth) * 100``, not clamped at zero."""
    if ground_truth <= 0:
        raise ValueError("ground-truth step count must be positive")
    return (1 - abs(predicted - ground_truth) / ground_truth) * 100


@dataclass(frozen=True)
class MetricsReport:
    subject_id: str
    n_right_correct: int
    n_left_correct: int
    n_total: int
    steps_predicted: int
    steps_ground_truth: int
    accuracy_class: float
    accuracy_steps: float

    def __post_init__(self):
        if self.n_right_correct + self.n_left_correct > self.n_total:
            raise ValueError("more correct windows than windows")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def report(subject_id: str, pred, truth, ground_truth_steps: int) -> MetricsReport:
    p = np.asarray(pred if isinstance(pred, np.ndarray) else _as_index(pred))
    t = np.asarray(truth if isinstance(truth, np.ndarray) else _as_index(truth))
    c = class_counts(p, t)
    steps = count_steps(p)
    return MetricsReport(
        subject_id=subject_id,
        n_right_correct=c.n_right_correct,
        n_left_correct=c.n_left_correct,
        n_total=c.n_total,
        steps_predicted=steps,
        steps_ground_truth=int(ground_truth_steps),
        accuracy_class=(c.n_right_correct + c.n_left_correct) / c.n_total * 100,
        accuracy_steps=accuracy_steps(steps, ground_truth_steps),
    )


def evaluate(net, ws) -> MetricsReport:
    """Inference over ``ws`` in time order, scored against its labels.

    ``net`` is anything with a ``predict(X) -> class indices`` method.
    """
    if len(ws) == 0:
        raise ValueError(f"no windows to evaluate for {ws.subject_id}")
    pred = np.asarray(net.predict(ws.X), dtype=np.int64)
    return report(ws.subject_id, pred, ws.labels, ws.ground_truth_steps)


def aggregate(reports) -> dict:
    """Per-subject entries plus medians of both metrics."""
    reports = list(reports)
    return {
        "subjects": [r.to_dict() for r in reports],
        "median_accuracy_class": statistics.median(r.accuracy_class for r in reports),
        "median_accuracy_steps": statistics.median(r.accuracy_steps for r in reports),
    }
