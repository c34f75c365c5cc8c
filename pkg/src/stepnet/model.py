"""The step classifier network, its training loops and model files.

Architecture: LSTM(256) over the 7 window rows, final hidden state only,
then dense 512 (ReLU, dropout), dense 256 (ReLU, dropout) and a 2-way
softmax head (0 = Left, 1 = Right).
"""

from __future__ import annotations

import dataclasses
import io
import json
import logging
import os
import statistics
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import nn
from .counting import MetricsReport, evaluate
from .signal import N_CHANNELS, WindowSet

logger = logging.getLogger(__name__)

HIDDEN = 256
FC1 = 512
FC2 = 256
N_CLASSES = 2
DEFAULT_DROPOUT = 0.3

MAGIC = "STEPNET v1"
# serialization order; lstm W/U/b are the i, f, g, o gate blocks stacked row-wise
PARAM_ORDER = ("lstm.W", "lstm.U", "lstm.b", "fc1.W", "fc1.b", "fc2.W", "fc2.b", "head.W", "head.b")
LSTM_KEYS = ("lstm.W", "lstm.U", "lstm.b")
DENSE_KEYS = PARAM_ORDER[3:]


class ModelFileError(ValueError):
    pass


@dataclass(eq=False)
class StepNet:
    lstm: nn.LstmParams
    fc1: nn.DenseParams
    fc2: nn.DenseParams
    head: nn.DenseParams
    dropout_rate: float = DEFAULT_DROPOUT
    lineage: dict = field(default_factory=dict)
    loss_history: list = field(default_factory=list, repr=False)

    def __post_init__(self):
        nn._check_rate(self.dropout_rate)
        H = self.lstm.hidden
        if self.fc1.n_in != H or self.fc2.n_in != self.fc1.n_out or self.head.n_in != self.fc2.n_out:
            raise nn.ShapeError(
                f"layer shapes do not chain: lstm {H}, fc1 {self.fc1.W.shape}, "
                f"fc2 {self.fc2.W.shape}, head {self.head.W.shape}"
            )

    @classmethod
    def init(cls, seed: int, hidden=HIDDEN, fc1=FC1, fc2=FC2, n_in=N_CHANNELS,
             dropout_rate=DEFAULT_DROPOUT) -> "StepNet":
        rng = np.random.default_rng(seed)
        return cls(
            lstm=nn.LstmParams.init(hidden, n_in, rng),
            fc1=nn.DenseParams.init(fc1, hidden, rng),
            fc2=nn.DenseParams.init(fc2, fc1, rng),
            head=nn.DenseParams.init(N_CLASSES, fc2, rng),
            dropout_rate=dropout_rate,
            lineage={"init_seed": int(seed)},
        )

    @classmethod
    def zeros(cls, hidden=HIDDEN, fc1=FC1, fc2=FC2, n_in=N_CHANNELS, dropout_rate=DEFAULT_DROPOUT):
        return cls(
            lstm=nn.LstmParams.zeros(hidden, n_in),
            fc1=nn.DenseParams.zeros(fc1, hidden),
            fc2=nn.DenseParams.zeros(fc2, fc1),
            head=nn.DenseParams.zeros(N_CLASSES, fc2),
            dropout_rate=dropout_rate,
        )

    @property
    def shapes(self) -> dict:
        return {
            "input": self.lstm.n_in,
            "hidden": self.lstm.hidden,
            "fc1": self.fc1.n_out,
            "fc2": self.fc2.n_out,
            "classes": self.head.n_out,
        }

    def params(self) -> dict[str, np.ndarray]:
        """Live views of every parameter array keyed ``layer.name``."""
        out = {}
        for layer in ("lstm", "fc1", "fc2", "head"):
            for k, v in getattr(self, layer).arrays().items():
                out[f"{layer}.{k}"] = v
        return out

    def copy(self) -> "StepNet":
        return StepNet(
            self.lstm.copy(), self.fc1.copy(), self.fc2.copy(), self.head.copy(),
            self.dropout_rate, json.loads(json.dumps(self.lineage)), list(self.loss_history),
        )

    def equals(self, other: "StepNet") -> bool:
        """Bit-exact parameter equality."""
        a, b = self.params(), other.params()
        return self.dropout_rate == other.dropout_rate and all(
            a[k].shape == b[k].shape and a[k].tobytes() == b[k].tobytes() for k in PARAM_ORDER
        )

    def predict_proba(self, X) -> np.ndarray:
        probs, _ = forward(self, X, training=False)
        return probs

    def predict(self, X) -> np.ndarray:
        """Class indices; an exact 0.5/0.5 tie goes to Left (0)."""
        probs = np.atleast_2d(self.predict_proba(X))
        return (probs[:, 1] > probs[:, 0]).astype(np.int64)


# ---------------------------------------------------------------------------
# forward / backward
# ---------------------------------------------------------------------------


@dataclass
class ForwardCache:
    lstm: nn.LstmCache
    h: np.ndarray
    a1: np.ndarray
    d1: np.ndarray
    m1: np.ndarray | None
    a2: np.ndarray
    d2: np.ndarray
    m2: np.ndarray | None


def _forward(net: StepNet, X, keep_cache: bool, rng):
    # dropout is applied iff an rng is given
    X = np.asarray(X, dtype=np.float64)
    # any sequence length works; windows from the signal module have 7 rows
    if X.ndim != 3 or X.shape[1] < 1 or X.shape[2] != net.lstm.n_in:
        raise nn.ShapeError(f"expected window(s) of shape (T, {net.lstm.n_in}), got {X.shape[1:]}")
    drop = rng is not None and net.dropout_rate > 0
    h, lcache = nn.lstm_forward(net.lstm, X, keep_cache=keep_cache)
    a1 = nn.dense_forward(net.fc1, h, "relu")
    m1 = nn.dropout_mask(a1.shape, net.dropout_rate, rng) if drop else None
    d1 = a1 * m1 if drop else a1
    a2 = nn.dense_forward(net.fc2, d1, "relu")
    m2 = nn.dropout_mask(a2.shape, net.dropout_rate, rng) if drop else None
    d2 = a2 * m2 if drop else a2
    logits = nn.dense_forward(net.head, d2, "none")
    cache = ForwardCache(lcache, h, a1, d1, m1, a2, d2, m2) if keep_cache else None
    return logits, cache


def forward(net: StepNet, X, training: bool = False, rng: np.random.Generator | None = None):
    """Class probabilities for one window ``(7, 6)`` or a batch ``(B, 7, 6)``.

    Returns ``(probs, cache)``; the cache is only kept in training mode.
    Dropout is active only when ``training`` and then needs ``rng``.
    """
    if hasattr(X, "x") and not isinstance(X, np.ndarray):
        X = X.x
    X = np.asarray(X, dtype=np.float64)
    squeeze = X.ndim == 2
    if training and net.dropout_rate > 0 and rng is None:
        raise ValueError("training-mode forward needs an rng for dropout")
    logits, cache = _forward(net, X[None] if squeeze else X, training, rng if training else None)
    probs = nn.softmax(logits)
    return (probs[0] if squeeze else probs), cache


def backward(net: StepNet, cache: ForwardCache, dlogits) -> dict[str, np.ndarray]:
    """Gradient tape for every parameter given ``dL/dlogits`` (summed over the batch)."""
    if cache is None:
        raise ValueError("backward needs a training-mode forward cache")
    dlogits = np.atleast_2d(dlogits)
    tape = {}
    g, dd2 = nn.dense_backward(net.head, cache.d2, None, dlogits, "none")
    tape["head.W"], tape["head.b"] = g["W"], g["b"]
    da2 = dd2 * cache.m2 if cache.m2 is not None else dd2
    g, dd1 = nn.dense_backward(net.fc2, cache.d1, cache.a2, da2, "relu")
    tape["fc2.W"], tape["fc2.b"] = g["W"], g["b"]
    da1 = dd1 * cache.m1 if cache.m1 is not None else dd1
    g, dh = nn.dense_backward(net.fc1, cache.h, cache.a1, da1, "relu")
    tape["fc1.W"], tape["fc1.b"] = g["W"], g["b"]
    g, _ = nn.lstm_backward(net.lstm, cache.lstm, dh)
    tape["lstm.W"], tape["lstm.U"], tape["lstm.b"] = g["W"], g["U"], g["b"]
    return tape


def loss_and_grad(net: StepNet, X, y, training: bool = True, rng=None):
    """Mean cross-entropy over a batch and its gradient tape.

    ``training=False`` skips dropout, which makes the loss a deterministic
    function of the parameters (used by gradient checks).
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y)
    if X.ndim == 2:
        X, y = X[None], y.reshape(1)
    if training and net.dropout_rate > 0 and rng is None:
        raise ValueError("training needs an rng for dropout")
    logits, cache = _forward(net, X, True, rng if training else None)
    _, losses, dlogits = nn.softmax_xent(logits, y)
    return float(losses.mean()), backward(net, cache, dlogits / len(X))


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 6
    lr: float = 0.05
    batch_size: int = 16
    seed: int = 0
    clip: float = 5.0
    dropout_rate: float = DEFAULT_DROPOUT

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be positive")
        if not (self.lr > 0 and self.clip > 0):
            raise ValueError("lr and clip must be positive")


def _stack(data) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(data, WindowSet):
        data = [data]
    data = [ws for ws in data if len(ws)]
    if not data:
        raise ValueError("no training windows")
    return np.concatenate([ws.X for ws in data]), np.concatenate([ws.labels for ws in data])


def run_epochs(net: StepNet, X, y, epochs: int, lr: float, batch_size: int,
               rng: np.random.Generator, clip: float = 5.0, keys=None) -> list[float]:
    """Mini-batch SGD on ``net`` in place; returns the mean loss of each epoch.

    ``keys`` restricts which parameters are updated (the others are frozen).
    """
    params = net.params()
    keys = PARAM_ORDER if keys is None else tuple(keys)
    n = len(X)
    history = []
    for epoch in range(epochs):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, batch_size):
            idx = order[start : start + batch_size]
            loss, tape = loss_and_grad(net, X[idx], y[idx], training=True, rng=rng)
            tape = nn.clip_gradients({k: tape[k] for k in keys}, clip)
            nn.sgd_step(params, tape, lr, keys)
            total += loss * len(idx)
        history.append(total / n)
        logger.info("epoch %d/%d loss %.4f", epoch + 1, epochs, history[-1])
    return history


def train_general(data, cfg: TrainConfig, init: StepNet | None = None) -> StepNet:
    """Train a general model on the pooled windows of every source subject.

    Minimizes mean cross-entropy over shuffled mini-batches. Per-epoch mean
    losses end up in ``net.loss_history``.
    """
    X, y = _stack(data)
    net = init.copy() if init is not None else StepNet.init(cfg.seed, dropout_rate=cfg.dropout_rate)
    rng = np.random.default_rng([cfg.seed, 1])
    net.loss_history = run_epochs(net, X, y, cfg.epochs, cfg.lr, cfg.batch_size, rng, cfg.clip)
    subjects = [ws.subject_id for ws in ([data] if isinstance(data, WindowSet) else data)]
    net.lineage = {**net.lineage, "train": {**dataclasses.asdict(cfg), "subjects": subjects}}
    return net


# ---------------------------------------------------------------------------
# cross-validation
# ---------------------------------------------------------------------------


@dataclass
class FoldResult:
    index: int
    test_subjects: list[str]
    reports: list[MetricsReport]
    net: StepNet = field(repr=False)

    @property
    def median_accuracy_class(self) -> float:
        return statistics.median(r.accuracy_class for r in self.reports)

    @property
    def median_accuracy_steps(self) -> float:
        return statistics.median(r.accuracy_steps for r in self.reports)


@dataclass
class CVReport:
    folds: list[FoldResult]

    @property
    def reports(self) -> list[MetricsReport]:
        return [r for f in self.folds for r in f.reports]

    @property
    def mean_of_medians_class(self) -> float:
        return float(np.mean([f.median_accuracy_class for f in self.folds]))

    @property
    def mean_of_medians_steps(self) -> float:
        return float(np.mean([f.median_accuracy_steps for f in self.folds]))

    @property
    def best_fold(self) -> FoldResult:
        # first fold wins ties
        return max(self.folds, key=lambda f: f.median_accuracy_steps)

    @property
    def best_model(self) -> StepNet:
        return self.best_fold.net

    def to_dict(self) -> dict:
        return {
            "subjects": [r.to_dict() for r in self.reports],
            "folds": [
                {
                    "fold": f.index,
                    "test_subjects": f.test_subjects,
                    "median_accuracy_class": f.median_accuracy_class,
                    "median_accuracy_steps": f.median_accuracy_steps,
                }
                for f in self.folds
            ],
            "mean_of_medians_accuracy_class": self.mean_of_medians_class,
            "mean_of_medians_accuracy_steps": self.mean_of_medians_steps,
            "best_fold": self.best_fold.index,
        }


def make_folds(subject_ids, fold_size: int = 2) -> list[list[str]]:
    """Sorted subject ids cut into consecutive groups; the last may be smaller."""
    ids = sorted(subject_ids)
    if len(set(ids)) != len(ids):
        raise ValueError("duplicate subject ids")
    return [ids[i : i + fold_size] for i in range(0, len(ids), fold_size)]


def cross_validate(data: list[WindowSet], cfg: TrainConfig, fold_size: int = 2) -> CVReport:
    """Leave-``fold_size``-subjects-out cross-validation.

    Each fold trains a fresh model (same seed) on every other subject and
    evaluates it per held-out subject.
    """
    if fold_size < 1:
        raise ValueError("fold_size must be >= 1")
    by_id = {ws.subject_id: ws for ws in data}
    if len(by_id) < 4:
        raise ValueError(f"cross-validation needs at least 4 subjects, got {len(by_id)}")
    folds = []
    for k, test_ids in enumerate(make_folds(by_id, fold_size)):
        train = [by_id[s] for s in sorted(by_id) if s not in test_ids]
        logger.info("fold %d: holding out %s", k, test_ids)
        net = train_general(train, cfg)
        net.lineage["cv_fold"] = k
        reports = [evaluate(net, by_id[s]) for s in test_ids]
        folds.append(FoldResult(k, list(test_ids), reports, net))
    return CVReport(folds)


# ---------------------------------------------------------------------------
# domain adaptation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class AdaptConfig:
    budget_s: float = 30.0
    epochs_head: int = 20
    lr_head: float = 0.01
    epochs_full: int = 10
    lr_full: float = 0.001
    batch_size: int = 16
    seed: int = 0
    clip: float = 5.0

    def __post_init__(self):
        if not self.budget_s > 0:
            raise ValueError("budget_s must be > 0")
        if self.epochs_head < 0 or self.epochs_full < 0:
            raise ValueError("epoch counts must be >= 0")
        if not (self.lr_head > 0 and self.lr_full > 0):
            raise ValueError("learning rates must be positive")
        if not self.lr_full < self.lr_head:
            raise ValueError("lr_full must be smaller than lr_head")


def split_adaptation(ws: WindowSet, budget_s: float) -> tuple[WindowSet, WindowSet]:
    """First ``budget_s`` seconds of windows (by center time) and the rest.

    Raises if the subject has less than ``budget_s`` seconds of windows or
    nothing left over for testing.
    """
    if len(ws) == 0 or ws.duration < budget_s:
        raise ValueError(
            f"subject {ws.subject_id} has {ws.duration if len(ws) else 0:.1f} s of windows, "
            f"adaptation needs {budget_s} s"
        )
    cut = int(np.searchsorted(ws.t_center, ws.span[0] + budget_s, side="left"))
    if cut == 0 or cut >= len(ws):
        raise ValueError(f"subject {ws.subject_id}: no windows left after the {budget_s} s adaptation budget")
    return ws.subset(slice(0, cut)), ws.subset(slice(cut, None))


def adapt(net: StepNet, target: WindowSet, cfg: AdaptConfig, stop_after_head: bool = False) -> StepNet:
    """Personalize ``net`` on the first ``cfg.budget_s`` seconds of ``target``.

    Step 1 freezes the LSTM and trains the dense layers and head; step 2
    unfreezes everything at the lower ``lr_full``. ``net`` itself is left
    untouched. ``stop_after_head`` returns right after step 1.
    """
    adapt_ws, _ = split_adaptation(target, cfg.budget_s)
    out = net.copy()
    rng = np.random.default_rng([cfg.seed, 2])
    X, y = adapt_ws.X, adapt_ws.labels
    hist = run_epochs(out, X, y, cfg.epochs_head, cfg.lr_head, cfg.batch_size, rng, cfg.clip, DENSE_KEYS)
    if not stop_after_head:
        hist += run_epochs(out, X, y, cfg.epochs_full, cfg.lr_full, cfg.batch_size, rng, cfg.clip)
    out.loss_history = hist
    if cfg.epochs_head or (cfg.epochs_full and not stop_after_head):
        out.lineage = {
            **out.lineage,
            "adapt": {**dataclasses.asdict(cfg), "subject": target.subject_id, "windows": len(adapt_ws)},
        }
    return out


# ---------------------------------------------------------------------------
# model files
# ---------------------------------------------------------------------------


def _header(net: StepNet) -> str:
    s = net.shapes
    lines = [
        MAGIC,
        f"input {s['input']}",
        f"hidden {s['hidden']}",
        f"fc1 {s['fc1']}",
        f"fc2 {s['fc2']}",
        f"classes {s['classes']}",
        f"dropout_rate {net.dropout_rate!r}",
        f"lineage {json.dumps(net.lineage, sort_keys=True)}",
        "order " + " ".join(PARAM_ORDER),
        "dtype <f8",
        "END",
    ]
    return "\n".join(lines) + "\n"


def save_model(net: StepNet, path):
    """Write a text header followed by little-endian float64 parameter blocks.

    The file is written to a temporary name and renamed into place.
    """
    path = Path(path)
    buf = io.BytesIO()
    buf.write(_header(net).encode("ascii"))
    params = net.params()
    for k in PARAM_ORDER:
        buf.write(np.ascontiguousarray(params[k], dtype="<f8").tobytes())
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(buf.getvalue())
    os.replace(tmp, path)


def _expected_shapes(s: dict) -> dict[str, tuple]:
    H, n_in, f1, f2, k = s["hidden"], s["input"], s["fc1"], s["fc2"], s["classes"]
    return {
        "lstm.W": (4 * H, n_in), "lstm.U": (4 * H, H), "lstm.b": (4 * H,),
        "fc1.W": (f1, H), "fc1.b": (f1,),
        "fc2.W": (f2, f1), "fc2.b": (f2,),
        "head.W": (k, f2), "head.b": (k,),
    }


PRODUCTION = {"input": N_CHANNELS, "hidden": HIDDEN, "fc1": FC1, "fc2": FC2, "classes": N_CLASSES}


def load_model(path, architecture: dict | None = PRODUCTION) -> StepNet:
    """Read a model file written by :func:`save_model`.

    With the default ``architecture`` the header shapes must match the
    production network; pass ``None`` to accept any consistent shapes.
    """
    raw = Path(path).read_bytes()
    end = raw.find(b"\nEND\n")
    if not raw.startswith(MAGIC.encode() + b"\n"):
        first = raw.split(b"\n", 1)[0][:40]
        raise ModelFileError(f"{path}: not a {MAGIC} file (header {first!r})")
    if end < 0:
        raise ModelFileError(f"{path}: truncated header")
    header = {}
    for line in raw[:end].decode("ascii").split("\n")[1:]:
        key, _, val = line.partition(" ")
        header[key] = val
    try:
        shapes = {k: int(header[k]) for k in ("input", "hidden", "fc1", "fc2", "classes")}
        dropout_rate = float(header["dropout_rate"])
        lineage = json.loads(header.get("lineage", "{}"))
        order = tuple(header["order"].split())
    except (KeyError, ValueError) as exc:
        raise ModelFileError(f"{path}: bad header field: {exc}") from None
    if order != PARAM_ORDER:
        raise ModelFileError(f"{path}: unsupported parameter order {order}")
    if header.get("dtype", "<f8") != "<f8":
        raise ModelFileError(f"{path}: unsupported dtype {header['dtype']}")
    if architecture is not None:
        bad = {k: (shapes[k], v) for k, v in architecture.items() if shapes.get(k) != v}
        if bad:
            detail = ", ".join(f"{k}={got} (expected {want})" for k, (got, want) in bad.items())
            raise ModelFileError(f"{path}: shape mismatch: {detail}")
    expect = _expected_shapes(shapes)
    body = raw[end + len(b"\nEND\n"):]
    n_expected = sum(int(np.prod(s)) for s in expect.values()) * 8
    if len(body) != n_expected:
        raise ModelFileError(f"{path}: expected {n_expected} parameter bytes, found {len(body)}")
    arrays, off = {}, 0
    for k in PARAM_ORDER:
        n = int(np.prod(expect[k]))
        arrays[k] = np.frombuffer(body, dtype="<f8", count=n, offset=off).astype(np.float64).reshape(expect[k])
        off += n * 8
    if not all(np.all(np.isfinite(a)) for a in arrays.values()):
        raise ModelFileError(f"{path}: non-finite parameters")
    return StepNet(
        lstm=nn.LstmParams(arrays["lstm.W"], arrays["lstm.U"], arrays["lstm.b"]),
        fc1=nn.DenseParams(arrays["fc1.W"], arrays["fc1.b"]),
        fc2=nn.DenseParams(arrays["fc2.W"], arrays["fc2.b"]),
        head=nn.DenseParams(arrays["head.W"], arrays["head.b"]),
        dropout_rate=dropout_rate,
        lineage=lineage,
    )
