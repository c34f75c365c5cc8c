"""Dense + LSTM building blocks with hand-written backpropagation.

Everything is float64 numpy. Ops accept a single example (vector input /
``(T, n_in)`` sequence) or a leading batch axis; gradients are summed over
the batch.

LSTM gate blocks are stacked in the order ``i, f, g, o`` so ``W`` is
``(4H, n_in)``, ``U`` is ``(4H, H)`` and ``b`` is ``(4H,)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

GATES = ("i", "f", "g", "o")

# name -> gradient array, shapes mirror the parameters
GradientTape = dict


class ShapeError(ValueError):
    pass


class NonFiniteError(FloatingPointError):
    pass


def sigmoid(z):
    # tanh form never overflows
    return 0.5 * (1.0 + np.tanh(0.5 * z))


# ---------------------------------------------------------------------------
# parameters
# ---------------------------------------------------------------------------


@dataclass
class LstmParams:
    W: np.ndarray
    U: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        H4, n_in = self.W.shape
        if H4 % 4:
            raise ShapeError(f"W has {H4} rows, not a multiple of 4")
        H = H4 // 4
        if self.U.shape != (4 * H, H) or self.b.shape != (4 * H,):
            raise ShapeError(
                f"inconsistent LSTM shapes W{self.W.shape} U{self.U.shape} b{self.b.shape}"
            )

    @property
    def hidden(self) -> int:
        return self.U.shape[1]

    @property
    def n_in(self) -> int:
        return self.W.shape[1]

    def gate(self, name: str) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Views ``(W_name, U_name, b_name)`` for one gate."""
        k = GATES.index(name)
        H = self.hidden
        sl = slice(k * H, (k + 1) * H)
        return self.W[sl], self.U[sl], self.b[sl]

    @classmethod
    def from_gates(cls, Ws, Us, bs) -> "LstmParams":
        """Build from per-gate lists ordered ``i, f, g, o``."""
        return cls(np.vstack(Ws), np.vstack(Us), np.concatenate(bs))

    @classmethod
    def zeros(cls, hidden: int, n_in: int) -> "LstmParams":
        return cls(np.zeros((4 * hidden, n_in)), np.zeros((4 * hidden, hidden)), np.zeros(4 * hidden))

    @classmethod
    def init(cls, hidden: int, n_in: int, rng: np.random.Generator, forget_bias: float = 1.0):
        """Uniform in +-1/sqrt(fan_in) per matrix; forget-gate bias set to ``forget_bias``."""
        a = 1.0 / np.sqrt(n_in)
        W = rng.uniform(-a, a, size=(4 * hidden, n_in))
        a = 1.0 / np.sqrt(hidden)
        U = rng.uniform(-a, a, size=(4 * hidden, hidden))
        b = np.zeros(4 * hidden)
        b[hidden : 2 * hidden] = forget_bias
        return cls(W, U, b)

    def arrays(self) -> dict[str, np.ndarray]:
        return {"W": self.W, "U": self.U, "b": self.b}

    def copy(self) -> "LstmParams":
        return LstmParams(self.W.copy(), self.U.copy(), self.b.copy())


@dataclass
class DenseParams:
    W: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        if self.W.ndim != 2 or self.b.shape != (self.W.shape[0],):
            raise ShapeError(f"inconsistent dense shapes W{self.W.shape} b{self.b.shape}")

    @property
    def n_out(self) -> int:
        return self.W.shape[0]

    @property
    def n_in(self) -> int:
        return self.W.shape[1]

    @classmethod
    def zeros(cls, n_out: int, n_in: int) -> "DenseParams":
        return cls(np.zeros((n_out, n_in)), np.zeros(n_out))

    @classmethod
    def init(cls, n_out: int, n_in: int, rng: np.random.Generator) -> "DenseParams":
        a = 1.0 / np.sqrt(n_in)
        return cls(rng.uniform(-a, a, size=(n_out, n_in)), np.zeros(n_out))

    def arrays(self) -> dict[str, np.ndarray]:
        return {"W": self.W, "b": self.b}

    def copy(self) -> "DenseParams":
        return DenseParams(self.W.copy(), self.b.copy())


# ---------------------------------------------------------------------------
# LSTM
# ---------------------------------------------------------------------------


@dataclass
class LstmCache:
    x: np.ndarray  # (B, T, n_in)
    h_prev: np.ndarray  # (B, T, H), hidden state entering each step
    c_prev: np.ndarray  # (B, T, H)
    gates: np.ndarray  # (B, T, 4H), post-activation i, f, g, o
    tanh_c: np.ndarray  # (B, T, H)
    squeeze: bool


def _as_batch_seq(x_seq, n_in):
    x = np.asarray(x_seq, dtype=np.float64)
    squeeze = x.ndim == 2
    if squeeze:
        x = x[None]
    if x.ndim != 3 or x.shape[2] != n_in or x.shape[1] < 1:
        raise ShapeError(f"expected (T, {n_in}) or (B, T, {n_in}) input with T >= 1, got {np.shape(x_seq)}")
    return x, squeeze


def lstm_forward(p: LstmParams, x_seq, h0=None, c0=None, keep_cache: bool = True):
    """Run the LSTM over ``x_seq`` and return the final hidden state.

    Returns ``(h_T, cache)``; ``cache`` is ``None`` when ``keep_cache`` is
    false. ``h0``/``c0`` default to zeros.
    """
    x, squeeze = _as_batch_seq(x_seq, p.n_in)
    B, T, _ = x.shape
    H = p.hidden
    h = np.zeros((B, H)) if h0 is None else np.broadcast_to(np.asarray(h0, dtype=np.float64), (B, H)).copy()
    c = np.zeros((B, H)) if c0 is None else np.broadcast_to(np.asarray(c0, dtype=np.float64), (B, H)).copy()

    xw = x @ p.W.T + p.b  # (B, T, 4H)
    if keep_cache:
        h_prev = np.empty((B, T, H))
        c_prev = np.empty((B, T, H))
        gates = np.empty((B, T, 4 * H))
        tanh_c = np.empty((B, T, H))
    UT = p.U.T
    for t in range(T):
        z = xw[:, t] + h @ UT
        i = sigmoid(z[:, :H])
        f = sigmoid(z[:, H : 2 * H])
        g = np.tanh(z[:, 2 * H : 3 * H])
        o = sigmoid(z[:, 3 * H :])
        if keep_cache:
            h_prev[:, t] = h
            c_prev[:, t] = c
            gates[:, t, :H] = i
            gates[:, t, H : 2 * H] = f
            gates[:, t, 2 * H : 3 * H] = g
            gates[:, t, 3 * H :] = o
        c = f * c + i * g
        tc = np.tanh(c)
        h = o * tc
        if keep_cache:
            tanh_c[:, t] = tc
    if not np.all(np.isfinite(h)):
        raise NonFiniteError("non-finite LSTM state")
    cache = LstmCache(x, h_prev, c_prev, gates, tanh_c, squeeze) if keep_cache else None
    return (h[0] if squeeze else h), cache


def lstm_backward(p: LstmParams, cache: LstmCache, dh_T):
    """Backpropagation through time from ``dL/dh_T``.

    Returns ``(tape, dx)`` where ``tape`` has keys ``W``, ``U``, ``b`` and
    ``dx`` matches the input sequence shape.
    """
    if cache is None:
        raise ValueError("lstm_backward needs the forward cache")
    B, T, n_in = cache.x.shape
    H = p.hidden
    if cache.h_prev.shape != (B, T, H) or n_in != p.n_in:
        raise ShapeError("cache does not match parameters")
    dh = np.asarray(dh_T, dtype=np.float64)
    if cache.squeeze:
        dh = dh[None]
    if dh.shape != (B, H):
        raise ShapeError(f"upstream gradient shape {dh.shape} != {(B, H)}")
    dc = np.zeros((B, H))
    dz = np.empty((B, T, 4 * H))
    U = p.U
    for t in range(T - 1, -1, -1):
        gt = cache.gates[:, t]
        i, f, g, o = gt[:, :H], gt[:, H : 2 * H], gt[:, 2 * H : 3 * H], gt[:, 3 * H :]
        tc = cache.tanh_c[:, t]
        dc = dc + dh * o * (1.0 - tc * tc)
        dzt = dz[:, t]
        dzt[:, :H] = dc * g * i * (1.0 - i)
        dzt[:, H : 2 * H] = dc * cache.c_prev[:, t] * f * (1.0 - f)
        dzt[:, 2 * H : 3 * H] = dc * i * (1.0 - g * g)
        dzt[:, 3 * H :] = dh * tc * o * (1.0 - o)
        dc = dc * f
        dh = dzt @ U
    dz2 = dz.reshape(B * T, 4 * H)
    tape = {
        "W": dz2.T @ cache.x.reshape(B * T, n_in),
        "U": dz2.T @ cache.h_prev.reshape(B * T, H),
        "b": dz2.sum(axis=0),
    }
    dx = dz @ p.W
    if cache.squeeze:
        dx = dx[0]
    return tape, dx


# ---------------------------------------------------------------------------
# dense, dropout, softmax
# ---------------------------------------------------------------------------


def dense_forward(p: DenseParams, x, activation: str = "none"):
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != p.n_in:
        raise ShapeError(f"dense layer expects {p.n_in} inputs, got {x.shape[-1]}")
    y = x @ p.W.T + p.b
    if activation == "relu":
        return np.maximum(y, 0.0)
    if activation == "none":
        return y
    raise ValueError(f"unknown activation {activation!r}")


def dense_backward(p: DenseParams, x, y, dy, activation: str = "none"):
    """Gradients of a dense layer given its input ``x`` and output ``y``.

    Returns ``(tape, dx)`` with tape keys ``W`` and ``b``.
    """
    dy = np.asarray(dy, dtype=np.float64)
    if activation == "relu":
        dy = dy * (y > 0)
    x2 = np.atleast_2d(x)
    dy2 = np.atleast_2d(dy)
    tape = {"W": dy2.T @ x2, "b": dy2.sum(axis=0)}
    return tape, dy @ p.W


def _check_rate(rate):
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")


def dropout_mask(shape, rate: float, rng: np.random.Generator) -> np.ndarray:
    """Inverted-dropout multiplier: 0 with probability ``rate``, else ``1/(1-rate)``."""
    _check_rate(rate)
    if rate == 0.0:
        return np.ones(shape)
    keep = rng.random(shape) >= rate
    return keep / (1.0 - rate)


def dropout(x, rate: float, rng: np.random.Generator | None, training: bool):
    _check_rate(rate)
    x = np.asarray(x, dtype=np.float64)
    if not training or rate == 0.0:
        return x
    return x * dropout_mask(x.shape, rate, rng)


def softmax(z):
    z = np.asarray(z, dtype=np.float64)
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def softmax_xent(logits, label):
    """Softmax probabilities, cross-entropy loss and its gradient.

    For a batch ``(B, K)`` of logits with ``B`` labels the loss is the
    per-example vector and ``dlogits`` is not averaged.
    """
    z = np.asarray(logits, dtype=np.float64)
    if z.size == 0 or z.shape[-1] == 0:
        raise ValueError("empty logits")
    probs = softmax(z)
    label = np.asarray(label)
    if z.ndim == 1:
        k = int(label)
        logp = z[k] - z.max() - np.log(np.exp(z - z.max()).sum())
        d = probs.copy()
        d[k] -= 1.0
        return probs, float(-logp), d
    rows = np.arange(len(z))
    zs = z - z.max(axis=1, keepdims=True)
    logp = zs[rows, label] - np.log(np.exp(zs).sum(axis=1))
    d = probs.copy()
    d[rows, label] -= 1.0
    return probs, -logp, d


# ---------------------------------------------------------------------------
# optimizer
# ---------------------------------------------------------------------------


def grad_norm(tape: dict) -> float:
    return float(np.sqrt(sum(float(np.vdot(g, g)) for g in tape.values())))


def clip_gradients(tape: dict, max_norm: float) -> dict:
    """Scale the whole tape so its global L2 norm is at most ``max_norm``."""
    norm = grad_norm(tape)
    if norm <= max_norm or norm == 0.0:
        return tape
    s = max_norm / norm
    return {k: g * s for k, g in tape.items()}


def sgd_step(params: dict, tape: dict, lr: float, keys=None) -> dict:
    """In-place ``theta -= lr * grad`` for every key in ``keys`` (default: all of ``tape``)."""
    if not lr > 0:
        raise ValueError(f"learning rate must be positive, got {lr}")
    for k in tape if keys is None else keys:
        p, g = params[k], tape[k]
        if p.shape != g.shape:
            raise ShapeError(f"{k}: gradient shape {g.shape} != parameter shape {p.shape}")
        p -= lr * g
    return params
