"""Dense float64 tensors with reverse-mode differentiation on an explicit tape.

Just enough surface for the attention network and PPO loss: matmul, gathers,
segment softmax/sums, the activations, and reductions.  Ops executed with
tape=None compute values only, which is what inference uses.  A Tape records
primitives in execution order (hence topologically); backward() walks it in
reverse and accumulates gradients into every tensor it reaches.
"""

from __future__ import annotations

import json
import struct
from typing import Callable, Sequence

import numpy as np


class Tensor:
    __slots__ = ("data", "grad")

    def __init__(self, data, grad: np.ndarray | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = grad

    @property
    def shape(self):
        return self.data.shape

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.data.shape})"


class Tape:
    """Ordered record of executed primitives; reusable after clear()."""

    def __init__(self):
        self._records: list[tuple[Tensor, tuple[Tensor, ...], Callable]] = []

    def record(self, out: Tensor, ins: tuple[Tensor, ...], backward: Callable):
        self._records.append((out, ins, backward))

    def __len__(self):
        return len(self._records)

    def clear(self):
        self._records.clear()

    def backward(self, loss: Tensor):
        """Propagate d(loss)/d(tensor) into .grad of every reachable tensor."""
        if loss.data.size != 1:
            raise ValueError(f"loss must be scalar, got shape {loss.data.shape}")
        if not any(out is loss for out, _, _ in self._records):
            raise RuntimeError("backward called on a tensor this tape did not produce")
        loss.grad = np.ones_like(loss.data)
        for out, ins, backward in reversed(self._records):
            if out.grad is None:
                continue
            for t, g in zip(ins, backward(out.grad)):
                if g is None:
                    continue
                if t.grad is None:
                    t.grad = np.zeros_like(t.data)
                t.grad += g


def _emit(tape: Tape | None, value: np.ndarray, ins: tuple[Tensor, ...],
          backward: Callable) -> Tensor:
    out = Tensor(value)
    if tape is not None:
        tape.record(out, ins, backward)
    return out


def _shape_match(a: Tensor, b: Tensor, op: str):
    if a.data.shape != b.data.shape:
        raise ValueError(f"{op}: shape mismatch {a.data.shape} vs {b.data.shape}")


# -- arithmetic --------------------------------------------------------------


def add(a: Tensor, b: Tensor, tape: Tape | None = None) -> Tensor:
    _shape_match(a, b, "add")
    return _emit(tape, a.data + b.data, (a, b), lambda g: (g, g))


def add_bias(x: Tensor, b: Tensor, tape: Tape | None = None) -> Tensor:
    """(n, d) + (d,) row broadcast."""
    if x.data.ndim != 2 or b.data.shape != (x.data.shape[1],):
        raise ValueError(f"add_bias: got {x.data.shape} and {b.data.shape}")
    return _emit(tape, x.data + b.data, (x, b), lambda g: (g, g.sum(axis=0)))


def sub(a: Tensor, b: Tensor, tape: Tape | None = None) -> Tensor:
    _shape_match(a, b, "sub")
    return _emit(tape, a.data - b.data, (a, b), lambda g: (g, -g))


def mul(a: Tensor, b: Tensor, tape: Tape | None = None) -> Tensor:
    _shape_match(a, b, "mul")
    ad, bd = a.data, b.data
    return _emit(tape, ad * bd, (a, b), lambda g: (g * bd, g * ad))


def scale(a: Tensor, c: float, tape: Tape | None = None) -> Tensor:
    return _emit(tape, a.data * c, (a,), lambda g: (g * c,))


def add_const(a: Tensor, c, tape: Tape | None = None) -> Tensor:
    return _emit(tape, a.data + c, (a,), lambda g: (g,))


def square(a: Tensor, tape: Tape | None = None) -> Tensor:
    ad = a.data
    return _emit(tape, ad * ad, (a,), lambda g: (2.0 * g * ad,))


def exp(a: Tensor, tape: Tape | None = None) -> Tensor:
    v = np.exp(a.data)
    return _emit(tape, v, (a,), lambda g: (g * v,))


def log(a: Tensor, tape: Tape | None = None) -> Tensor:
    ad = a.data
    return _emit(tape, np.log(ad), (a,), lambda g: (g / ad,))


def clip(a: Tensor, lo: float, hi: float, tape: Tape | None = None) -> Tensor:
    inside = (a.data >= lo) & (a.data <= hi)
    return _emit(tape, np.clip(a.data, lo, hi), (a,), lambda g: (g * inside,))


def minimum(a: Tensor, b: Tensor, tape: Tape | None = None) -> Tensor:
    _shape_match(a, b, "minimum")
    take_a = a.data <= b.data
    return _emit(tape, np.minimum(a.data, b.data), (a, b),
                 lambda g: (g * take_a, g * ~take_a))


def div(a: Tensor, b: Tensor, tape: Tape | None = None) -> Tensor:
    _shape_match(a, b, "div")
    ad, bd = a.data, b.data
    return _emit(tape, ad / bd, (a, b),
                 lambda g: (g / bd, -g * ad / (bd * bd)))


# -- linear algebra ----------------------------------------------------------


def matmul(a: Tensor, b: Tensor, tape: Tape | None = None) -> Tensor:
    """2-d @ 2-d or 2-d @ 1-d."""
    ad, bd = a.data, b.data
    if ad.ndim != 2 or bd.ndim not in (1, 2):
        raise ValueError(f"matmul: bad ranks {ad.shape} @ {bd.shape}")
    if ad.shape[1] != bd.shape[0]:
        raise ValueError(f"matmul: inner dims {ad.shape} @ {bd.shape}")
    if bd.ndim == 2:
        back = lambda g: (g @ bd.T, ad.T @ g)
    else:
        back = lambda g: (np.outer(g, bd), ad.T @ g)
    return _emit(tape, ad @ bd, (a, b), back)


def linear(x: Tensor, w: Tensor, tape: Tape | None = None) -> Tensor:
    """(n, d_in) times a (d_out, d_in) weight matrix, as x @ w.T."""
    xd, wd = x.data, w.data
    if xd.ndim != 2 or wd.ndim != 2 or xd.shape[1] != wd.shape[1]:
        raise ValueError(f"linear: {xd.shape} with weight {wd.shape}")
    return _emit(tape, xd @ wd.T, (x, w), lambda g: (g @ wd, g.T @ xd))


def gather_rows(x: Tensor, idx: np.ndarray, tape: Tape | None = None) -> Tensor:
    idx = np.asarray(idx, dtype=np.int64)

    def back(g):
        gx = np.zeros_like(x.data)
        np.add.at(gx, idx, g)
        return (gx,)

    return _emit(tape, x.data[idx], (x,), back)


def concat(parts: Sequence[Tensor], axis: int = 1, tape: Tape | None = None) -> Tensor:
    sizes = [p.data.shape[axis] for p in parts]
    splits = np.cumsum(sizes)[:-1]

    def back(g):
        return tuple(np.split(g, splits, axis=axis))

    return _emit(tape, np.concatenate([p.data for p in parts], axis=axis),
                 tuple(parts), back)


def reshape(a: Tensor, shape, tape: Tape | None = None) -> Tensor:
    old = a.data.shape
    return _emit(tape, a.data.reshape(shape), (a,), lambda g: (g.reshape(old),))


def stack1d(parts: Sequence[Tensor], tape: Tape | None = None) -> Tensor:
    """Stack scalar tensors into a vector."""

    def back(g):
        return tuple(np.asarray(gi) for gi in g)

    return _emit(tape, np.array([float(p.data) for p in parts]), tuple(parts), back)


def pick(a: Tensor, i: int, tape: Tape | None = None) -> Tensor:
    """Single element of a 1-d tensor, as a scalar."""

    def back(g):
        ga = np.zeros_like(a.data)
        ga[i] = g
        return (ga,)

    return _emit(tape, a.data[i], (a,), back)


# -- activations -------------------------------------------------------------

LEAKY_SLOPE = 0.2


def leaky_relu(a: Tensor, tape: Tape | None = None) -> Tensor:
    ad = a.data
    pos = ad > 0
    slope = np.where(pos, 1.0, LEAKY_SLOPE)
    return _emit(tape, np.where(pos, ad, LEAKY_SLOPE * ad), (a,),
                 lambda g: (g * slope,))


def elu(a: Tensor, tape: Tape | None = None) -> Tensor:
    ad = a.data
    neg = np.expm1(np.minimum(ad, 0.0))
    v = np.where(ad > 0, ad, neg)
    dv = np.where(ad > 0, 1.0, neg + 1.0)
    return _emit(tape, v, (a,), lambda g: (g * dv,))


def tanh(a: Tensor, tape: Tape | None = None) -> Tensor:
    v = np.tanh(a.data)
    return _emit(tape, v, (a,), lambda g: (g * (1.0 - v * v),))


# -- reductions and segments -------------------------------------------------


def total(a: Tensor, tape: Tape | None = None) -> Tensor:
    return _emit(tape, a.data.sum(), (a,), lambda g: (g * np.ones_like(a.data),))


def mean(a: Tensor, tape: Tape | None = None) -> Tensor:
    n = a.data.size
    return _emit(tape, a.data.mean(), (a,),
                 lambda g: (g * np.ones_like(a.data) / n,))


def mean_pool(a: Tensor, tape: Tape | None = None) -> Tensor:
    """Mean over rows of a 2-d tensor."""
    n = a.data.shape[0]
    return _emit(tape, a.data.mean(axis=0), (a,),
                 lambda g: (np.tile(g / n, (n, 1)),))


def segment_sum(values: Tensor, seg: np.ndarray, num_segments: int,
                tape: Tape | None = None) -> Tensor:
    seg = np.asarray(seg, dtype=np.int64)
    shape = (num_segments,) + values.data.shape[1:]
    out = np.zeros(shape)
    np.add.at(out, seg, values.data)
    return _emit(tape, out, (values,), lambda g: (g[seg],))


def scale_rows(values: Tensor, weights: Tensor, tape: Tape | None = None) -> Tensor:
    """(n, d) rows scaled by an (n,) weight vector."""
    vd, wd = values.data, weights.data
    if vd.ndim != 2 or wd.shape != (vd.shape[0],):
        raise ValueError(f"scale_rows: got {vd.shape} and {wd.shape}")
    return _emit(tape, vd * wd[:, None], (values, weights),
                 lambda g: (g * wd[:, None], (g * vd).sum(axis=1)))


def segment_softmax(scores: Tensor, seg: np.ndarray, num_segments: int,
                    tape: Tape | None = None) -> Tensor:
    """Softmax over each segment of a 1-d score vector.

    Every segment present in `seg` gets a proper distribution: positive
    entries summing to one.  Scores are shifted by the per-segment max, so
    additive masking with large negatives yields exact zeros.
    """
    seg = np.asarray(seg, dtype=np.int64)
    sd = scores.data
    if sd.ndim != 1:
        raise ValueError("segment_softmax expects a 1-d score vector")
    seg_max = np.full(num_segments, -np.inf)
    np.maximum.at(seg_max, seg, sd)
    e = np.exp(sd - seg_max[seg])
    denom = np.zeros(num_segments)
    np.add.at(denom, seg, e)
    out = e / denom[seg]

    def back(g):
        dot = np.zeros(num_segments)
        np.add.at(dot, seg, g * out)
        return (out * (g - dot[seg]),)

    return _emit(tape, out, (scores,), back)


# -- parameters, init, optimiser ---------------------------------------------


def glorot(rng: np.random.Generator, fan_out: int, fan_in: int) -> Tensor:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return Tensor(rng.uniform(-limit, limit, size=(fan_out, fan_in)))


def glorot_vec(rng: np.random.Generator, n: int) -> Tensor:
    limit = np.sqrt(6.0 / (n + 1))
    return Tensor(rng.uniform(-limit, limit, size=(n,)))


class AdamState:
    """Per-parameter moment buffers for the Adam update."""

    def __init__(self, params: Sequence[Tensor], lr: float,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in params]
        self.v = [np.zeros_like(p.data) for p in params]


def adam_step(params: Sequence[Tensor], grads: Sequence[np.ndarray],
              state: AdamState) -> None:
    """One bias-corrected Adam update, in place."""
    if len(params) != len(grads):
        raise ValueError("params/grads length mismatch")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if g.shape != p.data.shape:
            raise ValueError(f"grad shape {g.shape} != param shape {p.data.shape}")
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p.data -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)


def clip_global_norm(grads: Sequence[np.ndarray], max_norm: float) -> float:
    """Scale gradients in place so their joint L2 norm is at most max_norm."""
    norm = float(np.sqrt(sum(float((g * g).sum()) for g in grads)))
    if norm > max_norm and norm > 0:
        factor = max_norm / norm
        for g in grads:
            g *= factor
    return norm


# -- serialization -----------------------------------------------------------

_MAGIC = b"FXT1"


def save_arrays(path, named: Sequence[tuple[str, np.ndarray]]) -> None:
    """Little-endian binary: magic, count, then (name, shape, float64 data)."""
    with open(path, "wb") as f:
        f.write(_MAGIC)
        f.write(struct.pack("<I", len(named)))
        for name, arr in named:
            raw = name.encode("utf-8")
            f.write(struct.pack("<H", len(raw)))
            f.write(raw)
            f.write(struct.pack("<B", arr.ndim))
            for d in arr.shape:
                f.write(struct.pack("<q", d))
            f.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_arrays(path) -> list[tuple[str, np.ndarray]]:
    with open(path, "rb") as f:
        blob = f.read()
    if blob[:4] != _MAGIC:
        raise ValueError("not a parameter file (bad magic)")
    pos = 4

    def take(n: int) -> bytes:
        nonlocal pos
        if pos + n > len(blob):
            raise ValueError("parameter file truncated")
        chunk = blob[pos:pos + n]
        pos += n
        return chunk

    (count,) = struct.unpack("<I", take(4))
    out = []
    for _ in range(count):
        (name_len,) = struct.unpack("<H", take(2))
        name = take(name_len).decode("utf-8")
        (ndim,) = struct.unpack("<B", take(1))
        shape = tuple(struct.unpack("<q", take(8))[0] for _ in range(ndim))
        n_items = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(take(8 * n_items), dtype="<f8").reshape(shape).copy()
        out.append((name, arr))
    if pos != len(blob):
        raise ValueError("trailing bytes in parameter file")
    return out


def arrays_to_json(named: Sequence[tuple[str, np.ndarray]]) -> str:
    return json.dumps({n: a.tolist() for n, a in named}, indent=1)
