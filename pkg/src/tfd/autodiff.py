"""Dense float64 tensors with tape-based reverse-mode differentiation.

Every op is a plain function taking and returning :class:`Tensor`.  When a
:class:`Tape` is active and at least one input is tracked, the op appends a
node holding its backward closure.  :func:`backward` walks the tape once in
reverse order.
"""

from __future__ import annotations

import contextlib
import struct
from collections import OrderedDict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterator, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

DTYPE = np.float64


class ShapeError(ValueError):
    pass


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "node", "tape")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=DTYPE)
        self.data = arr
        self.requires_grad = requires_grad
        self.grad = np.zeros_like(arr) if requires_grad else None
        self.node: int | None = None
        self.tape: Tape | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def tracked(self) -> bool:
        return self.requires_grad or self.node is not None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        flag = ", tracked" if self.tracked else ""
        return f"Tensor(shape={self.shape}{flag})"

    def __add__(self, other):
        return add(self, _lift(other, self))

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, _lift(other, self))

    def __rsub__(self, other):
        return sub(_lift(other, self), self)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return mul(self, other)

    def __rmul__(self, other):
        return self.__mul__(other)

    def __neg__(self):
        return scale(self, -1.0)


def _lift(value, like: Tensor) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(np.full(like.shape, float(value)))


# --------------------------------------------------------------------------
# tape


@dataclass
class Node:
    parents: tuple[Tensor, ...]
    backward: Callable[[np.ndarray], Sequence[np.ndarray | None]]


@dataclass
class Tape:
    """Append-only record of tracked ops; parents always precede children.

    Leaving the context drops the recorded closures (they reference the
    intermediate arrays), so ``backward`` must run inside it.
    """

    nodes: list[Node] = field(default_factory=list)
    closed: bool = False

    def __enter__(self) -> "Tape":
        _TAPES.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _TAPES.remove(self)
        self.nodes.clear()
        self.closed = True


_TAPES: list[Tape] = []
_GRAD_ENABLED = [True]


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    """Disable recording; results are untracked constants."""
    _GRAD_ENABLED.append(False)
    try:
        yield
    finally:
        _GRAD_ENABLED.pop()


def _record(out: np.ndarray, parents: Sequence[Tensor], backward) -> Tensor:
    result = Tensor(out)
    if not _TAPES or not _GRAD_ENABLED[-1]:
        return result
    if not any(p.tracked for p in parents):
        return result
    tape = _TAPES[-1]
    tape.nodes.append(Node(tuple(parents), backward))
    result.node = len(tape.nodes) - 1
    result.tape = tape
    return result


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into every reachable leaf's ``grad``."""
    if loss.data.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    if loss.node is None:
        if loss.requires_grad:
            loss.grad += 1.0
        return
    tape = loss.tape
    if tape.closed:
        raise RuntimeError("backward called after its tape was closed")
    grads: dict[int, np.ndarray] = {loss.node: np.ones_like(loss.data)}
    for idx in range(loss.node, -1, -1):
        g = grads.pop(idx, None)
        if g is None:
            continue
        node = tape.nodes[idx]
        for parent, pg in zip(node.parents, node.backward(g)):
            if pg is None or not parent.tracked:
                continue
            if parent.node is not None and parent.tape is tape:
                prev = grads.get(parent.node)
                grads[parent.node] = pg if prev is None else prev + pg
            elif parent.requires_grad:
                parent.grad += pg


# --------------------------------------------------------------------------
# parameters


class ParamStore:
    """Named parameters in insertion order, each with its gradient accumulator."""

    def __init__(self):
        self._params: OrderedDict[str, Tensor] = OrderedDict()

    def add(self, name: str, value: np.ndarray) -> Tensor:
        if name in self._params:
            raise KeyError(f"duplicate parameter {name!r}")
        t = Tensor(np.array(value, dtype=DTYPE), requires_grad=True)
        self._params[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __iter__(self):
        return iter(self._params.items())

    def __len__(self) -> int:
        return len(self._params)

    def names(self) -> list[str]:
        return list(self._params)

    def zero_grad(self) -> None:
        for t in self._params.values():
            t.grad[...] = 0.0

    def count(self, prefix: str = "") -> int:
        return sum(t.data.size for n, t in self._params.items() if n.startswith(prefix))

    def state(self) -> "OrderedDict[str, np.ndarray]":
        return OrderedDict((n, t.data.copy()) for n, t in self._params.items())

    def load_state(self, state) -> None:
        missing = set(self._params) - set(state)
        extra = set(state) - set(self._params)
        if missing or extra:
            raise KeyError(f"checkpoint mismatch: missing={sorted(missing)} extra={sorted(extra)}")
        for name, value in state.items():
            t = self._params[name]
            if t.data.shape != value.shape:
                raise ShapeError(f"{name}: checkpoint shape {value.shape} != {t.data.shape}")
            t.data[...] = value


CHECKPOINT_MAGIC = b"TFD1"


def save_checkpoint(state, path) -> None:
    """Write ``name -> array`` pairs in the TFD1 layout (little-endian)."""
    chunks = [CHECKPOINT_MAGIC]
    for name, value in state.items():
        raw = name.encode("utf-8")
        arr = np.asarray(value, dtype="<f8")  # tobytes() is C-order; keeps rank 0
        chunks.append(struct.pack("<I", len(raw)))
        chunks.append(raw)
        chunks.append(struct.pack("<I", arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        chunks.append(arr.tobytes())
    Path(path).write_bytes(b"".join(chunks))


def load_checkpoint(path) -> "OrderedDict[str, np.ndarray]":
    blob = Path(path).read_bytes()
    if blob[:4] != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: bad magic {blob[:4]!r}")
    out: OrderedDict[str, np.ndarray] = OrderedDict()
    pos = 4
    try:
        while pos < len(blob):
            (nlen,) = struct.unpack_from("<I", blob, pos)
            pos += 4
            name = blob[pos : pos + nlen].decode("utf-8")
            pos += nlen
            (rank,) = struct.unpack_from("<I", blob, pos)
            pos += 4
            shape = struct.unpack_from(f"<{rank}Q", blob, pos)
            pos += 8 * rank
            count = int(np.prod(shape, dtype=np.int64))
            if pos + 8 * count > len(blob):
                raise ValueError(f"{path}: truncated data for {name!r} at byte {pos}")
            out[name] = np.frombuffer(blob, dtype="<f8", count=count, offset=pos).reshape(shape).astype(DTYPE)
            pos += 8 * count
    except struct.error as exc:
        raise ValueError(f"{path}: truncated header at byte {pos}") from exc
    return out


# --------------------------------------------------------------------------
# elementwise


def _check_same(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_same(a, b, "add")
    return _record(a.data + b.data, (a, b), lambda g: (g, g))


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_same(a, b, "sub")
    return _record(a.data - b.data, (a, b), lambda g: (g, -g))


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_same(a, b, "mul")
    ad, bd = a.data, b.data
    return _record(ad * bd, (a, b), lambda g: (g * bd, g * ad))


def scale(a: Tensor, c: float) -> Tensor:
    return _record(a.data * c, (a,), lambda g: (g * c,))


def add_scalar(a: Tensor, c: float) -> Tensor:
    return _record(a.data + c, (a,), lambda g: (g,))


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return _record(np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,))


def _sigmoid_np(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(a: Tensor) -> Tensor:
    s = _sigmoid_np(a.data)
    return _record(s, (a,), lambda g: (g * s * (1.0 - s),))


def absolute(a: Tensor) -> Tensor:
    sgn = np.sign(a.data)
    return _record(np.abs(a.data), (a,), lambda g: (g * sgn,))


def sqrt(a: Tensor, eps: float = 0.0) -> Tensor:
    r = np.sqrt(a.data + eps)
    return _record(r, (a,), lambda g: (g * 0.5 / r,))


def square(a: Tensor) -> Tensor:
    ad = a.data
    return _record(ad * ad, (a,), lambda g: (2.0 * g * ad,))


_ELEMENTWISE = {
    "add": add,
    "sub": sub,
    "mul": mul,
    "relu": relu,
    "sigmoid": sigmoid,
    "abs": absolute,
}


def elementwise(op: str, a: Tensor, b: Tensor | None = None) -> Tensor:
    fn = _ELEMENTWISE[op]
    if op in ("add", "sub", "mul"):
        if b is None:
            raise ShapeError(f"{op} needs two operands")
        return fn(a, _lift(b, a) if not isinstance(b, Tensor) else b)
    return fn(a)


def where(mask: np.ndarray, a: Tensor, b: Tensor) -> Tensor:
    _check_same(a, b, "where")
    m = np.broadcast_to(np.asarray(mask, dtype=bool), a.shape)
    return _record(np.where(m, a.data, b.data), (a, b), lambda g: (g * m, g * ~m))


# --------------------------------------------------------------------------
# reductions and reshaping


def sum_all(a: Tensor) -> Tensor:
    shape = a.shape
    return _record(np.array(a.data.sum()), (a,), lambda g: (np.full(shape, float(g)),))


def mean_all(a: Tensor) -> Tensor:
    shape, n = a.shape, a.data.size
    return _record(np.array(a.data.mean()), (a,), lambda g: (np.full(shape, float(g) / n),))


def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    old = a.shape
    return _record(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),))


def gap(x: Tensor) -> Tensor:
    """Global average pooling N×C×H×W -> N×C×1×1."""
    n, c, h, w = x.shape
    inv = 1.0 / (h * w)
    out = x.data.mean(axis=(2, 3), keepdims=True)
    return _record(out, (x,), lambda g: (np.broadcast_to(g * inv, (n, c, h, w)).copy(),))


def concat(parts: Sequence[Tensor], axis: int = 1) -> Tensor:
    sizes = [p.shape[axis] for p in parts]
    splits = np.cumsum(sizes)[:-1]
    out = np.concatenate([p.data for p in parts], axis=axis)
    return _record(out, tuple(parts), lambda g: tuple(np.split(g, splits, axis=axis)))


def take_batch(x: Tensor, idx: np.ndarray) -> Tensor:
    idx = np.asarray(idx, dtype=np.int64)
    shape = x.shape

    def bwd(g):
        full = np.zeros(shape)
        np.add.at(full, idx, g)
        return (full,)

    return _record(x.data[idx], (x,), bwd)


def put_batch(base: Tensor, idx: np.ndarray, rows: Tensor) -> Tensor:
    """Copy of ``base`` with batch rows ``idx`` replaced by ``rows``."""
    idx = np.asarray(idx, dtype=np.int64)
    out = base.data.copy()
    out[idx] = rows.data

    def bwd(g):
        gb = g.copy()
        gb[idx] = 0.0
        return gb, g[idx]

    return _record(out, (base, rows), bwd)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """2D matrix product."""
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data
    return _record(ad @ bd, (a, b), lambda g: (g @ bd.T, ad.T @ g))


def add_rowvec(a: Tensor, bias: Tensor) -> Tensor:
    """``a`` (N×F) plus a length-F bias on every row."""
    if a.data.ndim != 2 or bias.shape != (a.shape[1],):
        raise ShapeError(f"add_rowvec: {a.shape} + {bias.shape}")
    return _record(a.data + bias.data, (a, bias), lambda g: (g, g.sum(axis=0)))


def channel_scale(x: Tensor, s: Tensor) -> Tensor:
    """Multiply N×C×H×W by per-sample-per-channel factors of shape N×C."""
    n, c = x.shape[:2]
    if s.shape != (n, c):
        raise ShapeError(f"channel_scale: factors {s.shape} for input {x.shape}")
    xd, sd = x.data, s.data[:, :, None, None]
    return _record(xd * sd, (x, s), lambda g: (g * sd, (g * xd).sum(axis=(2, 3))))


def upsample_nearest2x(x: Tensor) -> Tensor:
    n, c, h, w = x.shape
    out = np.repeat(np.repeat(x.data, 2, axis=2), 2, axis=3)
    return _record(out, (x,), lambda g: (g.reshape(n, c, h, 2, w, 2).sum(axis=(3, 5)),))


# --------------------------------------------------------------------------
# convolution


def _out_size(size: int, k: int, stride: int, pad: int) -> int:
    return (size + 2 * pad - k) // stride + 1


def conv2d(x: Tensor, w: Tensor, b: Tensor | None = None, stride: int = 1, pad: int | None = None) -> Tensor:
    """Cross-correlation, N×Cin×H×W with Cout×Cin×k×k weights."""
    n, cin, h, wd = x.shape
    cout, wcin, k, k2 = w.shape
    if wcin != cin or k != k2:
        raise ShapeError(f"conv2d: input {x.shape} incompatible with weight {w.shape}")
    if k % 2 == 0:
        raise ShapeError(f"conv2d: kernel size must be odd, got {k}")
    if b is not None and b.shape != (cout,):
        raise ShapeError(f"conv2d: bias {b.shape} for {cout} output channels")
    if pad is None:
        pad = (k - 1) // 2
    ho, wo = _out_size(h, k, stride, pad), _out_size(wd, k, stride, pad)
    xp = np.pad(x.data, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x.data
    # channels-first columns (Cin*k*k, N*Ho*Wo) keep both GEMMs contiguous
    if k == 1:
        cols = xp[:, :, ::stride, ::stride][:, :, :ho, :wo].transpose(1, 0, 2, 3).reshape(cin, -1)
    else:
        win = sliding_window_view(xp, (k, k), axis=(2, 3))[:, :, ::stride, ::stride][:, :, :ho, :wo]
        cols = win.transpose(1, 4, 5, 0, 2, 3).reshape(cin * k * k, -1)
    wmat = w.data.reshape(cout, -1)
    out = wmat @ cols
    if b is not None:
        out += b.data[:, None]
    out = out.reshape(cout, n, ho, wo).transpose(1, 0, 2, 3)

    def bwd(g):
        gt = g.transpose(1, 0, 2, 3).reshape(cout, -1)
        gw = (gt @ cols.T).reshape(w.shape)
        gb = gt.sum(axis=1) if b is not None else None
        gx = None
        if x.tracked:
            gcols = (wmat.T @ gt).reshape(cin, k, k, n, ho, wo)
            gxp = np.zeros((cin, n) + xp.shape[2:])
            for i in range(k):
                for j in range(k):
                    gxp[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride] += gcols[:, i, j]
            gx = gxp[:, :, pad : pad + h, pad : pad + wd] if pad else gxp
            gx = gx.transpose(1, 0, 2, 3)
        return (gx, gw, gb) if b is not None else (gx, gw)

    parents = (x, w, b) if b is not None else (x, w)
    return _record(np.ascontiguousarray(out), parents, bwd)


def depthwise_conv2d(x: Tensor, w: Tensor, b: Tensor | None = None, stride: int = 1) -> Tensor:
    """Per-channel 3×3 cross-correlation with padding 1; ``w`` is C×1×3×3."""
    n, c, h, wd = x.shape
    if w.shape != (c, 1, 3, 3):
        raise ShapeError(f"depthwise_conv2d: weight {w.shape} for input with {c} channels")
    ho, wo = _out_size(h, 3, stride, 1), _out_size(wd, 3, stride, 1)
    xp = np.pad(x.data, ((0, 0), (0, 0), (1, 1), (1, 1)))
    kern = w.data[:, 0]
    out = np.zeros((n, c, ho, wo))
    for i in range(3):
        for j in range(3):
            out += xp[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride] * kern[:, i, j][:, None, None]
    if b is not None:
        out += b.data[:, None, None]

    def bwd(g):
        gxp = np.zeros(xp.shape)
        gw = np.zeros((c, 1, 3, 3))
        for i in range(3):
            for j in range(3):
                view = xp[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride]
                gw[:, 0, i, j] = (g * view).sum(axis=(0, 2, 3))
                gxp[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride] += g * kern[:, i, j][:, None, None]
        gx = gxp[:, :, 1 : 1 + h, 1 : 1 + wd]
        if b is not None:
            return gx, gw, g.sum(axis=(0, 2, 3))
        return gx, gw

    parents = (x, w, b) if b is not None else (x, w)
    return _record(out, parents, bwd)


# --------------------------------------------------------------------------
# normalization and attention


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-6) -> Tensor:
    """Normalize each sample over (C, H, W), then per-channel affine."""
    n, c, h, w = x.shape
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeError(f"layer_norm: affine {gamma.shape}/{beta.shape} for {c} channels")
    m = c * h * w
    mu = x.data.mean(axis=(1, 2, 3), keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=(1, 2, 3), keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    gd = gamma.data[None, :, None, None]
    out = xhat * gd + beta.data[None, :, None, None]

    def bwd(g):
        ggamma = (g * xhat).sum(axis=(0, 2, 3))
        gbeta = g.sum(axis=(0, 2, 3))
        dxhat = g * gd
        s1 = dxhat.sum(axis=(1, 2, 3), keepdims=True)
        s2 = (dxhat * xhat).sum(axis=(1, 2, 3), keepdims=True)
        gx = inv / m * (m * dxhat - s1 - xhat * s2)
        return gx, ggamma, gbeta

    return _record(out, (x, gamma, beta), bwd)


def channel_attention(x: Tensor, w1: Tensor, w2: Tensor) -> Tensor:
    """Squeeze-excite: x * sigmoid(w2 relu(w1 gap(x))) per channel."""
    n, c = x.shape[:2]
    if w1.shape[1] != c or w2.shape != (c, w1.shape[0]):
        raise ShapeError(f"channel_attention: weights {w1.shape}, {w2.shape} for {c} channels")
    pooled = reshape(gap(x), (n, c))
    hidden = relu(matmul(pooled, transpose2d(w1)))
    s = sigmoid(matmul(hidden, transpose2d(w2)))
    return channel_scale(x, s)


def transpose2d(a: Tensor) -> Tensor:
    return _record(a.data.T.copy(), (a,), lambda g: (g.T,))


# --------------------------------------------------------------------------
# losses


def l1_mean(a: Tensor, b: Tensor) -> Tensor:
    _check_same(a, b, "l1_mean")
    diff = a.data - b.data
    n = diff.size
    sgn = np.sign(diff)
    return _record(np.array(np.abs(diff).mean()), (a, b), lambda g: (g * sgn / n, -g * sgn / n))


def log_softmax_np(logits: np.ndarray) -> np.ndarray:
    mx = logits.max(axis=1, keepdims=True)
    z = logits - mx
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


def softmax_np(logits: np.ndarray) -> np.ndarray:
    return np.exp(log_softmax_np(logits))


def cross_entropy(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean negative log-likelihood of integer ``labels`` under softmax(logits)."""
    labels = np.asarray(labels, dtype=np.int64)
    n = logits.shape[0]
    if logits.data.ndim != 2 or labels.shape != (n,):
        raise ShapeError(f"cross_entropy: logits {logits.shape}, labels {labels.shape}")
    lsm = log_softmax_np(logits.data)
    loss = -lsm[np.arange(n), labels].mean()

    def bwd(g):
        p = np.exp(lsm)
        p[np.arange(n), labels] -= 1.0
        return (p * (float(g) / n),)

    return _record(np.array(loss), (logits,), bwd)
