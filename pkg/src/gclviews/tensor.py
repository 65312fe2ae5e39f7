"""Dense reverse-mode autodiff on top of numpy.

Every operation records its parents and a closure mapping the upstream
gradient to per-parent gradients. The tape is rebuilt on every forward pass
and lives only as long as the output tensors reference it.
"""
from __future__ import annotations

import contextlib
import hashlib
import json
import struct
from collections import OrderedDict
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from . import kernels

DTYPE = np.float64

_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable tape recording inside the block."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def is_grad_enabled() -> bool:
    return _grad_enabled


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "op", "__weakref__")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=DTYPE)
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable | None = None
        self.op = "leaf"

    # construction helpers -------------------------------------------------
    @staticmethod
    def _make(data, parents: Sequence["Tensor"], backward: Callable, op: str) -> "Tensor":
        out = Tensor(data)
        if _grad_enabled and any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = tuple(parents)
            out._backward = backward
        out.op = op
        return out

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def T(self) -> "Tensor":
        return transpose(self)

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ValueError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor({np.array2string(self.data, precision=4)}{flag})"

    def __len__(self) -> int:
        return len(self.data)

    # arithmetic -----------------------------------------------------------
    def __add__(self, other):
        return elementwise("add", self, other)

    def __radd__(self, other):
        return elementwise("add", as_tensor(other), self)

    def __sub__(self, other):
        return elementwise("sub", self, other)

    def __rsub__(self, other):
        return elementwise("sub", as_tensor(other), self)

    def __mul__(self, other):
        return elementwise("mul", self, other)

    def __rmul__(self, other):
        return elementwise("mul", as_tensor(other), self)

    def __truediv__(self, other):
        return elementwise("div", self, other)

    def __rtruediv__(self, other):
        return elementwise("div", as_tensor(other), self)

    def __neg__(self):
        return elementwise("neg", self)

    def __pow__(self, exponent):
        return elementwise("pow", self, exponent)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return getitem(self, key)

    def exp(self):
        return elementwise("exp", self)

    def log(self):
        return elementwise("log", self)

    def relu(self):
        return elementwise("relu", self)

    def sqrt(self):
        return elementwise("pow", self, 0.5)

    def sum(self, axis=None, keepdims: bool = False):
        return tensor_sum(self, axis, keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        return tensor_mean(self, axis, keepdims)

    def reshape(self, *shape):
        return reshape(self, shape[0] if len(shape) == 1 and isinstance(shape[0], tuple) else shape)

    def backward(self) -> None:
        backward(self)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


class Parameter(Tensor):
    """Trainable leaf tensor with a registry name."""

    __slots__ = ("name",)

    def __init__(self, data, name: str = ""):
        super().__init__(np.array(data, dtype=DTYPE, copy=True), requires_grad=True)
        self.name = name


# ---------------------------------------------------------------------------
# backward pass


def _topo_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))
    return order


def backward(root: Tensor) -> None:
    """Accumulate d(root)/d(t) into ``t.grad`` for every reachable requires_grad tensor."""
    if root.data.size != 1:
        raise ValueError(f"backward() needs a scalar root, got shape {root.shape}")
    if not root.requires_grad:
        return
    grads: dict[int, np.ndarray] = {id(root): np.ones_like(root.data)}
    for node in reversed(_topo_order(root)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        node.grad = g.copy() if node.grad is None else node.grad + g
        if node._backward is None:
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg


# ---------------------------------------------------------------------------
# elementwise


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _broadcast_shape(a: Tensor, b: Tensor, op: str) -> tuple[int, ...]:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ValueError(f"{op}: shapes {a.shape} and {b.shape} are not broadcastable") from None


UNARY = ("neg", "exp", "log", "relu")
BINARY = ("add", "sub", "mul", "div", "pow")


def elementwise(op_kind: str, a, b=None) -> Tensor:
    """Apply ``op_kind`` to ``a`` (and ``b`` for binary kinds) with numpy broadcasting."""
    a = as_tensor(a)
    if op_kind in UNARY:
        if b is not None:
            raise ValueError(f"{op_kind} is unary")
        return _unary(op_kind, a)
    if op_kind not in BINARY:
        raise ValueError(f"unknown elementwise op {op_kind!r}")
    if b is None:
        raise ValueError(f"{op_kind} needs two operands")
    if op_kind == "pow" and not isinstance(b, Tensor):
        return _pow_scalar(a, float(b))
    b = as_tensor(b)
    _broadcast_shape(a, b, op_kind)
    x, y = a.data, b.data
    sa, sb = a.shape, b.shape

    if op_kind == "add":
        return Tensor._make(x + y, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)), "add")
    if op_kind == "sub":
        return Tensor._make(x - y, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)), "sub")
    if op_kind == "mul":
        return Tensor._make(x * y, (a, b), lambda g: (_unbroadcast(g * y, sa), _unbroadcast(g * x, sb)), "mul")
    if op_kind == "div":
        out = x / y
        return Tensor._make(
            out, (a, b), lambda g: (_unbroadcast(g / y, sa), _unbroadcast(-g * out / y, sb)), "div"
        )
    # tensor exponent
    if b.requires_grad and np.any(x <= 0):
        raise ValueError("pow with a differentiable exponent needs a strictly positive base")
    out = x**y

    def pow_back(g):
        gb = None
        if b.requires_grad:
            gb = _unbroadcast(g * out * np.log(x), sb)
        return _unbroadcast(g * y * x ** (y - 1), sa), gb

    return Tensor._make(out, (a, b), pow_back, "pow")


def _pow_scalar(a: Tensor, p: float) -> Tensor:
    x = a.data
    out = x**p
    return Tensor._make(out, (a,), lambda g: (g * p * x ** (p - 1),), "pow")


def _unary(op_kind: str, a: Tensor) -> Tensor:
    x = a.data
    if op_kind == "neg":
        return Tensor._make(-x, (a,), lambda g: (-g,), "neg")
    if op_kind == "exp":
        out = np.exp(x)
        return Tensor._make(out, (a,), lambda g: (g * out,), "exp")
    if op_kind == "log":
        if a.requires_grad and _grad_enabled and np.any(x <= 0):
            raise ValueError("log of a non-positive value under gradient; clamp the input first")
        with np.errstate(divide="ignore", invalid="ignore"):
            out = np.log(x)
        return Tensor._make(out, (a,), lambda g: (g / x,), "log")
    # relu; derivative at 0 is taken as 0
    mask = x > 0
    return Tensor._make(np.where(mask, x, 0.0), (a,), lambda g: (g * mask,), "relu")


def relu(x: Tensor) -> Tensor:
    return elementwise("relu", x)


def exp(x: Tensor) -> Tensor:
    return elementwise("exp", x)


def log(x: Tensor) -> Tensor:
    return elementwise("log", x)


# ---------------------------------------------------------------------------
# shape & reduction


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    x, y = a.data, b.data
    return Tensor._make(x @ y, (a, b), lambda g: (g @ y.T, x.T @ g), "matmul")


def transpose(a: Tensor) -> Tensor:
    return Tensor._make(a.data.T, (a,), lambda g: (g.T,), "transpose")


def reshape(a: Tensor, shape) -> Tensor:
    old = a.shape
    return Tensor._make(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),), "reshape")


def tensor_sum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    shape = a.shape
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def back(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return Tensor._make(out, (a,), back, "sum")


def tensor_mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    n = a.data.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return tensor_sum(a, axis, keepdims) * (1.0 / n)


def row_sum(a: Tensor) -> Tensor:
    return tensor_sum(a, axis=1)


def row_mean(a: Tensor) -> Tensor:
    return tensor_mean(a, axis=1)


def getitem(a: Tensor, key) -> Tensor:
    shape = a.shape

    def back(g):
        full = np.zeros(shape, dtype=DTYPE)
        np.add.at(full, key, g)
        return (full,)

    return Tensor._make(a.data[key], (a,), back, "getitem")


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum(sizes)[:-1]
    return Tensor._make(
        np.concatenate([t.data for t in tensors], axis=axis),
        tensors,
        lambda g: tuple(np.split(g, bounds, axis=axis)),
        "concat",
    )


def index_rows(a: Tensor, index) -> Tensor:
    """Gather rows ``a[index]``; gradients scatter back with a sum."""
    index = np.asarray(index, dtype=np.int64)
    n = a.shape[0]
    if a.ndim == 2:
        back = lambda g: (kernels.scatter_add_rows(g, index, n),)  # noqa: E731
    else:
        def back(g):
            full = np.zeros(a.shape, dtype=DTYPE)
            np.add.at(full, index, g)
            return (full,)
    return Tensor._make(a.data[index], (a,), back, "index_rows")


def scatter_sum(src: Tensor, index, out_size: int) -> Tensor:
    """``out[i] = sum of src[j] over j with index[j] == i``."""
    src = as_tensor(src)
    index = np.asarray(index, dtype=np.int64).reshape(-1)
    if src.ndim != 2:
        raise ValueError(f"scatter_sum expects a 2-d source, got shape {src.shape}")
    if index.shape[0] != src.shape[0]:
        raise ValueError(f"scatter_sum: index length {index.shape[0]} != source rows {src.shape[0]}")
    if index.size and (index.min() < 0 or index.max() >= out_size):
        raise IndexError(f"scatter_sum: index out of range for out_size {out_size}")
    out = kernels.scatter_add_rows(src.data, index, out_size)
    return Tensor._make(out, (src,), lambda g: (g[index],), "scatter_sum")


def neighbor_sum(h: Tensor, src, dst) -> Tensor:
    """Sum of ``h[src[e]]`` over arcs e landing in each node; fused gather+scatter."""
    src = np.asarray(src, dtype=np.int64)
    dst = np.asarray(dst, dtype=np.int64)
    n = h.shape[0]
    out = kernels.neighbor_sum(h.data, src, dst, n)
    return Tensor._make(out, (h,), lambda g: (kernels.neighbor_sum(g, dst, src, n),), "neighbor_sum")


def segment_sum(x: Tensor, segment_ids, n_segments: int) -> Tensor:
    return scatter_sum(x, segment_ids, n_segments)


def segment_mean(x: Tensor, segment_ids, n_segments: int) -> Tensor:
    counts = np.bincount(np.asarray(segment_ids, dtype=np.int64), minlength=n_segments).astype(DTYPE)
    return scatter_sum(x, segment_ids, n_segments) * (1.0 / np.maximum(counts, 1.0))[:, None]


# ---------------------------------------------------------------------------
# softmax family


def softmax_rows(x: Tensor) -> Tensor:
    x = as_tensor(x)
    if x.ndim != 2 or x.shape[1] < 1:
        raise ValueError(f"softmax_rows expects an n x c matrix with c >= 1, got {x.shape}")
    z = x.data - x.data.max(axis=1, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=1, keepdims=True)
    return Tensor._make(y, (x,), lambda g: (y * (g - (g * y).sum(axis=1, keepdims=True)),), "softmax")


def log_softmax(x: Tensor, exclude: np.ndarray | None = None) -> Tensor:
    """Row-wise log-softmax. Entries flagged in ``exclude`` are left out of the normalizer
    and come back as -inf with zero gradient."""
    x = as_tensor(x)
    if x.ndim != 2 or x.shape[1] < 1:
        raise ValueError(f"log_softmax expects an n x c matrix with c >= 1, got {x.shape}")
    z = x.data if exclude is None else np.where(exclude, -np.inf, x.data)
    m = z.max(axis=1, keepdims=True)
    with np.errstate(invalid="ignore"):
        shifted = z - m
    lse = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    out = shifted - lse
    p = np.exp(out)

    def back(g):
        gg = np.where(np.isfinite(out), g, 0.0)
        return (gg - p * gg.sum(axis=1, keepdims=True),)

    return Tensor._make(out, (x,), back, "log_softmax")


def pick(x: Tensor, cols) -> Tensor:
    """``x[i, cols[i]]`` for every row i."""
    cols = np.asarray(cols, dtype=np.int64)
    rows = np.arange(x.shape[0])
    shape = x.shape

    def back(g):
        full = np.zeros(shape, dtype=DTYPE)
        full[rows, cols] = g
        return (full,)

    return Tensor._make(x.data[rows, cols], (x,), back, "pick")


def cross_entropy(logits: Tensor, labels) -> Tensor:
    """Batch-mean negative log-likelihood of integer ``labels``."""
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    if logits.ndim != 2 or labels.shape[0] != logits.shape[0]:
        raise ValueError(f"cross_entropy: logits {logits.shape} vs {labels.shape[0]} labels")
    if labels.size and (labels.min() < 0 or labels.max() >= logits.shape[1]):
        raise ValueError(f"cross_entropy: label out of range for {logits.shape[1]} classes")
    return -pick(log_softmax(logits), labels).mean()


def row_norms(x: Tensor) -> Tensor:
    return (x * x).sum(axis=1, keepdims=True) ** 0.5


def normalize_rows(x: Tensor, eps: float = 1e-12) -> Tensor:
    norms = np.sqrt((x.data * x.data).sum(axis=1))
    if np.any(norms == 0.0):
        bad = int(np.flatnonzero(norms == 0.0)[0])
        raise ValueError(f"zero-norm row {bad} cannot be normalized")
    return x / (row_norms(x) + eps)


def cosine_rows(a: Tensor, b: Tensor, eps: float = 1e-12) -> Tensor:
    """Row-wise cosine similarity of two equally shaped matrices."""
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise ValueError(f"cosine_rows: shapes {a.shape} and {b.shape} differ")
    return (normalize_rows(a, eps) * normalize_rows(b, eps)).sum(axis=1)


# ---------------------------------------------------------------------------
# parameters, optimizer, checkpoints


class ModelParams:
    """Flat name -> Parameter registry."""

    def __init__(self):
        self._params: "OrderedDict[str, Parameter]" = OrderedDict()

    def add(self, name: str, value) -> Parameter:
        if name in self._params:
            raise KeyError(f"duplicate parameter name {name!r}")
        p = Parameter(value, name)
        self._params[name] = p
        return p

    def update(self, other: "ModelParams") -> None:
        for name, p in other.items():
            if name in self._params:
                raise KeyError(f"duplicate parameter name {name!r}")
            self._params[name] = p

    def __getitem__(self, name: str) -> Parameter:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __iter__(self):
        return iter(self._params.values())

    def __len__(self) -> int:
        return len(self._params)

    def names(self) -> list[str]:
        return list(self._params)

    def items(self):
        return self._params.items()

    def zero_grad(self) -> None:
        for p in self._params.values():
            p.grad = None

    def state_dict(self) -> "OrderedDict[str, np.ndarray]":
        return OrderedDict((n, p.data.copy()) for n, p in self._params.items())

    def load_state_dict(self, state) -> None:
        missing = set(self._params) - set(state)
        extra = set(state) - set(self._params)
        if missing or extra:
            raise ValueError(f"state mismatch: missing={sorted(missing)} unexpected={sorted(extra)}")
        for name, p in self._params.items():
            arr = np.asarray(state[name], dtype=DTYPE)
            if arr.shape != p.shape:
                raise ValueError(f"{name}: checkpoint shape {arr.shape} != model shape {p.shape}")
            p.data = arr.copy()

    def checksum(self) -> str:
        h = hashlib.sha256()
        for name, p in self._params.items():
            h.update(name.encode())
            h.update(np.ascontiguousarray(p.data).tobytes())
        return h.hexdigest()

    def num_values(self) -> int:
        return sum(p.size for p in self._params.values())


def adam_step(params: Iterable[Parameter], lr: float, betas: tuple[float, float], eps: float, state: dict) -> None:
    """One in-place Adam update with bias correction. Missing gradients count as zero."""
    b1, b2 = betas
    t = state.get("t", 0) + 1
    state["t"] = t
    m_all = state.setdefault("m", {})
    v_all = state.setdefault("v", {})
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t
    for p in params:
        g = p.grad if p.grad is not None else np.zeros_like(p.data)
        key = id(p)
        m = m_all.get(key)
        if m is None:
            m = m_all[key] = np.zeros_like(p.data)
            v_all[key] = np.zeros_like(p.data)
        v = v_all[key]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p.data = p.data - lr * (m / c1) / (np.sqrt(v / c2) + eps)


class Adam:
    def __init__(self, params: Iterable[Parameter], lr: float = 1e-3, betas=(0.9, 0.999), eps: float = 1e-8):
        self.params = list(params)
        self.lr = lr
        self.betas = tuple(betas)
        self.eps = eps
        self.state: dict = {}

    def step(self) -> None:
        adam_step(self.params, self.lr, self.betas, self.eps, self.state)

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None


CKPT_MAGIC = b"GCLVCKP1"


def save_checkpoint(path, params: ModelParams, meta: dict | None = None) -> None:
    """Write ``params`` as ``MAGIC | u64 manifest_len | manifest JSON | <f8 payload``."""
    entries, offset = [], 0
    for name, p in params.items():
        entries.append({"name": name, "shape": list(p.shape), "offset": offset})
        offset += p.size * 8
    manifest = json.dumps({"dtype": "<f8", "params": entries, "meta": meta or {}}, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(CKPT_MAGIC)
        fh.write(struct.pack("<Q", len(manifest)))
        fh.write(manifest)
        for p in params:
            fh.write(np.ascontiguousarray(p.data, dtype="<f8").tobytes())


def load_checkpoint(path) -> tuple["OrderedDict[str, np.ndarray]", dict]:
    raw = Path(path).read_bytes()
    if raw[:8] != CKPT_MAGIC:
        raise ValueError(f"{path}: not a gclviews checkpoint")
    (n,) = struct.unpack("<Q", raw[8:16])
    manifest = json.loads(raw[16 : 16 + n].decode())
    payload = memoryview(raw)[16 + n :]
    state = OrderedDict()
    for e in manifest["params"]:
        count = int(np.prod(e["shape"], dtype=np.int64))
        start = e["offset"]
        if start + 8 * count > len(payload):
            raise ValueError(f"{path}: truncated payload for {e['name']}")
        arr = np.frombuffer(payload[start : start + 8 * count], dtype="<f8").astype(DTYPE)
        state[e["name"]] = arr.reshape(e["shape"])
    return state, manifest.get("meta", {})


# ---------------------------------------------------------------------------
# numerical gradient checking


def numerical_grad(fn: Callable[[], Tensor], x: Tensor, h: float = 1e-5) -> np.ndarray:
    """Central finite differences of scalar ``fn()`` with respect to ``x.data``."""
    x.data = np.ascontiguousarray(x.data)
    grad = np.zeros_like(x.data)
    flat = x.data.reshape(-1)
    gflat = grad.reshape(-1)
    with no_grad():
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            fp = fn().item()
            flat[i] = orig - h
            fm = fn().item()
            flat[i] = orig
            gflat[i] = (fp - fm) / (2 * h)
    return grad


def gradcheck(fn: Callable[[], Tensor], inputs: Sequence[Tensor], h: float = 1e-5, rtol: float = 1e-4, atol: float = 1e-7):
    """Compare backward() against central differences for every tensor in ``inputs``.

    Returns ``(ok, worst)`` where ``worst`` is the largest ratio of error to allowed error.
    """
    for t in inputs:
        t.grad = None
    out = fn()
    backward(out)
    worst = 0.0
    for t in inputs:
        analytic = t.grad if t.grad is not None else np.zeros_like(t.data)
        numeric = numerical_grad(fn, t, h)
        allowed = np.maximum(atol, rtol * np.maximum(np.abs(analytic), np.abs(numeric)))
        if not (np.all(np.isfinite(analytic)) and np.all(np.isfinite(numeric))):
            return False, float("inf")
        worst = max(worst, float(np.max(np.abs(analytic - numeric) / allowed, initial=0.0)))
    return worst <= 1.0, worst
