"""Dense float64 tensors with hand-written reverse-mode gradients.

Every differentiable operation is a forward function that returns a
:class:`Tensor` plus a closure computing the gradients of its parents from
the gradient of its output.  ``Tensor.backward`` walks the recorded parents
in reverse topological order; there is no operator overloading and no
broadcasting beyond what the tracker needs.
"""
from __future__ import annotations

import math
import struct
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

FOCAL_EPS = 1e-7


class ContractError(ValueError):
    """Raised when an operation receives arguments outside its contract."""


class NonFiniteError(ContractError):
    """A tensor would hold inf or nan."""


class DivergenceError(RuntimeError):
    """Raised when an optimisation step meets non-finite numbers."""


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, _parents=(), _backward=None):
        arr = np.array(data, dtype=np.float64)
        if not np.isfinite(arr).all():
            raise NonFiniteError(f"non-finite entries in tensor of shape {arr.shape}")
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = _parents
        self._backward = _backward

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def __len__(self) -> int:
        return self.data.shape[0]

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError("item() needs a single-element tensor")
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def backward(self, grad: np.ndarray | None = None) -> None:
        """Accumulate d(self)/d(leaf) into ``.grad`` of every leaf requiring grad."""
        if not self.requires_grad:
            return
        if grad is None:
            if self.data.size != 1:
                raise ContractError("backward() without a seed needs a scalar")
            grad = np.ones_like(self.data)
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
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
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
        grads: dict[int, np.ndarray] = {id(self): np.asarray(grad, dtype=np.float64)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            for p, pg in zip(node._parents, node._backward(g)):
                if pg is None or not p.requires_grad:
                    continue
                if id(p) in grads:
                    grads[id(p)] = grads[id(p)] + pg
                else:
                    grads[id(p)] = pg


def constant(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _result(data: np.ndarray, parents: Sequence[Tensor], backward: Callable) -> Tensor:
    if any(p.requires_grad for p in parents):
        return Tensor(data, True, tuple(parents), backward)
    return Tensor(data)


def _require(cond: bool, msg: str) -> None:
    if not cond:
        raise ContractError(msg)


# ---------------------------------------------------------------- elementwise


def add(a: Tensor, b: Tensor) -> Tensor:
    _require(a.shape == b.shape, f"add: shape mismatch {a.shape} vs {b.shape}")
    return _result(a.data + b.data, (a, b), lambda g: (g, g))


def sub(a: Tensor, b: Tensor) -> Tensor:
    _require(a.shape == b.shape, f"sub: shape mismatch {a.shape} vs {b.shape}")
    return _result(a.data - b.data, (a, b), lambda g: (g, -g))


def add_many(items: Iterable[Tensor]) -> Tensor:
    items = list(items)
    _require(len(items) > 0, "add_many: nothing to add")
    out = items[0]
    for t in items[1:]:
        out = add(out, t)
    return out


def scale(a: Tensor, s: float) -> Tensor:
    s = float(s)
    return _result(a.data * s, (a,), lambda g: (g * s,))


def mul_const(a: Tensor, c: np.ndarray) -> Tensor:
    c = np.asarray(c, dtype=np.float64)
    _require(c.shape == a.shape, f"mul_const: shape mismatch {a.shape} vs {c.shape}")
    return _result(a.data * c, (a,), lambda g: (g * c,))


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return _result(np.where(mask, x.data, 0.0), (x,), lambda g: (g * mask,))


def sigmoid_np(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(x: Tensor) -> Tensor:
    y = sigmoid_np(x.data)
    return _result(y, (x,), lambda g: (g * y * (1.0 - y),))


def sum_all(x: Tensor) -> Tensor:
    shape = x.shape
    return _result(np.array(x.data.sum()), (x,), lambda g: (np.full(shape, float(g)),))


# ------------------------------------------------------------------- shaping


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    old = x.shape
    return _result(x.data.reshape(shape), (x,), lambda g: (g.reshape(old),))


def concat_rows(items: Sequence[Tensor]) -> Tensor:
    _require(len(items) > 0, "concat_rows: empty list")
    tail = items[0].shape[1:]
    _require(all(t.shape[1:] == tail for t in items), "concat_rows: trailing shapes differ")
    sizes = [t.shape[0] for t in items]
    bounds = np.cumsum([0] + sizes)

    def back(g):
        return tuple(g[bounds[i]:bounds[i + 1]] for i in range(len(items)))

    return _result(np.concatenate([t.data for t in items], axis=0), items, back)


def concat(items: Sequence[Tensor], axis: int) -> Tensor:
    _require(len(items) > 0, "concat: empty list")
    ndim = items[0].data.ndim
    ax = axis % ndim
    sizes = [t.shape[ax] for t in items]
    bounds = np.cumsum([0] + sizes)

    def back(g):
        out = []
        for i in range(len(items)):
            sl = [slice(None)] * ndim
            sl[ax] = slice(bounds[i], bounds[i + 1])
            out.append(g[tuple(sl)])
        return tuple(out)

    try:
        data = np.concatenate([t.data for t in items], axis=ax)
    except ValueError as exc:
        raise ContractError(f"concat: {exc}") from None
    return _result(data, items, back)


def repeat_rows(x: Tensor, n: int) -> Tensor:
    """Tile a tensor whose first axis has length 1 to ``n`` rows."""
    _require(x.shape[0] == 1, f"repeat_rows: expects a leading axis of 1, got {x.shape}")
    return _result(np.repeat(x.data, n, axis=0), (x,), lambda g: (g.sum(axis=0, keepdims=True),))


def take_rows(x: Tensor, idx: Sequence[int]) -> Tensor:
    idx = np.asarray(idx, dtype=np.int64).reshape(-1)
    shape = x.shape

    def back(g):
        out = np.zeros(shape)
        np.add.at(out, idx, g)
        return (out,)

    return _result(x.data[idx], (x,), back)


def take_cols(x: Tensor, idx: Sequence[int]) -> Tensor:
    """Select columns of the last axis."""
    idx = np.asarray(idx, dtype=np.int64).reshape(-1)
    shape = x.shape

    def back(g):
        out = np.zeros(shape)
        np.add.at(out, (Ellipsis, idx), g)
        return (out,)

    return _result(x.data[..., idx], (x,), back)


class DetachTape:
    """Records the values crossing :func:`detach` and can replay them in order.

    Finite differences see through stop-gradients; replaying the recorded
    values makes perturbed forward passes treat them as the constants the
    analytic gradient assumes.
    """

    def __init__(self):
        self.values: list[np.ndarray] = []
        self.replaying = False
        self.pos = 0

    def rewind(self) -> None:
        self.replaying, self.pos = True, 0


_tape: DetachTape | None = None


@contextmanager
def detach_tape(tape: DetachTape):
    global _tape
    prev, _tape = _tape, tape
    try:
        yield tape
    finally:
        _tape = prev


def detach(x: Tensor) -> Tensor:
    if _tape is None:
        return Tensor(x.data)
    if not _tape.replaying:
        _tape.values.append(x.data.copy())
        return Tensor(x.data)
    if _tape.pos >= len(_tape.values) or _tape.values[_tape.pos].shape != x.shape:
        raise ContractError("detach replay diverged from the recorded pass")
    value = _tape.values[_tape.pos]
    _tape.pos += 1
    return Tensor(value)


# ------------------------------------------------------------ linear algebra


def matmul(a: Tensor, b: Tensor) -> Tensor:
    _require(a.data.ndim == 2 and b.data.ndim == 2 and a.shape[1] == b.shape[0],
             f"matmul: cannot multiply {a.shape} by {b.shape}")
    A, B = a.data, b.data
    return _result(A @ B, (a, b), lambda g: (g @ B.T, A.T @ g))


def matmul_nt(a: Tensor, b: Tensor) -> Tensor:
    """a @ b.T"""
    _require(a.data.ndim == 2 and b.data.ndim == 2 and a.shape[1] == b.shape[1],
             f"matmul_nt: cannot multiply {a.shape} by {b.shape}^T")
    A, B = a.data, b.data
    return _result(A @ B.T, (a, b), lambda g: (g @ B, g.T @ A))


def linear(x: Tensor, W: Tensor, b: Tensor | None = None) -> Tensor:
    """y = x W + b over the last axis of ``x``; leading axes are batch axes."""
    _require(W.data.ndim == 2, f"linear: weight must be 2-d, got {W.shape}")
    din, dout = W.shape
    _require(x.shape[-1:] == (din,), f"linear: input {x.shape} does not match weight {W.shape}")
    if b is not None:
        _require(b.shape == (dout,), f"linear: bias {b.shape} does not match weight {W.shape}")
    lead = x.shape[:-1]
    X = x.data.reshape(-1, din)
    Wd = W.data
    y = X @ Wd
    if b is not None:
        y = y + b.data

    def back(g):
        G = g.reshape(-1, dout)
        gx = (G @ Wd.T).reshape(lead + (din,))
        gw = X.T @ G
        if b is None:
            return gx, gw
        return gx, gw, G.sum(axis=0)

    parents = (x, W) if b is None else (x, W, b)
    return _result(y.reshape(lead + (dout,)), parents, back)


def softmax_np(M: np.ndarray, mask: np.ndarray | None = None) -> np.ndarray:
    z = np.where(mask, M, -np.inf) if mask is not None else M
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_rows(M: Tensor, mask: np.ndarray | None = None) -> Tensor:
    """Row-wise softmax of a 2-d tensor, stabilised by the row maximum.

    ``mask`` (boolean, same shape) marks admissible entries; masked entries get
    probability exactly zero.  Every row needs at least one admissible entry.
    """
    _require(M.data.ndim == 2, f"softmax_rows: expects 2-d input, got {M.shape}")
    _require(M.shape[0] >= 1 and M.shape[1] >= 1, "softmax_rows: empty row dimension")
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        _require(mask.shape == M.shape, "softmax_rows: mask shape mismatch")
        _require(mask.any(axis=1).all(), "softmax_rows: a row is fully masked")
    P = softmax_np(M.data, mask)

    def back(g):
        return (P * (g - (g * P).sum(axis=1, keepdims=True)),)

    return _result(P, (M,), back)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    d = x.shape[-1]
    _require(gamma.shape == (d,) and beta.shape == (d,), "layer_norm: affine shape mismatch")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * inv
    G = gamma.data

    def back(g):
        gx_hat = g * G
        gx = inv * (gx_hat - gx_hat.mean(axis=-1, keepdims=True)
                    - xhat * (gx_hat * xhat).mean(axis=-1, keepdims=True))
        lead = tuple(range(g.ndim - 1))
        return gx, (g * xhat).sum(axis=lead), g.sum(axis=lead)

    return _result(xhat * G + beta.data, (x, gamma, beta), back)


# --------------------------------------------------------------------- MLPs


@dataclass
class Layer:
    W: Tensor
    b: Tensor


def mlp_forward(x: Tensor, layers: Sequence[Layer], activation: str = "relu") -> Tensor:
    """Linear layers with ``activation`` between them (none after the last)."""
    _require(len(layers) > 0, "mlp_forward: no layers")
    acts = {"relu": relu, "identity": lambda t: t}
    _require(activation in acts, f"mlp_forward: unknown activation {activation!r}")
    h = x
    for i, layer in enumerate(layers):
        h = linear(h, layer.W, layer.b)
        if i < len(layers) - 1:
            h = acts[activation](h)
    return h


# ------------------------------------------------------------------- losses


def focal_loss(p, y, alpha: float, gamma: float) -> np.ndarray:
    """Elementwise sigmoid focal loss on probabilities, clamped to [eps, 1-eps]."""
    p = np.clip(np.asarray(p, dtype=np.float64), FOCAL_EPS, 1.0 - FOCAL_EPS)
    y = np.asarray(y, dtype=np.float64)
    pos = -alpha * (1.0 - p) ** gamma * np.log(p)
    neg = -(1.0 - alpha) * p ** gamma * np.log(1.0 - p)
    return y * pos + (1.0 - y) * neg


def focal_loss_logits(x: Tensor, y: np.ndarray, alpha: float, gamma: float,
                      weight: np.ndarray | None = None) -> Tensor:
    """Summed focal loss of ``sigmoid(x)`` against binary targets ``y``."""
    y = np.asarray(y, dtype=np.float64)
    _require(y.shape == x.shape, f"focal_loss_logits: target {y.shape} vs logits {x.shape}")
    w = np.ones_like(y) if weight is None else np.asarray(weight, dtype=np.float64)
    p = np.clip(sigmoid_np(x.data), FOCAL_EPS, 1.0 - FOCAL_EPS)
    q = 1.0 - p
    value = float((w * focal_loss(p, y, alpha, gamma)).sum())
    d_pos = alpha * gamma * p * q ** gamma * np.log(p) - alpha * q ** (gamma + 1.0)
    d_neg = (1.0 - alpha) * (p ** (gamma + 1.0) - gamma * p ** gamma * q * np.log(q))
    dx = w * (y * d_pos + (1.0 - y) * d_neg)
    return _result(np.array(value), (x,), lambda g: (float(g) * dx,))


def cross_entropy_rows(S: Tensor, Y: np.ndarray, row_weight: np.ndarray | None = None) -> Tensor:
    """-sum_j sum_i Y[j,i] log softmax(S[j])[i]."""
    Y = np.asarray(Y, dtype=np.float64)
    _require(S.data.ndim == 2 and Y.shape == S.shape,
             f"cross_entropy_rows: target {Y.shape} vs scores {S.shape}")
    w = np.ones(S.shape[0]) if row_weight is None else np.asarray(row_weight, dtype=np.float64)
    z = S.data - S.data.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    value = float(-(w[:, None] * Y * logp).sum())
    P = np.exp(logp)
    dS = w[:, None] * (P * Y.sum(axis=1, keepdims=True) - Y)
    return _result(np.array(value), (S,), lambda g: (float(g) * dS,))


def wrap_angle(a):
    """Map angles to (-pi, pi]."""
    a = np.asarray(a, dtype=np.float64)
    out = np.mod(a + math.pi, 2.0 * math.pi) - math.pi
    return np.where(out <= -math.pi, out + 2.0 * math.pi, out)


def l1_box_loss(pred: Tensor, target: np.ndarray, yaw_col: int | None = 6,
                weight: np.ndarray | None = None) -> Tensor:
    """Summed L1 distance; the yaw column uses the wrapped angular difference."""
    target = np.asarray(target, dtype=np.float64)
    _require(target.shape == pred.shape, f"l1_box_loss: target {target.shape} vs pred {pred.shape}")
    diff = pred.data - target
    if yaw_col is not None and diff.size:
        diff[..., yaw_col] = wrap_angle(diff[..., yaw_col])
    w = np.ones(diff.shape[-1]) if weight is None else np.asarray(weight, dtype=np.float64)
    value = float((np.abs(diff) * w).sum())
    d = np.sign(diff) * w
    return _result(np.array(value), (pred,), lambda g: (float(g) * d,))


# ------------------------------------------------------------ parameters


def init_weight(rng: np.random.Generator, din: int, dout: int) -> np.ndarray:
    bound = 1.0 / math.sqrt(din)
    return rng.uniform(-bound, bound, size=(din, dout))


class ParamStore:
    """Named float64 parameters with matching gradient and AdamW moment buffers."""

    def __init__(self):
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}
        self._m: dict[str, np.ndarray] = {}
        self._v: dict[str, np.ndarray] = {}
        self.step = 0

    def add(self, name: str, value) -> None:
        if name in self.params:
            raise ContractError(f"duplicate parameter {name!r}")
        arr = np.array(value, dtype=np.float64)
        if not np.isfinite(arr).all():
            raise ContractError(f"non-finite initial value for {name!r}")
        self.params[name] = arr
        self.grads[name] = np.zeros_like(arr)
        self._m[name] = np.zeros_like(arr)
        self._v[name] = np.zeros_like(arr)

    def add_linear(self, rng: np.random.Generator, prefix: str, din: int, dout: int,
                   bias: bool = True) -> None:
        self.add(f"{prefix}.W", init_weight(rng, din, dout))
        if bias:
            self.add(f"{prefix}.b", np.zeros(dout))

    def __contains__(self, name: str) -> bool:
        return name in self.params

    def names(self) -> list[str]:
        return list(self.params)

    def tensors(self) -> dict[str, Tensor]:
        """Fresh leaf tensors for one forward/backward pass."""
        return {k: Tensor(v, requires_grad=True) for k, v in self.params.items()}

    def constants(self) -> dict[str, Tensor]:
        """Parameters as plain tensors, for forward passes without gradients."""
        return {k: Tensor(v) for k, v in self.params.items()}

    def collect(self, leaves: dict[str, Tensor]) -> None:
        for k, t in leaves.items():
            if t.grad is not None:
                self.grads[k] += t.grad

    def zero_grad(self) -> None:
        for g in self.grads.values():
            g.fill(0.0)

    def num_values(self) -> int:
        return int(sum(v.size for v in self.params.values()))

    def copy(self) -> "ParamStore":
        other = ParamStore()
        for k, v in self.params.items():
            other.add(k, v)
        return other


def adamw_step(store: ParamStore, lr: float, betas: tuple[float, float] = (0.9, 0.999),
               weight_decay: float = 1e-2, eps: float = 1e-8) -> ParamStore:
    """Decoupled weight decay Adam update, applied in place."""
    for name, g in store.grads.items():
        if not np.isfinite(g).all():
            raise DivergenceError(f"non-finite gradient for {name!r}")
    b1, b2 = betas
    store.step += 1
    c1 = 1.0 - b1 ** store.step
    c2 = 1.0 - b2 ** store.step
    for name, p in store.params.items():
        g = store.grads[name]
        m = store._m[name]
        v = store._v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p *= 1.0 - lr * weight_decay
        p -= lr * (m / c1) / (np.sqrt(v / c2) + eps)
        if not np.isfinite(p).all():
            raise DivergenceError(f"non-finite value for {name!r} after step {store.step}")
    return store


# ----------------------------------------------------------- gradient check


@dataclass
class GradCheckResult:
    max_rel_error: float
    location: tuple[int, int] | None
    failure: str | None = None
    checked: int = 0

    @property
    def finite(self) -> bool:
        return self.failure is None

    def passed(self, tol: float) -> bool:
        return self.failure is None and self.max_rel_error < tol


def grad_check(f: Callable[..., Tensor], inputs: Sequence[np.ndarray], h: float = 1e-5,
               seed: int = 0, max_entries: int | None = None) -> GradCheckResult:
    """Compare analytic gradients of ``f`` with central differences.

    ``f`` receives one :class:`Tensor` per input array.  A non-scalar output is
    reduced to a scalar through a fixed random projection.  The error measure is
    ``|analytic - numeric| / max(1, |analytic|)``; ``max_entries`` samples that
    many coordinates per input instead of all of them.  Values passing through
    :func:`detach` are held at their unperturbed values.
    """
    if not 1e-7 <= h <= 1e-3:
        raise ContractError(f"grad_check: step {h} outside [1e-7, 1e-3]")
    rng = np.random.default_rng(seed)
    arrays = [np.array(a, dtype=np.float64) for a in inputs]
    proj: list[np.ndarray] = []

    tape = DetachTape()

    def scalar(arrs, track: bool):
        leaves = [Tensor(a, requires_grad=track) for a in arrs]
        if track:
            with detach_tape(tape):
                out = f(*leaves)
            tape.rewind()
        else:
            tape.pos = 0
            with detach_tape(tape):
                out = f(*leaves)
        if not proj:
            proj.append(rng.standard_normal(out.shape) if out.data.size > 1 else np.ones(out.shape))
        return leaves, sum_all(mul_const(out, proj[0]))

    try:
        leaves, value = scalar(arrays, True)
        value.backward()
    except ContractError as exc:
        return GradCheckResult(math.inf, None, f"forward/backward: {exc}")
    worst, where, count = 0.0, None, 0
    for i, (arr, leaf) in enumerate(zip(arrays, leaves)):
        analytic = leaf.grad if leaf.grad is not None else np.zeros_like(arr)
        flat = np.arange(arr.size)
        if max_entries is not None and arr.size > max_entries:
            flat = rng.choice(arr.size, size=max_entries, replace=False)
        for k in flat:
            bumped = []
            for sign in (1.0, -1.0):
                moved = [a.copy() for a in arrays]
                moved[i].reshape(-1)[k] += sign * h
                try:
                    bumped.append(scalar(moved, False)[1].item())
                except ContractError as exc:
                    return GradCheckResult(math.inf, (i, int(k)), f"perturbed forward: {exc}")
            numeric = (bumped[0] - bumped[1]) / (2.0 * h)
            a = float(analytic.reshape(-1)[k])
            err = abs(a - numeric) / max(1.0, abs(a))
            count += 1
            if err > worst or where is None:
                worst, where = err, (i, int(k))
    return GradCheckResult(worst, where, None, count)


# -------------------------------------------------------------- checkpoints

CHECKPOINT_MAGIC = b"ATCK"
CHECKPOINT_VERSION = 1


def save_checkpoint(path, store: ParamStore, config_text: str = "") -> None:
    cfg = config_text.encode("utf-8")
    chunks = [CHECKPOINT_MAGIC, struct.pack("<II", CHECKPOINT_VERSION, len(cfg)), cfg,
              struct.pack("<I", len(store.params))]
    for name, value in store.params.items():
        raw = name.encode("utf-8")
        chunks.append(struct.pack("<H", len(raw)))
        chunks.append(raw)
        chunks.append(struct.pack("<B", value.ndim))
        chunks.append(struct.pack(f"<{value.ndim}I", *value.shape))
        chunks.append(np.ascontiguousarray(value, dtype="<f8").tobytes())
    with open(path, "wb") as fh:
        fh.write(b"".join(chunks))


def load_checkpoint(path) -> tuple[ParamStore, str]:
    with open(path, "rb") as fh:
        buf = fh.read()
    if buf[:4] != CHECKPOINT_MAGIC:
        raise ContractError(f"{path}: not a checkpoint file")
    version, cfg_len = struct.unpack_from("<II", buf, 4)
    if version != CHECKPOINT_VERSION:
        raise ContractError(f"{path}: unsupported checkpoint version {version}")
    off = 12
    config_text = buf[off:off + cfg_len].decode("utf-8")
    off += cfg_len
    (count,) = struct.unpack_from("<I", buf, off)
    off += 4
    store = ParamStore()
    for _ in range(count):
        (nlen,) = struct.unpack_from("<H", buf, off)
        off += 2
        name = buf[off:off + nlen].decode("utf-8")
        off += nlen
        (ndim,) = struct.unpack_from("<B", buf, off)
        off += 1
        shape = struct.unpack_from(f"<{ndim}I", buf, off)
        off += 4 * ndim
        n = int(np.prod(shape, dtype=np.int64))
        value = np.frombuffer(buf, dtype="<f8", count=n, offset=off).reshape(shape)
        off += 8 * n
        store.add(name, value.astype(np.float64))
    return store, config_text
