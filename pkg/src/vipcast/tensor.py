"""Dense tensors with tape-based reverse-mode differentiation.

Tensors wrap float64 numpy arrays. Every differentiable op records its output
on the active GradTape (if any) together with a closure that pushes the
output gradient back to its inputs. backward() replays the tape in reverse.

Values are checked for finiteness after every op; a NaN/Inf raises
NumericError naming the op and the innermost active stage().
"""

from __future__ import annotations

import threading
from contextlib import contextmanager
from typing import Callable, Dict, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.special import erf

from .errors import ContractError, NumericError, ShapeError

ArrayLike = Union["Tensor", np.ndarray, float, int, Sequence[float]]
BackwardFn = Callable[[np.ndarray], None]

_SQRT2 = np.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


class _State(threading.local):
    def __init__(self) -> None:
        self.tapes: List["GradTape"] = []
        self.stages: List[str] = []
        self.grad_enabled = True


_state = _State()


class Tensor:
    """A dense float64 array that can take part in reverse-mode differentiation.

    Attributes:
        data: The values (float64 numpy array).
        requires_grad: Whether gradients flow into this tensor.
        grad: Accumulated gradient (same shape as data), or None.
        name: Optional label used in checkpoints and diagnostics.
    """

    __array_priority__ = 100  # make ndarray <op> Tensor defer to Tensor

    def __init__(
        self,
        data: ArrayLike,
        requires_grad: bool = False,
        name: Optional[str] = None,
    ) -> None:
        if isinstance(data, Tensor):
            data = data.data
        self.data: np.ndarray = np.array(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self.name = name
        self._parents: Tuple[Tensor, ...] = ()
        self._backward: Optional[BackwardFn] = None
        self._op = "leaf"

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return int(self.data.size)

    @property
    def is_leaf(self) -> bool:
        return self._backward is None

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() needs a single value, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy(), requires_grad=False, name=self.name)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        label = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, op={self._op}{label})"

    # Operators delegate to the functional API below.
    def __add__(self, other: ArrayLike) -> "Tensor":
        return add(self, other)

    def __radd__(self, other: ArrayLike) -> "Tensor":
        return add(other, self)

    def __sub__(self, other: ArrayLike) -> "Tensor":
        return sub(self, other)

    def __rsub__(self, other: ArrayLike) -> "Tensor":
        return sub(other, self)

    def __mul__(self, other: ArrayLike) -> "Tensor":
        return mul(self, other)

    def __rmul__(self, other: ArrayLike) -> "Tensor":
        return mul(other, self)

    def __truediv__(self, other: ArrayLike) -> "Tensor":
        return div(self, other)

    def __rtruediv__(self, other: ArrayLike) -> "Tensor":
        return div(other, self)

    def __neg__(self) -> "Tensor":
        return neg(self)

    def __matmul__(self, other: ArrayLike) -> "Tensor":
        return matmul(self, other)

    def __rmatmul__(self, other: ArrayLike) -> "Tensor":
        return matmul(other, self)

    def sum(self, axis: Union[None, int, Tuple[int, ...]] = None, keepdims: bool = False) -> "Tensor":
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis: Union[None, int, Tuple[int, ...]] = None, keepdims: bool = False) -> "Tensor":
        return mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape: int) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes: int) -> "Tensor":
        return transpose(self, axes if axes else None)


class GradTape:
    """Ordered record of differentiable ops executed while the tape is active.

    Use as a context manager; ops run inside the block are appended in
    execution order, which is a valid topological order for backward().
    """

    def __init__(self) -> None:
        self.nodes: List[Tensor] = []

    def record(self, node: Tensor) -> None:
        self.nodes.append(node)

    def __len__(self) -> int:
        return len(self.nodes)

    def __enter__(self) -> "GradTape":
        _state.tapes.append(self)
        return self

    def __exit__(self, *exc: object) -> None:
        _state.tapes.remove(self)


@contextmanager
def stage(name: str) -> Iterator[None]:
    """Label the ops executed inside the block for NumericError diagnostics."""
    _state.stages.append(name)
    try:
        yield
    finally:
        _state.stages.pop()


@contextmanager
def no_grad() -> Iterator[None]:
    """Run ops without building a graph (inference)."""
    previous = _state.grad_enabled
    _state.grad_enabled = False
    try:
        yield
    finally:
        _state.grad_enabled = previous


def current_stage() -> Optional[str]:
    return _state.stages[-1] if _state.stages else None


def as_tensor(x: ArrayLike) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def tensor(data: ArrayLike, requires_grad: bool = False, name: Optional[str] = None) -> Tensor:
    """Create a leaf tensor (copies the data)."""
    return Tensor(np.array(as_tensor(data).data, dtype=np.float64), requires_grad=requires_grad, name=name)


def apply_op(
    data: np.ndarray,
    parents: Sequence[Tensor],
    backward: BackwardFn,
    op: str,
) -> Tensor:
    """Wrap an op result as a Tensor and register it on the active tapes.

    Args:
        data: Forward result.
        parents: Input tensors the result depends on.
        backward: Closure receiving the output gradient; it must accumulate
            into parents through accumulate().
        op: Op name used in diagnostics.
    """
    if not np.all(np.isfinite(data)):
        raise NumericError(f"non-finite values produced by {op}", stage=current_stage() or op)
    out = Tensor.__new__(Tensor)
    out.data = data if data.dtype == np.float64 else data.astype(np.float64)
    out.grad = None
    out.name = None
    out._op = op
    needs_grad = _state.grad_enabled and any(p.requires_grad for p in parents)
    out.requires_grad = needs_grad
    if needs_grad:
        out._parents = tuple(parents)
        out._backward = backward
        for tape in _state.tapes:
            tape.record(out)
    else:
        out._parents = ()
        out._backward = None
    return out


def unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to `shape`."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def accumulate(t: Tensor, grad: np.ndarray) -> None:
    """Add `grad` into t.grad if t takes gradients."""
    if not t.requires_grad:
        return
    grad = unbroadcast(grad, t.shape)
    if t.grad is None:
        t.grad = np.array(grad, dtype=np.float64, copy=True)
    else:
        t.grad = t.grad + grad


# ---------------------------------------------------------------------------
# Elementwise arithmetic
# ---------------------------------------------------------------------------


def add(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def backward(g: np.ndarray) -> None:
        accumulate(a, g)
        accumulate(b, g)

    return apply_op(a.data + b.data, (a, b), backward, "add")


def sub(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def backward(g: np.ndarray) -> None:
        accumulate(a, g)
        accumulate(b, -g)

    return apply_op(a.data - b.data, (a, b), backward, "sub")


def mul(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def backward(g: np.ndarray) -> None:
        accumulate(a, g * b.data)
        accumulate(b, g * a.data)

    return apply_op(a.data * b.data, (a, b), backward, "mul")


def div(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = a.data / b.data

    def backward(g: np.ndarray) -> None:
        accumulate(a, g / b.data)
        accumulate(b, -g * a.data / (b.data * b.data))

    return apply_op(out, (a, b), backward, "div")


def neg(a: ArrayLike) -> Tensor:
    a = as_tensor(a)

    def backward(g: np.ndarray) -> None:
        accumulate(a, -g)

    return apply_op(-a.data, (a,), backward, "neg")


def power(a: ArrayLike, exponent: float) -> Tensor:
    a = as_tensor(a)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.power(a.data, exponent)

    def backward(g: np.ndarray) -> None:
        accumulate(a, g * exponent * np.power(a.data, exponent - 1.0))

    return apply_op(out, (a,), backward, f"power[{exponent}]")


def tabs(a: ArrayLike) -> Tensor:
    """Elementwise |a|; the subgradient at 0 is 0."""
    a = as_tensor(a)

    def backward(g: np.ndarray) -> None:
        accumulate(a, g * np.sign(a.data))

    return apply_op(np.abs(a.data), (a,), backward, "abs")


def gelu(x: ArrayLike) -> Tensor:
    """x * Phi(x) with the exact Gaussian CDF."""
    x = as_tensor(x)
    cdf = 0.5 * (1.0 + erf(x.data / _SQRT2))

    def backward(g: np.ndarray) -> None:
        pdf = _INV_SQRT_2PI * np.exp(-0.5 * x.data * x.data)
        accumulate(x, g * (cdf + x.data * pdf))

    return apply_op(x.data * cdf, (x,), backward, "gelu")


# ---------------------------------------------------------------------------
# Reductions and shape ops
# ---------------------------------------------------------------------------


def _norm_axes(axis: Union[None, int, Tuple[int, ...]], ndim: int) -> Tuple[int, ...]:
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


def tsum(a: ArrayLike, axis: Union[None, int, Tuple[int, ...]] = None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    axes = _norm_axes(axis, a.ndim)
    out = a.data.sum(axis=axes, keepdims=keepdims)

    def backward(g: np.ndarray) -> None:
        if not keepdims:
            g = np.expand_dims(g, axes)
        accumulate(a, np.broadcast_to(g, a.shape))

    return apply_op(np.asarray(out), (a,), backward, "sum")


def mean(a: ArrayLike, axis: Union[None, int, Tuple[int, ...]] = None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    axes = _norm_axes(axis, a.ndim)
    count = int(np.prod([a.shape[i] for i in axes])) if axes else 1
    return tsum(a, axis=axes, keepdims=keepdims) * (1.0 / count)


def reshape(a: ArrayLike, shape: Sequence[int]) -> Tensor:
    a = as_tensor(a)

    def backward(g: np.ndarray) -> None:
        accumulate(a, g.reshape(a.shape))

    return apply_op(a.data.reshape(tuple(shape)), (a,), backward, "reshape")


def transpose(a: ArrayLike, axes: Optional[Sequence[int]] = None) -> Tensor:
    a = as_tensor(a)
    perm = tuple(range(a.ndim))[::-1] if axes is None else tuple(axes)
    inverse = tuple(np.argsort(perm))

    def backward(g: np.ndarray) -> None:
        accumulate(a, np.transpose(g, inverse))

    return apply_op(np.transpose(a.data, perm), (a,), backward, "transpose")


def swapaxes(a: ArrayLike, axis1: int, axis2: int) -> Tensor:
    a = as_tensor(a)
    perm = list(range(a.ndim))
    perm[axis1], perm[axis2] = perm[axis2], perm[axis1]
    return transpose(a, perm)


def concat(tensors: Sequence[ArrayLike], axis: int = -1) -> Tensor:
    parts = [as_tensor(t) for t in tensors]
    out = np.concatenate([p.data for p in parts], axis=axis)
    bounds = np.cumsum([p.shape[axis] for p in parts])[:-1]

    def backward(g: np.ndarray) -> None:
        for p, piece in zip(parts, np.split(g, bounds, axis=axis)):
            accumulate(p, piece)

    return apply_op(out, parts, backward, "concat")


def broadcast_to(a: ArrayLike, shape: Sequence[int]) -> Tensor:
    a = as_tensor(a)

    def backward(g: np.ndarray) -> None:
        accumulate(a, g)

    return apply_op(np.broadcast_to(a.data, tuple(shape)).copy(), (a,), backward, "broadcast")


# ---------------------------------------------------------------------------
# Gather / scatter
# ---------------------------------------------------------------------------


def take(a: ArrayLike, indices: Sequence[int], axis: int = 0) -> Tensor:
    """Gather entries along one axis (the masking operator [b])."""
    a = as_tensor(a)
    idx = np.asarray(indices, dtype=np.intp).reshape(-1)
    axis = axis % a.ndim
    if idx.size and (idx.min() < -a.shape[axis] or idx.max() >= a.shape[axis]):
        raise ContractError(f"index out of range for axis {axis} of size {a.shape[axis]}")

    def backward(g: np.ndarray) -> None:
        full = np.zeros(a.shape)
        np.add.at(np.moveaxis(full, axis, 0), idx, np.moveaxis(g, axis, 0))
        accumulate(a, full)

    return apply_op(np.take(a.data, idx, axis=axis), (a,), backward, "take")


def scatter(a: ArrayLike, indices: Sequence[int], size: int, axis: int = 0) -> Tensor:
    """Place `a` into a zero tensor of length `size` along `axis` at `indices`."""
    a = as_tensor(a)
    idx = np.asarray(indices, dtype=np.intp).reshape(-1)
    axis = axis % a.ndim
    if idx.size != a.shape[axis]:
        raise ShapeError(f"scatter: {idx.size} indices for axis of size {a.shape[axis]}")
    if idx.size and (idx.min() < 0 or idx.max() >= size):
        raise ContractError(f"scatter index out of range for size {size}")
    shape = list(a.shape)
    shape[axis] = size
    out = np.zeros(shape)
    np.moveaxis(out, axis, 0)[idx] = np.moveaxis(a.data, axis, 0)

    def backward(g: np.ndarray) -> None:
        accumulate(a, np.take(g, idx, axis=axis))

    return apply_op(out, (a,), backward, "scatter")


def embedding(table: ArrayLike, indices: np.ndarray) -> Tensor:
    """Row lookup table[indices] for an integer array of any shape."""
    table = as_tensor(table)
    idx = np.asarray(indices, dtype=np.intp)
    if idx.size and (idx.min() < 0 or idx.max() >= table.shape[0]):
        raise ContractError(f"embedding index out of range [0, {table.shape[0]})")

    def backward(g: np.ndarray) -> None:
        full = np.zeros(table.shape)
        np.add.at(full, idx, g)
        accumulate(table, full)

    return apply_op(table.data[idx], (table,), backward, "embedding")


# ---------------------------------------------------------------------------
# Linear algebra and normalizations
# ---------------------------------------------------------------------------


def matmul(a: ArrayLike, b: ArrayLike) -> Tensor:
    """Matrix product over the last two axes, broadcasting leading axes."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs operands with ndim >= 2, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner dimensions differ: {a.shape} x {b.shape}")

    def backward(g: np.ndarray) -> None:
        if a.requires_grad:
            accumulate(a, g @ np.swapaxes(b.data, -1, -2))
        if b.requires_grad:
            accumulate(b, np.swapaxes(a.data, -1, -2) @ g)

    return apply_op(a.data @ b.data, (a, b), backward, "matmul")


def softmax(x: ArrayLike, axis: int = -1) -> Tensor:
    """Softmax along `axis` with max subtraction."""
    x = as_tensor(x)
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)

    def backward(g: np.ndarray) -> None:
        accumulate(x, y * (g - (g * y).sum(axis=axis, keepdims=True)))

    return apply_op(y, (x,), backward, "softmax")


def softmax_rows(x: ArrayLike) -> Tensor:
    """Row-wise softmax of a matrix (or of the last axis of a stack)."""
    return softmax(x, axis=-1)


def l1_norm(x: ArrayLike) -> Tensor:
    """Sum of absolute values (scalar)."""
    return tsum(tabs(x))


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis, then scale and shift."""
    mu = mean(x, axis=-1, keepdims=True)
    centered = x - mu
    var = mean(centered * centered, axis=-1, keepdims=True)
    return centered * power(var + eps, -0.5) * gain + bias


# ---------------------------------------------------------------------------
# Backward pass and gradient checking
# ---------------------------------------------------------------------------


def _topological(loss: Tensor) -> List[Tensor]:
    order: List[Tensor] = []
    seen = set()
    stack: List[Tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in seen:
                stack.append((parent, False))
    return order


def backward(loss: Tensor, tape: Optional[GradTape] = None) -> Dict[Tensor, np.ndarray]:
    """Back-propagate from a scalar loss.

    Args:
        loss: Scalar tensor.
        tape: Tape the loss was recorded on. Without a tape the graph is
            walked from the loss through parent links.

    Returns:
        Mapping from every reached leaf that requires grad to its gradient.

    Raises:
        ContractError: If the loss is not a scalar.
    """
    if loss.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return {}
    if tape is not None and any(node is loss for node in reversed(tape.nodes)):
        nodes = tape.nodes
    else:
        nodes = _topological(loss)
    loss.grad = np.ones_like(loss.data) if loss.grad is None else loss.grad + 1.0
    leaves: List[Tensor] = [loss] if loss.is_leaf else []
    seen = set()
    for node in reversed(nodes):
        if node.grad is None or node._backward is None:
            continue
        node._backward(node.grad)
        for parent in node._parents:
            if parent.is_leaf and parent.requires_grad and id(parent) not in seen:
                seen.add(id(parent))
                leaves.append(parent)
    return {leaf: leaf.grad for leaf in leaves if leaf.grad is not None}


def grad_check(f: Callable[[Tensor], Tensor], x: ArrayLike, eps: float = 1e-6) -> float:
    """Compare the tape gradient of a scalar function with central differences.

    Returns:
        max_i |g_analytic_i - g_fd_i| / max(1, |g_fd_i|)
    """
    if eps <= 0:
        raise ContractError("eps must be positive")
    base = np.array(as_tensor(x).data, dtype=np.float64)
    leaf = Tensor(base.copy(), requires_grad=True)
    with GradTape() as tape:
        out = f(leaf)
    backward(out, tape)
    analytic = leaf.grad if leaf.grad is not None else np.zeros_like(base)

    numeric = np.zeros_like(base)
    flat = numeric.reshape(-1)
    for i in range(base.size):
        plus = base.copy().reshape(-1)
        minus = base.copy().reshape(-1)
        plus[i] += eps
        minus[i] -= eps
        with no_grad():
            fp = f(Tensor(plus.reshape(base.shape))).item()
            fm = f(Tensor(minus.reshape(base.shape))).item()
        flat[i] = (fp - fm) / (2.0 * eps)
    return float(np.max(np.abs(analytic - numeric) / np.maximum(1.0, np.abs(numeric)))) if base.size else 0.0


def grad_check_leaves(
    loss_fn: Callable[[], Tensor],
    leaves: Dict[str, Tensor],
    eps: float = 1e-6,
    max_entries: Optional[int] = None,
    seed: int = 0,
) -> Dict[str, float]:
    """Finite-difference check of every named leaf of a scalar loss.

    The leaves are perturbed in place, so loss_fn must read them on every call.

    Args:
        loss_fn: Builds the scalar loss from the current leaf values.
        leaves: Named leaves to check (must require grad).
        eps: Central-difference step.
        max_entries: If set, check at most this many random entries per leaf.
        seed: Seed for the entry subsample.

    Returns:
        Max relative error per leaf name.
    """
    for t in leaves.values():
        t.zero_grad()
    with GradTape() as tape:
        loss = loss_fn()
    backward(loss, tape)
    analytic = {k: (t.grad.copy() if t.grad is not None else np.zeros_like(t.data)) for k, t in leaves.items()}

    rng = np.random.default_rng(seed)
    errors: Dict[str, float] = {}
    for name, t in leaves.items():
        flat = t.data.reshape(-1)
        positions = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            positions = rng.choice(flat.size, size=max_entries, replace=False)
        worst = 0.0
        g = analytic[name].reshape(-1)
        for i in positions:
            original = flat[i]
            flat[i] = original + eps
            with no_grad():
                fp = loss_fn().item()
            flat[i] = original - eps
            with no_grad():
                fm = loss_fn().item()
            flat[i] = original
            fd = (fp - fm) / (2.0 * eps)
            worst = max(worst, abs(g[i] - fd) / max(1.0, abs(fd)))
        errors[name] = worst
    return errors
