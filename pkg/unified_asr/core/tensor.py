"""
Tensor
Dense numpy-backed tensors with reverse-mode automatic differentiation,
the primitive operations the model needs, and a finite-difference gradient checker.
"""

import threading
from contextlib import contextmanager
from typing import Callable, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..common import NumericError, ValidationError

_state = threading.local()

PRECISIONS = {
    'float32': np.float32,
    'float64': np.float64,
}


def get_dtype():
    """Default floating dtype for the current thread"""
    return getattr(_state, 'dtype', np.float32)


def set_precision(name: str):
    """Select 32-bit (training/decoding) or 64-bit (verification) mode for this thread"""
    if name not in PRECISIONS:
        raise ValidationError(f"unknown precision: {name}")
    _state.dtype = PRECISIONS[name]


@contextmanager
def precision(name: str) -> Iterator[None]:
    """Temporarily switch the thread's precision"""
    previous = get_dtype()
    set_precision(name)
    try:
        yield
    finally:
        _state.dtype = previous


def _check_finite(values: np.ndarray, op: str):
    if not np.all(np.isfinite(values)):
        raise NumericError(f"non-finite values produced by {op}")


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back to an operand's shape"""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _accumulate(tensor: 'Tensor', grad: np.ndarray):
    if not tensor.requires_grad:
        return
    grad = np.asarray(grad, dtype=tensor.values.dtype)
    if grad.shape != tensor.values.shape:
        grad = _unbroadcast(grad, tensor.values.shape)
    if tensor.grad is None:
        tensor.grad = grad.copy()
    else:
        tensor.grad = tensor.grad + grad


class Tensor:
    """N-dimensional array with optional gradient tracking"""

    # Make numpy defer to the reflected operators (ndarray - Tensor -> Tensor.__rsub__)
    __array_ufunc__ = None

    def __init__(self, values, requires_grad: bool = False, dtype=None):
        array = np.array(values, dtype=dtype or get_dtype())
        _check_finite(array, "tensor construction")
        self.values = array
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self._parents: Tuple['Tensor', ...] = ()
        self._backward: Optional[Callable[[np.ndarray], None]] = None
        self._op = "leaf"
        self._consumed = False

    @classmethod
    def _from_op(cls, values: np.ndarray, parents: Sequence['Tensor'],
                 backward: Callable[[np.ndarray], None], op: str) -> 'Tensor':
        _check_finite(values, op)
        out = cls.__new__(cls)
        out.values = values
        out.requires_grad = any(p.requires_grad for p in parents)
        out.grad = None
        out._parents = tuple(parents) if out.requires_grad else ()
        out._backward = backward if out.requires_grad else None
        out._op = op
        out._consumed = False
        return out

    # Properties
    @property
    def shape(self) -> Tuple[int, ...]:
        return self.values.shape

    @property
    def ndim(self) -> int:
        return self.values.ndim

    @property
    def dtype(self):
        return self.values.dtype

    @property
    def is_leaf(self) -> bool:
        return self._op == "leaf"

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"

    def numpy(self) -> np.ndarray:
        """Copy of the underlying values"""
        return self.values.copy()

    def item(self) -> float:
        if self.values.size != 1:
            raise NumericError(f"item() needs a single value, tensor has shape {self.shape}")
        return float(self.values.reshape(-1)[0])

    def detach(self) -> 'Tensor':
        """Same values, cut from the graph"""
        return Tensor(self.values, requires_grad=False, dtype=self.values.dtype)

    def assign_(self, values: np.ndarray):
        """In-place value update; reserved for the optimizer step"""
        values = np.asarray(values, dtype=self.values.dtype)
        if values.shape != self.values.shape:
            raise NumericError(f"assign_ shape mismatch: {values.shape} vs {self.values.shape}")
        _check_finite(values, "parameter update")
        self.values[...] = values

    def zero_grad(self):
        self.grad = None

    # Graph
    def backward(self):
        """Reverse-mode pass from this scalar output"""
        if self._consumed:
            raise NumericError("backward already ran on this graph; run a new forward pass first")
        if self.values.size != 1:
            raise NumericError("backward needs a scalar output")
        if not self.requires_grad:
            raise NumericError("output does not depend on any tensor that requires grad")
        graph = ComputeGraph.from_output(self)
        graph.run(np.ones_like(self.values))
        self._consumed = True

    # Operators
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return take(self, index)

    # Methods
    def sum(self, axis=None, keepdims: bool = False) -> 'Tensor':
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False) -> 'Tensor':
        return mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape) -> 'Tensor':
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes) -> 'Tensor':
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes)

    def exp(self) -> 'Tensor':
        return exp(self)

    def log(self) -> 'Tensor':
        return log(self)

    def sqrt(self) -> 'Tensor':
        return sqrt(self)


class ComputeGraph:
    """Topologically ordered record of the operations behind one output"""

    def __init__(self, nodes: List[Tensor]):
        self.nodes = nodes

    @classmethod
    def from_output(cls, output: Tensor) -> 'ComputeGraph':
        order: List[Tensor] = []
        visited = set()
        stack = [(output, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if id(parent) not in visited:
                    stack.append((parent, False))
        return cls(order)

    def run(self, seed_grad: np.ndarray):
        output = self.nodes[-1]
        output.grad = seed_grad
        for node in reversed(self.nodes):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)
        # One backward per forward: release the recorded operations
        for node in self.nodes:
            if not node.is_leaf:
                node._parents = ()
                node._backward = None
                node._consumed = True


def as_tensor(value) -> Tensor:
    """Wrap constants as non-differentiable tensors"""
    if isinstance(value, Tensor):
        return value
    return Tensor(value)


# Elementwise arithmetic
def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def backward(grad):
        _accumulate(a, grad)
        _accumulate(b, grad)

    return Tensor._from_op(a.values + b.values, (a, b), backward, "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def backward(grad):
        _accumulate(a, grad)
        _accumulate(b, -grad)

    return Tensor._from_op(a.values - b.values, (a, b), backward, "sub")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def backward(grad):
        _accumulate(a, grad * b.values)
        _accumulate(b, grad * a.values)

    return Tensor._from_op(a.values * b.values, (a, b), backward, "mul")


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    with np.errstate(all='ignore'):
        values = a.values / b.values

    def backward(grad):
        _accumulate(a, grad / b.values)
        _accumulate(b, -grad * a.values / (b.values * b.values))

    return Tensor._from_op(values, (a, b), backward, "div")


def neg(x) -> Tensor:
    x = as_tensor(x)

    def backward(grad):
        _accumulate(x, -grad)

    return Tensor._from_op(-x.values, (x,), backward, "neg")


def exp(x) -> Tensor:
    x = as_tensor(x)
    with np.errstate(all='ignore'):
        values = np.exp(x.values)

    def backward(grad):
        _accumulate(x, grad * values)

    return Tensor._from_op(values, (x,), backward, "exp")


def log(x) -> Tensor:
    x = as_tensor(x)
    with np.errstate(all='ignore'):
        values = np.log(x.values)

    def backward(grad):
        _accumulate(x, grad / x.values)

    return Tensor._from_op(values, (x,), backward, "log")


def sqrt(x) -> Tensor:
    x = as_tensor(x)
    with np.errstate(all='ignore'):
        values = np.sqrt(x.values)

    def backward(grad):
        _accumulate(x, grad * 0.5 / values)

    return Tensor._from_op(values, (x,), backward, "sqrt")


# Activations
def _sigmoid(values: np.ndarray) -> np.ndarray:
    with np.errstate(over='ignore'):
        return 1.0 / (1.0 + np.exp(-values))


def sigmoid(x) -> Tensor:
    x = as_tensor(x)
    values = _sigmoid(x.values).astype(x.dtype)

    def backward(grad):
        _accumulate(x, grad * values * (1.0 - values))

    return Tensor._from_op(values, (x,), backward, "sigmoid")


def relu(x) -> Tensor:
    x = as_tensor(x)
    positive = x.values > 0

    def backward(grad):
        _accumulate(x, grad * positive)

    return Tensor._from_op(np.where(positive, x.values, 0).astype(x.dtype), (x,), backward, "relu")


def swish(x) -> Tensor:
    """x · sigmoid(x)"""
    x = as_tensor(x)
    gate = _sigmoid(x.values).astype(x.dtype)

    def backward(grad):
        _accumulate(x, grad * (gate + x.values * gate * (1.0 - gate)))

    return Tensor._from_op(x.values * gate, (x,), backward, "swish")


def glu(x, axis: int = -1) -> Tensor:
    """Gated linear unit: first half · sigmoid(second half) along axis"""
    x = as_tensor(x)
    if x.shape[axis] % 2 != 0:
        raise ValidationError("glu needs an even extent along its axis")
    first, second = np.split(x.values, 2, axis=axis)
    gate = _sigmoid(second).astype(x.dtype)

    def backward(grad):
        grad_first = grad * gate
        grad_second = grad * first * gate * (1.0 - gate)
        _accumulate(x, np.concatenate([grad_first, grad_second], axis=axis))

    return Tensor._from_op(first * gate, (x,), backward, "glu")


def dropout(x, rate: float, rng: Optional[np.random.Generator]) -> Tensor:
    """Inverted dropout; identity at rate 0 or without an RNG"""
    x = as_tensor(x)
    if rate <= 0.0 or rng is None:
        return x
    keep = (rng.random(x.shape) >= rate).astype(x.dtype) / (1.0 - rate)

    def backward(grad):
        _accumulate(x, grad * keep)

    return Tensor._from_op(x.values * keep, (x,), backward, "dropout")


# Reductions and shape
def tsum(x, axis=None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    values = np.sum(x.values, axis=axis, keepdims=keepdims)

    def backward(grad):
        if axis is not None and not keepdims:
            grad = np.expand_dims(grad, axis)
        _accumulate(x, np.broadcast_to(grad, x.shape))

    return Tensor._from_op(np.asarray(values), (x,), backward, "sum")


def mean(x, axis=None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    if axis is None:
        count = x.values.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        count = int(np.prod([x.shape[a] for a in axes]))
    return tsum(x, axis=axis, keepdims=keepdims) * (1.0 / count)


def reshape(x, shape) -> Tensor:
    x = as_tensor(x)
    original = x.shape

    def backward(grad):
        _accumulate(x, grad.reshape(original))

    return Tensor._from_op(x.values.reshape(shape), (x,), backward, "reshape")


def transpose(x, axes) -> Tensor:
    x = as_tensor(x)
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))

    def backward(grad):
        _accumulate(x, np.transpose(grad, inverse))

    return Tensor._from_op(np.transpose(x.values, axes), (x,), backward, "transpose")


def take(x, index) -> Tensor:
    """Basic or fancy indexing; gradients scatter-add back"""
    x = as_tensor(x)
    values = x.values[index]

    def backward(grad):
        full = np.zeros_like(x.values)
        np.add.at(full, index, grad)
        _accumulate(x, full)

    return Tensor._from_op(np.array(values), (x,), backward, "take")


def concat(tensors: Sequence, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def backward(grad):
        for tensor, piece in zip(tensors, np.split(grad, splits, axis=axis)):
            _accumulate(tensor, piece)

    return Tensor._from_op(np.concatenate([t.values for t in tensors], axis=axis), tensors, backward, "concat")


# Linear algebra
def matmul(a, b) -> Tensor:
    """Matrix product over the last two axes; b may be a shared 2-D weight"""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ValidationError("matmul operands need at least two axes")

    def backward(grad):
        _accumulate(a, np.matmul(grad, np.swapaxes(b.values, -1, -2)))
        _accumulate(b, np.matmul(np.swapaxes(a.values, -1, -2), grad))

    return Tensor._from_op(np.matmul(a.values, b.values), (a, b), backward, "matmul")


def linear(x, weight, bias=None) -> Tensor:
    out = matmul(x, weight)
    return out if bias is None else add(out, bias)


def layer_norm(x, gamma, beta, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis, then scale and shift"""
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    mu = x.values.mean(axis=-1, keepdims=True)
    centered = x.values - mu
    var = (centered * centered).mean(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    normed = centered * inv_std

    def backward(grad):
        _accumulate(gamma, grad * normed)
        _accumulate(beta, grad)
        if x.requires_grad:
            g = grad * gamma.values
            g_mean = g.mean(axis=-1, keepdims=True)
            gn_mean = (g * normed).mean(axis=-1, keepdims=True)
            _accumulate(x, inv_std * (g - g_mean - normed * gn_mean))

    return Tensor._from_op(normed * gamma.values + beta.values, (x, gamma, beta), backward, "layer_norm")


def embedding(weight, ids) -> Tensor:
    """Row lookup; ids is an integer array of any shape"""
    weight = as_tensor(weight)
    ids = np.asarray(ids, dtype=np.int64)
    if ids.size and (ids.min() < 0 or ids.max() >= weight.shape[0]):
        raise ValidationError(f"token ID out of range [0, {weight.shape[0]})")

    def backward(grad):
        full = np.zeros_like(weight.values)
        np.add.at(full, ids, grad)
        _accumulate(weight, full)

    return Tensor._from_op(weight.values[ids], (weight,), backward, "embedding")


def log_softmax(x, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    shifted = x.values - x.values.max(axis=axis, keepdims=True)
    values = shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))

    def backward(grad):
        probs = np.exp(values)
        _accumulate(x, grad - probs * grad.sum(axis=axis, keepdims=True))

    return Tensor._from_op(values, (x,), backward, "log_softmax")


def masked_softmax(scores, mask) -> Tensor:
    """Softmax over the last axis where masked-out positions get exactly zero"""
    scores = as_tensor(scores)
    mask = np.asarray(mask.values if isinstance(mask, Tensor) else mask, dtype=bool)
    mask = np.broadcast_to(mask, scores.shape)
    if not np.all(mask.any(axis=-1)):
        raise NumericError("fully masked attention row")
    masked = np.where(mask, scores.values, -np.inf)
    row_max = masked.max(axis=-1, keepdims=True)
    with np.errstate(invalid='ignore', over='ignore'):
        weights = np.where(mask, np.exp(scores.values - row_max), 0.0).astype(scores.dtype)
    probs = weights / weights.sum(axis=-1, keepdims=True)

    def backward(grad):
        inner = (grad * probs).sum(axis=-1, keepdims=True)
        _accumulate(scores, probs * (grad - inner))

    return Tensor._from_op(probs, (scores,), backward, "masked_softmax")


# Convolutions
def _scatter_windows(grad_windows: np.ndarray, padded_len: int, stride: int) -> np.ndarray:
    """Inverse of the time-window view: grad_windows is [B, T_out, C, K]"""
    batch, t_out, channels, kernel = grad_windows.shape
    full = np.zeros((batch, padded_len, channels), dtype=grad_windows.dtype)
    span = stride * (t_out - 1) + 1
    for k in range(kernel):
        full[:, k:k + span:stride, :] += grad_windows[..., k]
    return full


def conv1d(x, kernel, stride: int = 1, padding_mode: str = "none") -> Tensor:
    """Time convolution of [T, C_in] (or [B, T, C_in]) with a [K, C_in, C_out] kernel"""
    x, kernel = as_tensor(x), as_tensor(kernel)
    if stride < 1:
        raise ValidationError("stride must be ≥ 1")
    if padding_mode not in ("causal", "none"):
        raise ValidationError(f"unknown padding mode: {padding_mode}")
    unbatched = x.ndim == 2
    values = x.values[None] if unbatched else x.values
    width = kernel.shape[0]
    if padding_mode == "causal":
        values = np.pad(values, ((0, 0), (width - 1, 0), (0, 0)))
    elif values.shape[1] < width:
        raise ValidationError(f"sequence too short: {values.shape[1]} frames for kernel {width}")
    padded_len = values.shape[1]
    windows = sliding_window_view(values, width, axis=1)[:, ::stride]
    out = np.einsum('btck,kco->bto', windows, kernel.values, optimize=True)

    def backward(grad):
        g = grad[None] if unbatched else grad
        _accumulate(kernel, np.einsum('btck,bto->kco', windows, g, optimize=True))
        if x.requires_grad:
            grad_windows = np.einsum('bto,kco->btck', g, kernel.values, optimize=True)
            full = _scatter_windows(grad_windows, padded_len, stride)
            if padding_mode == "causal":
                full = full[:, width - 1:]
            _accumulate(x, full[0] if unbatched else full)

    return Tensor._from_op(out[0] if unbatched else out, (x, kernel), backward, "conv1d")


def depthwise_conv1d(x, kernel) -> Tensor:
    """Per-channel causal convolution of [B, T, C] with a [K, C] kernel"""
    x, kernel = as_tensor(x), as_tensor(kernel)
    width = kernel.shape[0]
    padded = np.pad(x.values, ((0, 0), (width - 1, 0), (0, 0)))
    windows = sliding_window_view(padded, width, axis=1)
    out = np.einsum('btck,kc->btc', windows, kernel.values, optimize=True)

    def backward(grad):
        _accumulate(kernel, np.einsum('btck,btc->kc', windows, grad, optimize=True))
        if x.requires_grad:
            grad_windows = np.einsum('btc,kc->btck', grad, kernel.values, optimize=True)
            full = _scatter_windows(grad_windows, padded.shape[1], 1)
            _accumulate(x, full[:, width - 1:])

    return Tensor._from_op(out, (x, kernel), backward, "depthwise_conv1d")


# Verification
def grad_check(f: Callable[[Tensor], Union[Tensor, float]], x, eps: float = 1e-5) -> float:
    """Max relative error between the analytic and central-difference gradients"""
    with precision("float64"):
        base = np.array(x.values if isinstance(x, Tensor) else x, dtype=np.float64)
        leaf = Tensor(base, requires_grad=True)
        out = as_tensor(f(leaf))
        if not np.all(np.isfinite(out.values)):
            raise NumericError("grad_check: f(x) is not finite")
        if out.requires_grad:
            out.backward()
        analytic = leaf.grad if leaf.grad is not None else np.zeros_like(base)

        numeric = np.zeros_like(base)
        for index in np.ndindex(base.shape):
            plus = base.copy()
            plus[index] += eps
            minus = base.copy()
            minus[index] -= eps
            f_plus = float(as_tensor(f(Tensor(plus))).values)
            f_minus = float(as_tensor(f(Tensor(minus))).values)
            numeric[index] = (f_plus - f_minus) / (2.0 * eps)

    if base.size == 0:
        return 0.0
    scale = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-8)
    return float(np.max(np.abs(analytic - numeric) / scale))
