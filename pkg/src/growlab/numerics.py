"""Dense tensors with reverse-mode autodiff, plus masked layer normalization.

A Tensor wraps a numpy array together with the closure that backpropagates
through the operation that produced it. Graphs are dynamic: running the
forward computation records parents, and ``backward`` on a scalar walks the
tape in reverse topological order. float32 is the working dtype for training;
every operation is dtype-generic so gradient checks can run in float64, where
central finite differences are meaningful at tight tolerances.

Masked layer normalization is the one domain-specific primitive here: it
computes mask-weighted statistics (mu = sum(m_i x_i)/sum(m_i), likewise the
variance) and gates its output by the mask, which is exactly what makes
zero-mask growth function-preserving.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.special import erf

from .errors import ConfigError, GradientError, MaskError, ShapeError

DEFAULT_DTYPE = np.float32
_FLOAT_DTYPES = (np.dtype(np.float32), np.dtype(np.float64))


def _as_float_array(data, dtype=None):
    arr = np.asarray(data)
    if dtype is not None:
        return arr.astype(dtype, copy=False)
    if arr.dtype in _FLOAT_DTYPES:
        return arr
    return arr.astype(DEFAULT_DTYPE)


class Tensor:
    """A dense array plus the backward closure that produced it.

    Tensors are immutable by convention: nothing in this module writes to
    ``data`` after construction, and callers must not either.
    """

    __slots__ = ("data", "grad", "requires_grad", "op", "parents", "name", "_backward")

    # Keep numpy from hijacking `ndarray <op> Tensor`; reflected ops run instead.
    __array_ufunc__ = None

    def __init__(self, data, requires_grad=False, name=None, *,
                 op="leaf", parents=(), backward=None, validate=True):
        self.data = _as_float_array(data)
        if validate and not np.all(np.isfinite(self.data)):
            where = name or op
            raise GradientError(f"non-finite values in tensor {where!r}")
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self.op = op
        self.parents = tuple(parents)
        self.name = name
        self._backward = backward

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self):
        return float(self.data)

    def numpy(self):
        """The underlying array; treat it as read-only."""
        return self.data

    def detach(self):
        return Tensor(self.data, requires_grad=False, op="detach", validate=False)

    def assert_finite(self, context=""):
        if not np.all(np.isfinite(self.data)):
            raise GradientError(f"non-finite values detected {context or self.op!r}")
        return self

    def backward(self):
        """Populate ``grad`` on every tensor this scalar depends on."""
        if self.size != 1:
            raise GradientError(
                f"gradient requested for non-scalar output of {self.op!r} "
                f"with shape {self.shape}"
            )
        order = _topo_order(self)
        for node in order:
            node.grad = None
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # Operator sugar; every overload defers to the module-level primitives.
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(_wrap_like(other, self), self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(_wrap_like(other, self), self)

    def __neg__(self):
        return mul(self, -1.0)

    def __pow__(self, exponent):
        return power(self, exponent)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return slice_(self, key)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    def __repr__(self):
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(op={self.op!r}{label}, shape={self.shape}, dtype={self.dtype})"


def constant(data, dtype=None):
    """Wrap an array as a non-differentiable graph constant."""
    return Tensor(_as_float_array(data, dtype), requires_grad=False,
                  op="const", validate=False)


def _wrap_like(value, reference: Tensor) -> Tensor:
    if isinstance(value, Tensor):
        return value
    arr = np.asarray(value, dtype=reference.dtype)
    return Tensor(arr, requires_grad=False, op="const", validate=False)


def _check_dtypes(op, *tensors):
    dtypes = {t.dtype for t in tensors}
    if len(dtypes) > 1:
        raise ShapeError(f"{op}: mixed dtypes {sorted(map(str, dtypes))}; "
                         f"cast inputs to one precision first")


def _topo_order(root: Tensor):
    order, seen, stack = [], set(), [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node.parents:
            if id(parent) not in seen:
                stack.append((parent, False))
    return order


def _unbroadcast(grad: np.ndarray, shape) -> np.ndarray:
    """Sum a broadcast gradient back down to the original operand shape."""
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, (g_extent, s_extent) in enumerate(zip(grad.shape, shape)):
        if s_extent == 1 and g_extent != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _accumulate(tensor: Tensor, grad: np.ndarray):
    if not tensor.requires_grad and tensor._backward is None:
        return
    grad = _unbroadcast(np.asarray(grad), tensor.data.shape)
    if tensor.grad is None:
        tensor.grad = grad.astype(tensor.data.dtype, copy=True)
    else:
        tensor.grad += grad


def _make(data, op, parents, backward):
    needs_grad = any(p.requires_grad or p._backward is not None for p in parents)
    return Tensor(data, requires_grad=False, op=op, parents=parents,
                  backward=backward if needs_grad else None, validate=False)


# ---------------------------------------------------------------------------
# Primitives.


def add(a, b):
    a = a if isinstance(a, Tensor) else _wrap_like(a, b)
    b = _wrap_like(b, a)
    _check_dtypes("add", a, b)
    out_data = a.data + b.data

    def backward(g):
        _accumulate(a, g)
        _accumulate(b, g)

    return _make(out_data, "add", (a, b), backward)


def sub(a, b):
    a = a if isinstance(a, Tensor) else _wrap_like(a, b)
    b = _wrap_like(b, a)
    _check_dtypes("sub", a, b)
    out_data = a.data - b.data

    def backward(g):
        _accumulate(a, g)
        _accumulate(b, -g)

    return _make(out_data, "sub", (a, b), backward)


def mul(a, b):
    a = a if isinstance(a, Tensor) else _wrap_like(a, b)
    b = _wrap_like(b, a)
    _check_dtypes("mul", a, b)
    out_data = a.data * b.data

    def backward(g):
        _accumulate(a, g * b.data)
        _accumulate(b, g * a.data)

    return _make(out_data, "mul", (a, b), backward)


def div(a, b):
    a = a if isinstance(a, Tensor) else _wrap_like(a, b)
    b = _wrap_like(b, a)
    _check_dtypes("div", a, b)
    out_data = a.data / b.data

    def backward(g):
        _accumulate(a, g / b.data)
        _accumulate(b, -g * a.data / (b.data * b.data))

    return _make(out_data, "div", (a, b), backward)


def power(a: Tensor, exponent: float):
    exponent = float(exponent)
    out_data = a.data ** exponent

    def backward(g):
        _accumulate(a, g * exponent * a.data ** (exponent - 1.0))

    return _make(out_data, "pow", (a,), backward)


def exp(a: Tensor):
    out_data = np.exp(a.data)

    def backward(g):
        _accumulate(a, g * out_data)

    return _make(out_data, "exp", (a,), backward)


def log(a: Tensor):
    out_data = np.log(a.data)

    def backward(g):
        _accumulate(a, g / a.data)

    return _make(out_data, "log", (a,), backward)


def sqrt(a: Tensor):
    out_data = np.sqrt(a.data)

    def backward(g):
        _accumulate(a, g / (2.0 * out_data))

    return _make(out_data, "sqrt", (a,), backward)


def tanh(a: Tensor):
    out_data = np.tanh(a.data)

    def backward(g):
        _accumulate(a, g * (1.0 - out_data * out_data))

    return _make(out_data, "tanh", (a,), backward)


# Plain Python floats: numpy treats them as weak scalars, so float32 graphs
# stay float32 instead of promoting to float64.
_SQRT2 = math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


def gelu(a: Tensor):
    """Exact (erf-based) GELU: x * Phi(x)."""
    x = a.data
    phi_cdf = 0.5 * (1.0 + erf(x / _SQRT2))
    out_data = (x * phi_cdf).astype(a.dtype, copy=False)

    def backward(g):
        pdf = _INV_SQRT_2PI * np.exp(-0.5 * x * x)
        _accumulate(a, g * (phi_cdf + x * pdf))

    return _make(out_data, "gelu", (a,), backward)


def matmul(a: Tensor, b: Tensor):
    _check_dtypes("matmul", a, b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs ndim >= 2 operands, got {a.shape} @ {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner dims differ: {a.shape} @ {b.shape}")
    out_data = a.data @ b.data

    def backward(g):
        _accumulate(a, g @ np.swapaxes(b.data, -1, -2))
        _accumulate(b, np.swapaxes(a.data, -1, -2) @ g)

    return _make(out_data, "matmul", (a, b), backward)


def sum_(a: Tensor, axis=None, keepdims=False):
    out_data = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        g = np.asarray(g)
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        _accumulate(a, np.broadcast_to(g, a.shape))

    return _make(out_data, "sum", (a,), backward)


def mean(a: Tensor, axis=None, keepdims=False):
    count = a.size if axis is None else a.shape[axis]
    return mul(sum_(a, axis=axis, keepdims=keepdims), 1.0 / count)


def reshape(a: Tensor, shape):
    out_data = a.data.reshape(shape)

    def backward(g):
        _accumulate(a, np.asarray(g).reshape(a.shape))

    return _make(out_data, "reshape", (a,), backward)


def transpose(a: Tensor, axes=None):
    out_data = a.data.transpose(axes)
    if axes is None:
        inverse = None
    else:
        inverse = tuple(np.argsort(axes))

    def backward(g):
        _accumulate(a, np.asarray(g).transpose(inverse))

    return _make(out_data, "transpose", (a,), backward)


def slice_(a: Tensor, key):
    """Basic indexing (ints, slices, ellipsis). For id arrays use embedding."""
    out_data = a.data[key]

    def backward(g):
        full = np.zeros_like(a.data)
        full[key] += g
        _accumulate(a, full)

    return _make(out_data, "slice", (a,), backward)


def concat(tensors, axis=0):
    tensors = [t for t in tensors]
    if not tensors:
        raise ShapeError("concat of zero tensors")
    _check_dtypes("concat", *tensors)
    out_data = np.concatenate([t.data for t in tensors], axis=axis)
    extents = [t.shape[axis] for t in tensors]

    def backward(g):
        g = np.asarray(g)
        offset = 0
        for t, extent in zip(tensors, extents):
            index = [slice(None)] * g.ndim
            index[axis] = slice(offset, offset + extent)
            _accumulate(t, g[tuple(index)])
            offset += extent

    return _make(out_data, "concat", tuple(tensors), backward)


def embedding(table: Tensor, ids):
    """Row lookup table[ids]; gradients accumulate over repeated ids."""
    ids = np.asarray(ids)
    if not np.issubdtype(ids.dtype, np.integer):
        raise ShapeError(f"embedding ids must be integers, got {ids.dtype}")
    n_rows = table.shape[0]
    if ids.size and (ids.min() < 0 or ids.max() >= n_rows):
        raise ShapeError(
            f"embedding id out of range [0, {n_rows}): min={ids.min()} max={ids.max()}"
        )
    out_data = table.data[ids]

    def backward(g):
        full = np.zeros_like(table.data)
        np.add.at(full, ids, g)
        _accumulate(table, full)

    return _make(out_data, "embedding", (table,), backward)


def take_along_last(a: Tensor, indices):
    """Pick one entry along the last axis per leading position."""
    indices = np.asarray(indices)
    if indices.shape != a.shape[:-1]:
        raise ShapeError(
            f"take_along_last indices shape {indices.shape} != leading {a.shape[:-1]}"
        )
    if indices.size and (indices.min() < 0 or indices.max() >= a.shape[-1]):
        raise ShapeError(f"take_along_last index out of range [0, {a.shape[-1]})")
    expanded = indices[..., None]
    out_data = np.take_along_axis(a.data, expanded, axis=-1)[..., 0]

    def backward(g):
        full = np.zeros_like(a.data)
        # One target per row along the last axis, so a plain scatter is exact.
        np.put_along_axis(full, expanded, np.asarray(g)[..., None], axis=-1)
        _accumulate(a, full)

    return _make(out_data, "take_along_last", (a,), backward)


# ---------------------------------------------------------------------------
# Composites built from the primitives above (gradients come via the chain).


def softmax(a: Tensor, axis=-1):
    shift = constant(np.max(a.data, axis=axis, keepdims=True), dtype=a.dtype)
    exp_a = exp(sub(a, shift))
    return div(exp_a, sum_(exp_a, axis=axis, keepdims=True))


def log_softmax(a: Tensor, axis=-1):
    shift = constant(np.max(a.data, axis=axis, keepdims=True), dtype=a.dtype)
    shifted = sub(a, shift)
    return sub(shifted, log(sum_(exp(shifted), axis=axis, keepdims=True)))


def masked_layernorm(x: Tensor, mask, gain: Tensor, bias: Tensor, eps: float = 1e-5):
    """Layer normalization with per-dimension weights and output gating.

    The mask enters three ways: it weights the mean, weights the variance,
    and multiplies the final output. Dimensions with mask 0 therefore
    neither influence the statistics nor emit anything, which is what makes
    enlarging a hidden axis with zero-mask slices a no-op.
    """
    if eps <= 0:
        raise ConfigError(f"layernorm eps must be positive, got {eps}")
    mask_arr = np.asarray(mask, dtype=x.dtype)
    dim = x.shape[-1]
    if mask_arr.shape != (dim,):
        raise ShapeError(f"mask shape {mask_arr.shape} != ({dim},)")
    if gain.shape != (dim,) or bias.shape != (dim,):
        raise ShapeError(
            f"gain/bias shapes {gain.shape}/{bias.shape} do not match width {dim}"
        )
    if mask_arr.size and (mask_arr.min() < 0.0 or mask_arr.max() > 1.0):
        raise MaskError(f"mask weights must lie in [0, 1], got "
                        f"[{mask_arr.min()}, {mask_arr.max()}]")
    weight_sum = float(mask_arr.sum())
    if weight_sum <= 0.0:
        raise MaskError("mask weights sum to zero; nothing to normalize")

    mask_c = constant(mask_arr)
    mu = mul(sum_(mul(x, mask_c), axis=-1, keepdims=True), 1.0 / weight_sum)
    centered = sub(x, mu)
    var = mul(sum_(mul(mask_c, mul(centered, centered)), axis=-1, keepdims=True),
              1.0 / weight_sum)
    inv_std = power(add(var, _wrap_like(np.asarray(eps, dtype=x.dtype), x)), -0.5)
    normalized = mul(centered, inv_std)
    return mul(mask_c, add(mul(gain, normalized), bias))


def layernorm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5):
    """Standard layer normalization: the all-ones-mask special case."""
    return masked_layernorm(x, np.ones(x.shape[-1], dtype=x.dtype), gain, bias, eps)


# ---------------------------------------------------------------------------
# Graph wrapper and gradient utilities.


class Graph:
    """A computation expressed as a function of named leaf tensors."""

    def __init__(self, build, leaf_names=None):
        if not callable(build):
            raise ConfigError("Graph needs a callable build(leaves) -> Tensor")
        self.build = build
        self.leaf_names = tuple(leaf_names) if leaf_names is not None else None

    def __call__(self, leaves):
        return self.build(leaves)


def evaluate_with_gradients(graph, inputs: dict):
    """Run a graph forward and return (scalar value, gradient per named leaf)."""
    builder = graph if callable(graph) else graph.build
    names = getattr(graph, "leaf_names", None)
    if names is not None:
        missing = [n for n in names if n not in inputs]
        if missing:
            raise ShapeError(f"unbound graph inputs: {missing}")
    leaves = {}
    for name, value in inputs.items():
        if isinstance(value, Tensor):
            leaves[name] = value
        else:
            leaves[name] = Tensor(value, requires_grad=True, name=name)
        leaves[name].requires_grad = True
    out = builder(leaves)
    if not isinstance(out, Tensor):
        raise ShapeError("graph did not produce a Tensor")
    if out.size != 1:
        raise GradientError(
            f"gradient evaluation needs a scalar output, got shape {out.shape}"
        )
    out.backward()
    grads = {}
    for name, leaf in leaves.items():
        grads[name] = leaf.grad if leaf.grad is not None else np.zeros_like(leaf.data)
    return out, grads


def finite_difference_gradient(f, x: np.ndarray, eps: float = 1e-3) -> np.ndarray:
    """Central-difference gradient estimate of a scalar function, per coordinate."""
    if eps <= 0:
        raise ConfigError(f"eps must be positive, got {eps}")
    x = np.asarray(x)
    grad = np.zeros(x.shape, dtype=np.float64)
    for index in np.ndindex(*x.shape):
        bumped = x.copy()
        bumped[index] = x[index] + eps
        high = float(f(bumped))
        bumped[index] = x[index] - eps
        low = float(f(bumped))
        if not (np.isfinite(high) and np.isfinite(low)):
            raise GradientError(f"non-finite function value near coordinate {index}")
        grad[index] = (high - low) / (2.0 * eps)
    return grad
