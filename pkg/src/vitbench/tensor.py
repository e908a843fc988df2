"""Dense numpy-backed tensors with reverse-mode automatic differentiation.

Every operation that sees a tracked input records its inputs and a
vector-Jacobian closure on the output. ``Tensor.backward()`` walks the
recorded graph in reverse topological order and accumulates gradients
into the tracked leaves. Gradients accumulate across repeated backward
calls; call ``zero_grad`` to reset.

Values are float32 or float64 (``set_default_dtype`` picks the default;
float64 is the default because the finite-difference oracles need the
headroom). Data arrays are treated as immutable once created; only the
``grad`` slot mutates.
"""

from __future__ import annotations

import struct
from contextlib import contextmanager
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.special import erf

from .errors import ContractError, ShapeError

_FLOAT_DTYPES = (np.float32, np.float64)
_default_dtype = np.float64
_grad_enabled = True

_INV_SQRT2 = 1.0 / np.sqrt(2.0)
_INV_SQRT2PI = 1.0 / np.sqrt(2.0 * np.pi)


def set_default_dtype(dtype) -> None:
    """Select float32 or float64 for newly created tensors. Accepts numpy
    dtypes or the strings "32"/"64"."""
    global _default_dtype
    if isinstance(dtype, str):
        dtype = {"32": np.float32, "64": np.float64}.get(dtype.lstrip("float"))
    dtype = np.dtype(dtype).type if dtype is not None else None
    if dtype not in _FLOAT_DTYPES:
        raise ContractError(f"default dtype must be float32 or float64, got {dtype}")
    _default_dtype = dtype


def default_dtype():
    return _default_dtype


@contextmanager
def no_grad():
    """Disable graph recording inside the block (inference, timing runs)."""
    global _grad_enabled
    saved = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = saved


def _as_array(data, dtype=None) -> np.ndarray:
    arr = np.asarray(data)
    if dtype is not None:
        return arr.astype(dtype, copy=False)
    if arr.dtype.type not in _FLOAT_DTYPES:
        return arr.astype(_default_dtype)
    return arr


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to the operand's shape."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Tensor:
    """A dense array plus optional gradient and autodiff bookkeeping."""

    __slots__ = ("data", "grad", "requires_grad", "_prev", "_vjp")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        self.data = _as_array(data, dtype)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._prev: tuple[Tensor, ...] = ()
        self._vjp: Callable[[np.ndarray], tuple] | None = None

    # -- basic introspection -------------------------------------------------

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
    def dtype(self):
        return self.data.dtype

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"

    def item(self) -> float:
        return float(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    # -- graph plumbing ------------------------------------------------------

    @staticmethod
    def _coerce(x) -> "Tensor":
        return x if isinstance(x, Tensor) else Tensor(x)

    def _result(self, data, prev, vjp) -> "Tensor":
        out = Tensor(data)
        if _grad_enabled and any(p.requires_grad for p in prev):
            out.requires_grad = True
            out._prev = prev
            out._vjp = vjp
        return out

    def backward(self) -> None:
        """Accumulate dSelf/dLeaf into every tracked leaf. Self must be scalar."""
        if self.data.size != 1:
            raise ContractError(f"backward requires a scalar, got shape {self.shape}")
        if not self.requires_grad:
            raise ContractError("backward on a tensor with no tracked inputs")

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
            for parent in node._prev:
                if id(parent) not in seen:
                    stack.append((parent, False))

        grads: dict[int, np.ndarray] = {id(self): np.ones_like(self.data)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._vjp is None:
                if node.requires_grad:
                    node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._prev, node._vjp(g)):
                if pg is None or not parent.requires_grad:
                    continue
                held = grads.get(id(parent))
                grads[id(parent)] = pg if held is None else held + pg

    # -- arithmetic ----------------------------------------------------------

    def __add__(self, other) -> "Tensor":
        other = Tensor._coerce(other)
        a, b = self.data, other.data
        return self._result(
            a + b,
            (self, other),
            lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
        )

    __radd__ = __add__

    def __neg__(self) -> "Tensor":
        return self._result(-self.data, (self,), lambda g: (-g,))

    def __sub__(self, other) -> "Tensor":
        return self + (-Tensor._coerce(other))

    def __rsub__(self, other) -> "Tensor":
        return Tensor._coerce(other) + (-self)

    def __mul__(self, other) -> "Tensor":
        other = Tensor._coerce(other)
        a, b = self.data, other.data
        return self._result(
            a * b,
            (self, other),
            lambda g: (_unbroadcast(g * b, a.shape), _unbroadcast(g * a, b.shape)),
        )

    __rmul__ = __mul__

    def __truediv__(self, scalar) -> "Tensor":
        if isinstance(scalar, Tensor) or not np.isscalar(scalar):
            raise ContractError("division is supported by scalars only")
        return self * (1.0 / scalar)

    def __pow__(self, exponent) -> "Tensor":
        if isinstance(exponent, Tensor) or not np.isscalar(exponent):
            raise ContractError("pow is supported for scalar exponents only")
        c = float(exponent)
        a = self.data

        def vjp(g):
            if c == 0.0:
                return (np.zeros_like(a),)
            return (g * c * a ** (c - 1.0),)

        return self._result(a**c, (self,), vjp)

    def __matmul__(self, other) -> "Tensor":
        return matmul(self, other)

    # -- shape movement ------------------------------------------------------

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        a = self.data
        return self._result(
            a.reshape(shape), (self,), lambda g: (g.reshape(a.shape),)
        )

    def transpose(self, axes: Sequence[int]) -> "Tensor":
        axes = tuple(axes)
        inverse = tuple(np.argsort(axes))
        return self._result(
            self.data.transpose(axes), (self,), lambda g: (g.transpose(inverse),)
        )

    def broadcast_to(self, shape) -> "Tensor":
        shape = tuple(shape)
        a = self.data
        return self._result(
            np.broadcast_to(a, shape).copy(),
            (self,),
            lambda g: (_unbroadcast(g, a.shape),),
        )

    def __getitem__(self, idx) -> "Tensor":
        a = self.data

        def vjp(g):
            full = np.zeros_like(a)
            np.add.at(full, idx, g)
            return (full,)

        return self._result(a[idx], (self,), vjp)

    def pad(self, widths: Sequence[tuple[int, int]]) -> "Tensor":
        """Zero-pad each axis by (before, after)."""
        widths = tuple((int(lo), int(hi)) for lo, hi in widths)
        if len(widths) != self.ndim:
            raise ShapeError(f"pad widths {widths} do not match ndim {self.ndim}")
        crop = tuple(slice(lo, lo + n) for (lo, _), n in zip(widths, self.shape))
        return self._result(
            np.pad(self.data, widths), (self,), lambda g: (g[crop],)
        )

    # -- reductions ----------------------------------------------------------

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        a = self.data

        def vjp(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            return (np.broadcast_to(g, a.shape).copy(),)

        return self._result(a.sum(axis=axis, keepdims=keepdims), (self,), vjp)

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        a = self.data
        count = a.size if axis is None else np.prod(
            [a.shape[ax] for ax in np.atleast_1d(axis)]
        )

        def vjp(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            return (np.broadcast_to(g / count, a.shape).copy(),)

        return self._result(a.mean(axis=axis, keepdims=keepdims), (self,), vjp)

    # -- pointwise functions -------------------------------------------------

    def exp(self) -> "Tensor":
        y = np.exp(self.data)
        return self._result(y, (self,), lambda g: (g * y,))

    def log(self) -> "Tensor":
        a = self.data
        return self._result(np.log(a), (self,), lambda g: (g / a,))

    def clamp_min(self, floor: float) -> "Tensor":
        a = self.data
        return self._result(
            np.maximum(a, floor), (self,), lambda g: (g * (a > floor),)
        )


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product. 2-D operands follow the m*k @ k*n rule; extra leading
    dimensions are treated as broadcastable batch dimensions."""
    a, b = Tensor._coerce(a), Tensor._coerce(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs 2-D or higher operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner dimensions differ: {a.shape} vs {b.shape}")
    ad, bd = a.data, b.data

    def vjp(g):
        da = _unbroadcast(np.matmul(g, np.swapaxes(bd, -1, -2)), ad.shape)
        db = _unbroadcast(np.matmul(np.swapaxes(ad, -1, -2), g), bd.shape)
        return da, db

    return a._result(np.matmul(ad, bd), (a, b), vjp)


def concat(tensors: Iterable[Tensor], axis: int) -> Tensor:
    parts = [Tensor._coerce(t) for t in tensors]
    sizes = [p.shape[axis] for p in parts]
    offsets = np.cumsum(sizes)[:-1]

    def vjp(g):
        return tuple(np.split(g, offsets, axis=axis))

    out = Tensor(np.concatenate([p.data for p in parts], axis=axis))
    if _grad_enabled and any(p.requires_grad for p in parts):
        out.requires_grad = True
        out._prev = tuple(parts)
        out._vjp = vjp
    return out


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    """Normalized exponentials along ``axis``, computed with max subtraction."""
    x = Tensor._coerce(x)
    if not -x.ndim <= axis < x.ndim:
        raise np.exceptions.AxisError(axis, x.ndim)
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)

    def vjp(g):
        inner = (g * y).sum(axis=axis, keepdims=True)
        return (y * (g - inner),)

    return x._result(y, (x,), vjp)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize the last dimension to zero mean and unit variance, then
    apply the affine scale/shift."""
    x, gamma, beta = map(Tensor._coerce, (x, gamma, beta))
    if eps <= 0:
        raise ContractError(f"layer_norm eps must be positive, got {eps}")
    n = x.shape[-1]
    if gamma.shape != (n,) or beta.shape != (n,):
        raise ShapeError(
            f"gamma/beta shapes {gamma.shape}/{beta.shape} do not match last dim {n}"
        )
    mu = x.data.mean(axis=-1, keepdims=True)
    var = x.data.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv
    y = xhat * gamma.data + beta.data

    def vjp(g):
        dbeta = g.reshape(-1, n).sum(axis=0)
        dgamma = (g * xhat).reshape(-1, n).sum(axis=0)
        gh = g * gamma.data
        dx = inv * (
            gh
            - gh.mean(axis=-1, keepdims=True)
            - xhat * (gh * xhat).mean(axis=-1, keepdims=True)
        )
        return dx, dgamma, dbeta

    return x._result(y, (x, gamma, beta), vjp)


def gelu(x: Tensor) -> Tensor:
    """x * Phi(x) with the exact standard normal CDF (not the tanh form)."""
    x = Tensor._coerce(x)
    a = x.data
    cdf = 0.5 * (1.0 + erf(a * _INV_SQRT2))
    y = a * cdf

    def vjp(g):
        pdf = np.exp(-0.5 * a * a) * _INV_SQRT2PI
        return (g * (cdf + a * pdf),)

    return x._result(y, (x,), vjp)


def dropout(x: Tensor, rate: float, rng: np.random.Generator) -> Tensor:
    """Inverted dropout: zero each value with probability ``rate`` and scale
    survivors by 1/(1-rate). rate 0 is the identity."""
    if not 0.0 <= rate < 1.0:
        raise ContractError(f"dropout rate must be in [0, 1), got {rate}")
    if rate == 0.0:
        return x
    x = Tensor._coerce(x)
    scale = 1.0 / (1.0 - rate)
    mask = (rng.random(x.shape) >= rate) * scale
    return x._result(x.data * mask, (x,), lambda g: (g * mask,))


# -- gradient oracle ----------------------------------------------------------


def finite_difference_check(
    f: Callable[[Tensor], Tensor], x: Tensor, h: float = 1e-5
) -> float:
    """Max relative error between analytic gradients of ``f`` at ``x`` and
    central finite differences. ``f`` must be deterministic and scalar-valued;
    ``x.data`` is perturbed in place and restored."""
    if h <= 0:
        raise ContractError(f"step h must be positive, got {h}")
    if not x.requires_grad:
        raise ContractError("finite_difference_check needs a tracked tensor")
    saved_grad = x.grad
    x.grad = None
    f(x).backward()
    analytic = x.grad if x.grad is not None else np.zeros_like(x.data)
    x.grad = saved_grad

    flat = x.data.reshape(-1)
    worst = 0.0
    with no_grad():
        for i in range(flat.size):
            original = flat[i]
            flat[i] = original + h
            hi = f(x).item()
            flat[i] = original - h
            lo = f(x).item()
            flat[i] = original
            numeric = (hi - lo) / (2.0 * h)
            a = analytic.reshape(-1)[i]
            err = abs(a - numeric) / max(1e-12, abs(a) + abs(numeric))
            worst = max(worst, err)
    return worst


# -- flat binary serialization --------------------------------------------------

_MAGIC = b"TNSR"
_FORMAT_VERSION = 1
_DTYPE_TAGS = {np.dtype(np.float32): 1, np.dtype(np.float64): 2}
_TAG_DTYPES = {1: np.dtype("<f4"), 2: np.dtype("<f8")}


def save_tensor(path, t: Tensor | np.ndarray) -> None:
    arr = t.data if isinstance(t, Tensor) else np.asarray(t)
    tag = _DTYPE_TAGS.get(arr.dtype)
    if tag is None:
        raise ContractError(f"cannot serialize dtype {arr.dtype}")
    with open(path, "wb") as fh:
        fh.write(struct.pack("<4sII", _MAGIC, _FORMAT_VERSION, arr.ndim))
        fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        fh.write(struct.pack("<I", tag))
        fh.write(np.ascontiguousarray(arr, dtype=_TAG_DTYPES[tag]).tobytes())


def load_tensor(path) -> Tensor:
    with open(path, "rb") as fh:
        magic, version, ndim = struct.unpack("<4sII", fh.read(12))
        if magic != _MAGIC:
            raise IOError(f"{path}: not a tensor file (bad magic {magic!r})")
        if version != _FORMAT_VERSION:
            raise IOError(f"{path}: unsupported tensor format version {version}")
        dims = struct.unpack(f"<{ndim}I", fh.read(4 * ndim))
        (tag,) = struct.unpack("<I", fh.read(4))
        dtype = _TAG_DTYPES.get(tag)
        if dtype is None:
            raise IOError(f"{path}: unknown dtype tag {tag}")
        count = int(np.prod(dims)) if dims else 1
        raw = fh.read(count * dtype.itemsize)
        if len(raw) != count * dtype.itemsize:
            raise IOError(f"{path}: truncated tensor data")
        arr = np.frombuffer(raw, dtype=dtype).reshape(dims)
    return Tensor(arr.astype(dtype.newbyteorder("=")))
