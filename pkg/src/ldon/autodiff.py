"""Reverse-mode automatic differentiation on dense float64 arrays.

A :class:`Tape` records each operation as it executes. Tensors made from
external data are validated once at construction (finite values, rank cap);
op outputs skip re-validation. Calling :meth:`Tape.backward` on a scalar loss
walks the recorded nodes in reverse and returns one gradient per node,
including zeros for nodes the loss does not depend on.

Gradients only flow into tensors that were explicitly watched (parameters);
constants contribute values but receive no gradient buffers.
"""
from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

MAX_RANK = 4


class NumericError(ArithmeticError):
    """Raised when a computation produces or receives non-finite values."""


class Tensor:
    """Dense float64 value, optionally attached to a tape node.

    Treat instances as read-only; the optimizer swaps whole data buffers
    rather than mutating them so saved forward values stay valid.
    """

    __slots__ = ("data", "node")

    def __init__(self, data, node=None, *, _checked: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        if arr.ndim > MAX_RANK:
            raise ValueError(f"tensor rank {arr.ndim} exceeds the supported maximum {MAX_RANK}")
        if not _checked and not np.all(np.isfinite(arr)):
            raise NumericError("tensor construction received non-finite values")
        self.data = arr
        self.node = node

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def rank(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        tag = f", node={self.node.nid}" if self.node is not None else ""
        return f"Tensor(shape={self.data.shape}{tag})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return mul(self, -1.0)


class Node:
    __slots__ = ("nid", "kind", "tape", "parents", "vjp", "shape")

    def __init__(self, nid, kind, tape, parents, vjp, shape):
        self.nid = nid
        self.kind = kind
        self.tape = tape
        self.parents = parents
        self.vjp = vjp
        self.shape = shape


class Tape:
    """Ordered record of one forward pass; consumed by a single backward."""

    def __init__(self):
        self._nodes: list[Node] = []
        self._consumed = False

    def __len__(self):
        return len(self._nodes)

    def watch(self, t: Tensor) -> Tensor:
        """Register a leaf so gradients accumulate for it."""
        if t.node is not None and t.node.tape is self:
            return t
        t.node = self._record("leaf", [], None, t.data.shape)
        return t

    def _record(self, kind, parents, vjp, shape) -> Node:
        if self._consumed:
            raise RuntimeError("tape already consumed by backward; start a new tape")
        node = Node(len(self._nodes), kind, self, parents, vjp, shape)
        self._nodes.append(node)
        return node

    def backward(self, loss: Tensor) -> dict:
        """Gradients of a scalar loss with respect to every recorded node.

        Returns a map node id -> Tensor. Nodes the loss does not depend on
        get zero gradients. A tape can be walked only once.
        """
        if self._consumed:
            raise RuntimeError("tape already consumed by backward; start a new tape")
        if loss.node is None or loss.node.tape is not self:
            raise ValueError("loss is not recorded on this tape")
        if loss.data.shape != ():
            raise ValueError(f"backward requires a scalar loss, got shape {loss.data.shape}")
        self._consumed = True
        grad: dict[int, np.ndarray] = {loss.node.nid: np.ones((), dtype=np.float64)}
        for node in reversed(self._nodes):
            g = grad.get(node.nid)
            if g is None or node.vjp is None:
                continue
            for parent, pg in zip(node.parents, node.vjp(g)):
                if parent is None or pg is None:
                    continue
                acc = grad.get(parent.nid)
                grad[parent.nid] = pg if acc is None else acc + pg
        out = {}
        for node in self._nodes:
            g = grad.get(node.nid)
            if g is None:
                g = np.zeros(node.shape, dtype=np.float64)
            out[node.nid] = Tensor(g, _checked=True)
        return out


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _tape_of(kind, *tensors):
    tape = None
    for t in tensors:
        if t.node is None:
            continue
        if tape is None:
            tape = t.node.tape
        elif t.node.tape is not tape:
            raise ValueError(f"{kind}: inputs recorded on different tapes")
    return tape


def _emit(kind, out, inputs, vjp_builder):
    """Wrap an op result; record on the active tape when inputs carry one."""
    tape = _tape_of(kind, *inputs)
    if tape is None:
        return Tensor(out, _checked=True)
    parents = [t.node for t in inputs]
    node = tape._record(kind, parents, vjp_builder(), out.shape)
    return Tensor(out, node, _checked=True)


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a gradient over axes that were broadcast in the forward pass."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _check_broadcast(kind, a, b):
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ValueError(f"{kind}: incompatible shapes {a.shape} and {b.shape}") from None


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast("add", a, b)
    out = a.data + b.data

    def build():
        sa, sb = a.data.shape, b.data.shape
        return lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb))

    return _emit("add", out, [a, b], build)


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast("sub", a, b)
    out = a.data - b.data

    def build():
        sa, sb = a.data.shape, b.data.shape
        return lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb))

    return _emit("sub", out, [a, b], build)


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast("mul", a, b)
    out = a.data * b.data

    def build():
        ad, bd = a.data, b.data
        return lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape))

    return _emit("mul", out, [a, b], build)


def matmul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.rank < 2 or b.rank < 2:
        raise ValueError(f"matmul: operands must have rank >= 2, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ValueError(f"matmul: inner dimensions disagree for {a.shape} and {b.shape}")
    out = a.data @ b.data

    def build():
        ad, bd = a.data, b.data

        def vjp(g):
            da = _unbroadcast(g @ np.swapaxes(bd, -1, -2), ad.shape)
            db = _unbroadcast(np.swapaxes(ad, -1, -2) @ g, bd.shape)
            return da, db

        return vjp

    return _emit("matmul", out, [a, b], build)


def conv2d(x, kernel) -> Tensor:
    """Stride-1 cross-correlation with zero padding preserving spatial dims.

    x: (batch, c_in, h, w); kernel: (c_out, c_in, kh, kw) with odd kh, kw.
    """
    x, kernel = _as_tensor(x), _as_tensor(kernel)
    if x.rank != 4 or kernel.rank != 4:
        raise ValueError(f"conv2d: expected rank-4 input and kernel, got {x.shape} and {kernel.shape}")
    if x.shape[1] != kernel.shape[1]:
        raise ValueError(f"conv2d: channel mismatch between input {x.shape} and kernel {kernel.shape}")
    kh, kw = kernel.shape[2], kernel.shape[3]
    if kh % 2 == 0 or kw % 2 == 0:
        raise ValueError(f"conv2d: kernel spatial dims must be odd, got {kernel.shape}")
    out = _corr_same(x.data, kernel.data)

    def build():
        xd, kd = x.data, kernel.data

        def vjp(g):
            ph, pw = kd.shape[2] // 2, kd.shape[3] // 2
            xp = np.pad(xd, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
            patches = sliding_window_view(xp, (kd.shape[2], kd.shape[3]), axis=(2, 3))
            dk = np.tensordot(g, patches, axes=[(0, 2, 3), (0, 2, 3)])
            kb = kd[:, :, ::-1, ::-1].transpose(1, 0, 2, 3)
            dx = _corr_same(g, kb)
            return dx, dk

        return vjp

    return _emit("conv2d", out, [x, kernel], build)


def _corr_same(x: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    kh, kw = kernel.shape[2], kernel.shape[3]
    ph, pw = kh // 2, kw // 2
    xp = np.pad(x, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
    patches = sliding_window_view(xp, (kh, kw), axis=(2, 3))
    out = np.tensordot(patches, kernel, axes=[(1, 4, 5), (1, 2, 3)])
    return np.ascontiguousarray(out.transpose(0, 3, 1, 2))


def reshape(x, shape) -> Tensor:
    x = _as_tensor(x)
    shape = tuple(int(s) for s in shape)
    if len(shape) > MAX_RANK:
        raise ValueError(f"reshape: target rank {len(shape)} exceeds the supported maximum {MAX_RANK}")
    if int(np.prod(shape, dtype=np.int64)) != x.data.size:
        raise ValueError(f"reshape: cannot view {x.shape} as {shape}")
    out = x.data.reshape(shape)

    def build():
        src = x.data.shape
        return lambda g: (g.reshape(src),)

    return _emit("reshape", out, [x], build)


def transpose(x, axes=None) -> Tensor:
    x = _as_tensor(x)
    perm = tuple(range(x.rank))[::-1] if axes is None else tuple(axes)
    if sorted(perm) != list(range(x.rank)):
        raise ValueError(f"transpose: invalid axes {perm} for shape {x.shape}")
    out = x.data.transpose(perm)

    def build():
        inv = np.argsort(perm)
        return lambda g: (g.transpose(inv),)

    return _emit("transpose", out, [x], build)


def reduce_mean(x, axis=None, keepdims: bool = False) -> Tensor:
    x = _as_tensor(x)
    out = x.data.mean(axis=axis, keepdims=keepdims)

    def build():
        src = x.data.shape
        ax = axis

        def vjp(g):
            if ax is None:
                return (np.broadcast_to(g / x.data.size, src).copy(),)
            axes = (ax,) if isinstance(ax, int) else tuple(ax)
            axes = tuple(a % len(src) for a in axes)
            count = 1
            for a in axes:
                count *= src[a]
            if not keepdims:
                g = np.expand_dims(g, axes)
            return (np.broadcast_to(g / count, src).copy(),)

        return vjp

    return _emit("reduce_mean", np.asarray(out), [x], build)


def relu(x) -> Tensor:
    x = _as_tensor(x)
    out = np.maximum(x.data, 0.0)

    def build():
        mask = x.data > 0.0
        return lambda g: (g * mask,)

    return _emit("relu", out, [x], build)


def sigmoid(x) -> Tensor:
    x = _as_tensor(x)
    out = _stable_sigmoid(x.data)

    def build():
        s = out
        return lambda g: (g * s * (1.0 - s),)

    return _emit("sigmoid", out, [x], build)


def _stable_sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sine(x) -> Tensor:
    x = _as_tensor(x)
    out = np.sin(x.data)

    def build():
        xd = x.data
        return lambda g: (g * np.cos(xd),)

    return _emit("sine", out, [x], build)


def spectral_mask(size: int, k_max: int) -> np.ndarray:
    """Boolean grid of retained 2-D Fourier modes.

    A mode (kx, ky) is kept when its alias distance min(k, size - k) is at
    most k_max on both axes, so k_max = size // 2 keeps everything.
    """
    if size < 2:
        raise ValueError(f"spectral_mask: size must be at least 2, got {size}")
    if not 0 <= k_max <= size // 2:
        raise ValueError(f"spectral_mask: k_max={k_max} outside valid range [0, {size // 2}]")
    dist = np.minimum(np.arange(size), size - np.arange(size))
    keep = dist <= k_max
    return keep[:, None] & keep[None, :]


def spectral_conv2d(x, r_re, r_im, *, k_max: int) -> Tensor:
    """Per-mode channel mixing in Fourier space over a retained mode set.

    x is (batch, c_in, size, size) real; r_re and r_im are the real and
    imaginary weight parts, each (c_in, c_out, n_modes) with modes ordered
    by the row-major True positions of spectral_mask(size, k_max). Returns
    the real part of the inverse transform, (batch, c_out, size, size).
    """
    from .linalg import fft2

    x, r_re, r_im = _as_tensor(x), _as_tensor(r_re), _as_tensor(r_im)
    if x.data.ndim != 4 or x.data.shape[2] != x.data.shape[3]:
        raise ValueError(
            f"spectral_conv2d: x must be (batch, channels, size, size) with square"
            f" spatial extents, got {x.data.shape}"
        )
    if r_re.data.shape != r_im.data.shape:
        raise ValueError(
            f"spectral_conv2d: real and imaginary weights must match,"
            f" got {r_re.data.shape} and {r_im.data.shape}"
        )
    if r_re.data.ndim != 3:
        raise ValueError(f"spectral_conv2d: weights must be (c_in, c_out, n_modes), got {r_re.data.shape}")
    batch, channels, size = x.data.shape[0], x.data.shape[1], x.data.shape[3]
    mask = spectral_mask(size, k_max)
    idx = np.flatnonzero(mask.ravel())
    c_in, c_out, n_modes = r_re.data.shape
    if c_in != channels:
        raise ValueError(f"spectral_conv2d: x has {channels} channels but weights expect {c_in}")
    if n_modes != idx.size:
        raise ValueError(
            f"spectral_conv2d: weights carry {n_modes} modes but k_max={k_max}"
            f" retains {idx.size} on a {size}x{size} grid"
        )

    xf = fft2(x.data, "forward").reshape(batch, c_in, size * size)[:, :, idx]
    r = r_re.data + 1j * r_im.data
    yf = np.zeros((batch, c_out, size * size), dtype=np.complex128)
    yf[:, :, idx] = np.einsum("bcm,com->bom", xf, r)
    out = np.real(fft2(yf.reshape(batch, c_out, size, size), "inverse"))

    def build():
        def vjp(g):
            # With H = ifft2(g) restricted to the retained modes, the weight
            # gradient is sum_b X*H and the input gradient is Re(fft2(R*H)).
            h = fft2(g, "inverse").reshape(batch, c_out, size * size)[:, :, idx]
            s = np.einsum("bcm,bom->com", xf, h)
            t = np.zeros((batch, c_in, size * size), dtype=np.complex128)
            t[:, :, idx] = np.einsum("com,bom->bcm", r, h)
            dx = np.real(fft2(t.reshape(batch, c_in, size, size), "forward"))
            return dx, np.real(s), -np.imag(s)

        return vjp

    return _emit("spectral_conv2d", out, [x, r_re, r_im], build)


_OPS = {
    "add": add,
    "sub": sub,
    "mul": mul,
    "matmul": matmul,
    "conv2d": conv2d,
    "reshape": reshape,
    "transpose": transpose,
    "reduce_mean": reduce_mean,
    "relu": relu,
    "sigmoid": sigmoid,
    "sine": sine,
    "spectral_conv2d": spectral_conv2d,
}


def forward_op(kind: str, inputs, **attrs) -> Tensor:
    """Dispatch one recorded operation by kind name.

    Validates that every tensor input is finite before running; the direct
    op functions assume already-validated tensors and skip that scan.
    """
    if kind not in _OPS:
        raise ValueError(f"unknown op kind '{kind}'; supported: {sorted(_OPS)}")
    tensors = [_as_tensor(t) for t in inputs]
    for i, t in enumerate(tensors):
        if not np.all(np.isfinite(t.data)):
            raise NumericError(f"{kind}: input {i} contains non-finite values")
    return _OPS[kind](*tensors, **attrs)
