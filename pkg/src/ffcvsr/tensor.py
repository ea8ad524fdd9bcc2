"""Dense tensors with a record-and-replay reverse-mode tape.

Every op in this module is a plain function over :class:`Tensor` values. When
a :class:`GradientTape` is active and at least one input is tracked by it, the
op appends an entry holding its inputs, its output and a closure that maps the
output gradient to input gradients. :func:`backward` replays those entries in
reverse order.

Arrays keep the dtype they were created with. Model code uses float32; the
gradient checks in the test suite push float64 arrays through the very same
kernels.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

DEFAULT_DTYPE = np.float32


class ShapeError(ValueError):
    """Raised when operand extents are incompatible with an op."""


class Tensor:
    """A numpy array plus an optional handle into the active tape."""

    __slots__ = ("data", "node")

    def __init__(self, data, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if dtype is None and not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(DEFAULT_DTYPE)
        self.data = arr
        self.node: _Node | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def __array__(self, dtype=None, copy=None):
        if dtype is None:
            return self.data
        return self.data.astype(dtype)

    def __repr__(self) -> str:
        tracked = "" if self.node is None else f", node={self.node.index}"
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{tracked})"


def detach(x: Tensor) -> Tensor:
    """Same values, no tape history. Gradients stop here."""
    return Tensor(x.data)


# ---------------------------------------------------------------------------
# tape
# ---------------------------------------------------------------------------


@dataclass(eq=False)
class _Node:
    tape: "GradientTape"
    index: int


@dataclass(eq=False)
class _Record:
    inputs: tuple[int | None, ...]
    output: int
    backward: Callable[[np.ndarray], Sequence[np.ndarray | None]]
    name: str


_ACTIVE: list["GradientTape"] = []


@dataclass(eq=False)
class GradientTape:
    """Ordered log of differentiable ops.

    Use as a context manager; tensors become sources with :meth:`watch`::

        with GradientTape() as tape:
            tape.watch_all(params)
            loss = mse(model(x), y)
        grads = tape.gradient(loss, params)

    A tape is single-owner and is consumed by one backward pass at most once
    per loss; replaying twice is allowed but reads the same records.
    """

    records: list[_Record] = field(default_factory=list)
    _count: int = 0

    def __enter__(self) -> "GradientTape":
        _ACTIVE.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _ACTIVE.remove(self)

    def _new_node(self, tensor: Tensor) -> int:
        idx = self._count
        self._count += 1
        tensor.node = _Node(self, idx)
        return idx

    def owns(self, tensor: Tensor) -> bool:
        return tensor.node is not None and tensor.node.tape is self

    def watch(self, tensor: Tensor) -> int:
        """Track ``tensor`` as a differentiation source; returns its node id."""
        if self.owns(tensor):
            return tensor.node.index
        return self._new_node(tensor)

    def watch_all(self, tensors: dict[str, Tensor]) -> None:
        for t in tensors.values():
            self.watch(t)

    def gradient(self, loss: Tensor, sources: dict[str, Tensor]) -> dict[str, np.ndarray]:
        """Gradients of ``loss`` keyed by the names in ``sources``."""
        by_node = backward(self, loss)
        out = {}
        for name, t in sources.items():
            if not self.owns(t):
                raise ValueError(f"source {name!r} is not watched by this tape")
            g = by_node.get(t.node.index)
            out[name] = np.zeros_like(t.data) if g is None else g
        return out


def _active_tape() -> GradientTape | None:
    return _ACTIVE[-1] if _ACTIVE else None


def _record(name, inputs, out: Tensor, backward_fn) -> Tensor:
    tape = _active_tape()
    if tape is None:
        return out
    ids = tuple(t.node.index if tape.owns(t) else None for t in inputs)
    if all(i is None for i in ids):
        return out
    idx = tape._new_node(out)
    tape.records.append(_Record(ids, idx, backward_fn, name))
    return out


def backward(tape: GradientTape, loss: Tensor) -> dict[int, np.ndarray]:
    """Replay ``tape`` backwards from a scalar ``loss``.

    Returns a map from node id to the accumulated gradient for every node the
    loss depends on (sources included). Nodes used several times receive the
    sum of their incoming gradients.
    """
    if loss.data.size != 1:
        raise ShapeError(f"loss must be a scalar, got shape {loss.shape}")
    if not tape.owns(loss):
        raise ValueError("loss is not on this tape")
    grads: dict[int, np.ndarray] = {loss.node.index: np.ones_like(loss.data)}
    for rec in reversed(tape.records):
        g = grads.get(rec.output)
        if g is None:
            continue
        for node_id, gin in zip(rec.inputs, rec.backward(g)):
            if node_id is None or gin is None:
                continue
            if node_id in grads:
                grads[node_id] = grads[node_id] + gin
            else:
                grads[node_id] = gin
    return grads


# ---------------------------------------------------------------------------
# validation helpers
# ---------------------------------------------------------------------------

_DIMS = ("batch", "channels", "height", "width")


def _require_rank4(x: Tensor, what: str) -> None:
    if x.data.ndim != 4:
        raise ShapeError(f"{what}: expected rank-4 (batch, channels, height, width), got shape {x.shape}")


def _require_same_shape(a: Tensor, b: Tensor, what: str) -> None:
    if a.shape == b.shape:
        return
    if a.data.ndim == b.data.ndim == 4:
        for name, ea, eb in zip(_DIMS, a.shape, b.shape):
            if ea != eb:
                raise ShapeError(f"{what}: {name} mismatch ({ea} vs {eb})")
    raise ShapeError(f"{what}: shape mismatch {a.shape} vs {b.shape}")


# ---------------------------------------------------------------------------
# convolution kernels (raw numpy)
# ---------------------------------------------------------------------------


def _conv_out_extent(n: int, k: int, stride: int, padding: int) -> int:
    return (n + 2 * padding - k) // stride + 1


def _im2col(x: np.ndarray, kh: int, kw: int, stride: int, padding: int, ho: int, wo: int) -> np.ndarray:
    """Patch matrix of shape (N*Ho*Wo, C*kH*kW), rows in (n, y, x) order."""
    n, c, h, w = x.shape
    if padding:
        xp = np.zeros((n, c, h + 2 * padding, w + 2 * padding), dtype=x.dtype)
        xp[:, :, padding:padding + h, padding:padding + w] = x
    else:
        xp = x
    cols = np.empty((n, ho, wo, c, kh, kw), dtype=x.dtype)
    ys, xs = stride * (ho - 1) + 1, stride * (wo - 1) + 1
    for i in range(kh):
        for j in range(kw):
            cols[..., i, j] = xp[:, :, i:i + ys:stride, j:j + xs:stride].transpose(0, 2, 3, 1)
    return cols.reshape(n * ho * wo, c * kh * kw)


def _col2im(cols: np.ndarray, shape: tuple[int, int, int, int], kh: int, kw: int,
            stride: int, padding: int, ho: int, wo: int) -> np.ndarray:
    """Scatter-add adjoint of :func:`_im2col`."""
    n, c, h, w = shape
    cols = cols.reshape(n, ho, wo, c, kh, kw)
    out = np.zeros((n, c, h + 2 * padding, w + 2 * padding), dtype=cols.dtype)
    ys, xs = stride * (ho - 1) + 1, stride * (wo - 1) + 1
    for i in range(kh):
        for j in range(kw):
            out[:, :, i:i + ys:stride, j:j + xs:stride] += cols[..., i, j].transpose(0, 3, 1, 2)
    if padding:
        out = out[:, :, padding:padding + h, padding:padding + w]
    return np.ascontiguousarray(out)


def _rows_to_nchw(m: np.ndarray, n: int, ho: int, wo: int) -> np.ndarray:
    return np.ascontiguousarray(m.reshape(n, ho, wo, -1).transpose(0, 3, 1, 2))


def _nchw_to_rows(a: np.ndarray) -> np.ndarray:
    return a.transpose(0, 2, 3, 1).reshape(-1, a.shape[1])


# ---------------------------------------------------------------------------
# differentiable ops
# ---------------------------------------------------------------------------


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None, stride: int = 1, padding: int = 0) -> Tensor:
    """Cross-correlation plus bias. ``weight`` is (out_c, in_c, kH, kW)."""
    _require_rank4(x, "conv2d input")
    _require_rank4(weight, "conv2d weight")
    if stride < 1 or padding < 0:
        raise ShapeError(f"conv2d: invalid stride={stride} / padding={padding}")
    oc, ic, kh, kw = weight.shape
    n, c, h, w = x.shape
    if c != ic:
        raise ShapeError(f"conv2d: channels mismatch (input has {c}, weight expects {ic})")
    if bias is not None and bias.shape != (oc,):
        raise ShapeError(f"conv2d: bias must have shape ({oc},), got {bias.shape}")
    ho = _conv_out_extent(h, kh, stride, padding)
    wo = _conv_out_extent(w, kw, stride, padding)
    if ho < 1:
        raise ShapeError(f"conv2d: height {h} too small for kernel {kh} with padding {padding}")
    if wo < 1:
        raise ShapeError(f"conv2d: width {w} too small for kernel {kw} with padding {padding}")

    cols = _im2col(x.data, kh, kw, stride, padding, ho, wo)
    wmat = weight.data.reshape(oc, -1)
    rows = cols @ wmat.T
    if bias is not None:
        rows += bias.data
    out = _rows_to_nchw(rows, n, ho, wo)

    def grad_fn(g):
        grows = _nchw_to_rows(g)
        gx = _col2im(grows @ wmat, x.shape, kh, kw, stride, padding, ho, wo)
        gw = (grows.T @ cols).reshape(weight.shape)
        gb = grows.sum(axis=0) if bias is not None else None
        return gx, gw, gb

    inputs = (x, weight) if bias is None else (x, weight, bias)
    return _record("conv2d", inputs, Tensor(out), grad_fn)


def conv_transpose_extent(n: int, k: int, stride: int, padding: int) -> int:
    return (n - 1) * stride - 2 * padding + k


def conv2d_transpose(x: Tensor, weight: Tensor, bias: Tensor | None = None, stride: int = 1, padding: int = 0) -> Tensor:
    """Fractionally strided convolution (the input-adjoint of :func:`conv2d`).

    ``weight`` is (in_c, out_c, kH, kW), i.e. the layout of the conv2d weight
    whose adjoint this is. With kH = 2 * stride and padding = stride / 2 the
    output is exactly ``stride`` times the input extent.
    """
    _require_rank4(x, "conv2d_transpose input")
    _require_rank4(weight, "conv2d_transpose weight")
    if stride < 1 or padding < 0:
        raise ShapeError(f"conv2d_transpose: invalid stride={stride} / padding={padding}")
    ic, oc, kh, kw = weight.shape
    n, c, h, w = x.shape
    if c != ic:
        raise ShapeError(f"conv2d_transpose: channels mismatch (input has {c}, weight expects {ic})")
    if bias is not None and bias.shape != (oc,):
        raise ShapeError(f"conv2d_transpose: bias must have shape ({oc},), got {bias.shape}")
    ho = conv_transpose_extent(h, kh, stride, padding)
    wo = conv_transpose_extent(w, kw, stride, padding)
    if ho < 1 or wo < 1:
        raise ShapeError(f"conv2d_transpose: output extent {ho}x{wo} is not positive")

    # weight (in_c, out_c, kH, kW) is the conv2d weight (O, C, kH, kW) this op is the adjoint of
    wmat = weight.data.reshape(ic, -1)
    xrows = _nchw_to_rows(x.data)
    out = _col2im(xrows @ wmat, (n, oc, ho, wo), kh, kw, stride, padding, h, w)
    if bias is not None:
        out += bias.data[None, :, None, None]

    def grad_fn(g):
        gcols = _im2col(g, kh, kw, stride, padding, h, w)
        gx = _rows_to_nchw(gcols @ wmat.T, n, h, w)
        gw = (xrows.T @ gcols).reshape(weight.shape)
        gb = g.sum(axis=(0, 2, 3)) if bias is not None else None
        return gx, gw, gb

    inputs = (x, weight) if bias is None else (x, weight, bias)
    return _record("conv2d_transpose", inputs, Tensor(out), grad_fn)


def _s2d(a: np.ndarray, block: int) -> np.ndarray:
    n, c, h, w = a.shape
    a = a.reshape(n, c, h // block, block, w // block, block)
    return np.ascontiguousarray(a.transpose(0, 1, 3, 5, 2, 4)).reshape(n, c * block * block, h // block, w // block)


def _d2s(a: np.ndarray, block: int) -> np.ndarray:
    n, c, h, w = a.shape
    co = c // (block * block)
    a = a.reshape(n, co, block, block, h, w)
    return np.ascontiguousarray(a.transpose(0, 1, 4, 2, 5, 3)).reshape(n, co, h * block, w * block)


def space_to_depth(x: Tensor, block: int) -> Tensor:
    """Move each ``block`` x ``block`` spatial cell into channels.

    Input pixel (c, y, x) lands in channel ``c*block**2 + (y % block)*block + x % block``
    at position (y // block, x // block).
    """
    _require_rank4(x, "space_to_depth input")
    if block < 1:
        raise ShapeError(f"space_to_depth: block must be positive, got {block}")
    _, _, h, w = x.shape
    if h % block:
        raise ShapeError(f"space_to_depth: height {h} not divisible by block {block}")
    if w % block:
        raise ShapeError(f"space_to_depth: width {w} not divisible by block {block}")
    out = Tensor(_s2d(x.data, block))
    return _record("space_to_depth", (x,), out, lambda g: (_d2s(g, block),))


def depth_to_space(x: Tensor, block: int) -> Tensor:
    """Inverse permutation of :func:`space_to_depth`."""
    _require_rank4(x, "depth_to_space input")
    if block < 1:
        raise ShapeError(f"depth_to_space: block must be positive, got {block}")
    if x.shape[1] % (block * block):
        raise ShapeError(f"depth_to_space: channels {x.shape[1]} not divisible by block**2 = {block * block}")
    out = Tensor(_d2s(x.data, block))
    return _record("depth_to_space", (x,), out, lambda g: (_s2d(g, block),))


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    out = Tensor(np.where(mask, x.data, np.zeros((), x.dtype)))
    return _record("relu", (x,), out, lambda g: (g * mask,))


def add(a: Tensor, b: Tensor) -> Tensor:
    _require_same_shape(a, b, "add")
    out = Tensor(a.data + b.data)
    return _record("add", (a, b), out, lambda g: (g, g))


def scale(x: Tensor, factor: float) -> Tensor:
    """Multiply by a constant."""
    f = np.asarray(factor, dtype=x.dtype)
    out = Tensor(x.data * f)
    return _record("scale", (x,), out, lambda g: (g * f,))


def concat_channels(parts: Sequence[Tensor]) -> Tensor:
    """Concatenate along the channel axis, in argument order."""
    if not parts:
        raise ShapeError("concat_channels: need at least one tensor")
    for p in parts:
        _require_rank4(p, "concat_channels part")
    ref = parts[0].shape
    for p in parts[1:]:
        for axis in (0, 2, 3):
            if p.shape[axis] != ref[axis]:
                raise ShapeError(f"concat_channels: {_DIMS[axis]} mismatch ({ref[axis]} vs {p.shape[axis]})")
    sizes = [p.shape[1] for p in parts]
    out = Tensor(np.concatenate([p.data for p in parts], axis=1))
    bounds = np.cumsum([0] + sizes)

    def grad_fn(g):
        return [g[:, bounds[i]:bounds[i + 1]] for i in range(len(parts))]

    return _record("concat_channels", tuple(parts), out, grad_fn)


def mse(a: Tensor, b: Tensor) -> Tensor:
    """Mean of squared differences, as a 0-d tensor."""
    _require_same_shape(a, b, "mse")
    diff = a.data - b.data
    count = diff.size
    out = Tensor(np.asarray(np.mean(diff * diff), dtype=diff.dtype))

    def grad_fn(g):
        ga = diff * (g * (2.0 / count)).astype(diff.dtype)
        return ga, -ga

    return _record("mse", (a, b), out, grad_fn)
