"""Dense float64 tensors with taped reverse-mode differentiation.

The operation set is exactly what the intention network needs: valid
convolution at stride 1, 2x2/stride-2 max pooling, a global spatial max,
relu / leaky relu, affine layers, concatenation, stacking, row gathering,
softmax and log-softmax over the last axis, an elementwise max reduction,
and the scalar arithmetic used by the losses.  There is no broadcasting
beyond leading-batch semantics and no dtype other than float64.

Recording model: while a :func:`record` context is active on the current
thread, every operation whose inputs require gradients appends one entry to
the active :class:`Tape`.  A tape is an ordered trace of primitive
operations; replaying it in reverse propagates adjoints.  Tapes are
single-owner objects (one per thread via ``threading.local``), tensors are
immutable values once created, and each output handle is produced by
exactly one entry, so the trace is acyclic by construction.

Gradient conventions for non-smooth points are fixed and documented here:
``relu``/``leaky_relu`` use the negative-side slope at exactly zero, and
every max-type operation (pooling, spatial max, elementwise max reduction)
routes the adjoint to the first maximal element in row-major / stacking
order.
"""

from __future__ import annotations

import struct
import threading
from contextlib import contextmanager

import numpy as np

__all__ = [
    "GradientError",
    "SerializationError",
    "ShapeError",
    "Tape",
    "Tensor",
    "add",
    "as_tensor",
    "backward",
    "concat",
    "conv2d",
    "layer_forward",
    "leaky_relu",
    "linear",
    "log_softmax",
    "max_reduce",
    "maxpool2d",
    "mul",
    "negsum",
    "record",
    "relu",
    "reshape",
    "scale",
    "softmax",
    "spatial_max",
    "stack",
    "sum_all",
    "take_rows",
    "tensor_from_bytes",
    "tensor_to_bytes",
]


class ShapeError(ValueError):
    """An operation received inputs whose shapes do not fit its contract."""


class GradientError(RuntimeError):
    """Backward pass invoked on an ill-formed target or trace."""


class SerializationError(ValueError):
    """Tensor byte stream is malformed, truncated, or version-mismatched."""


class Tensor:
    """A dense float64 array, optionally participating in differentiation.

    Tensors are value objects: code in this package never mutates ``data``
    after construction (the optimizer swaps in fresh arrays instead).
    """

    __slots__ = ("data", "requires_grad")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        self.data = arr
        self.requires_grad = bool(requires_grad)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:  # pragma: no cover - debugging aid
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}{flag})"


def as_tensor(value) -> Tensor:
    """Wrap ``value`` as a constant tensor (no-op when already a Tensor)."""
    return value if isinstance(value, Tensor) else Tensor(value)


class Tape:
    """Ordered trace of primitive operations, sufficient to replay adjoints.

    Entries are ``(output, inputs, pull)`` where ``pull`` maps the output
    adjoint to a tuple of input adjoints aligned with ``inputs`` (``None``
    for inputs that need no gradient).  A tape belongs to the thread that
    opened it; separate threads may run separate tapes concurrently.
    """

    __slots__ = ("_entries",)

    def __init__(self):
        self._entries: list[tuple[Tensor, tuple[Tensor, ...], object]] = []

    def __len__(self) -> int:
        return len(self._entries)

    def append(self, out: Tensor, inputs: tuple[Tensor, ...], pull) -> None:
        """Record one primitive application (exposed for test fixtures)."""
        self._entries.append((out, inputs, pull))

    def gradients(self, loss: Tensor) -> dict[Tensor, np.ndarray]:
        """Run the adjoint sweep from scalar ``loss``.

        Returns a map from every reached leaf tensor with
        ``requires_grad=True`` (i.e. parameters) to its gradient array.
        Accumulation order is the fixed reverse trace order, so results are
        deterministic.
        """
        if loss.data.shape != ():
            raise GradientError(
                f"backward target must be a scalar, got shape {loss.data.shape}"
            )
        produced = {id(out) for out, _, _ in self._entries}
        adjoint: dict[int, np.ndarray] = {id(loss): np.array(1.0)}
        leaves: dict[int, Tensor] = {}
        for out, inputs, pull in reversed(self._entries):
            g = adjoint.pop(id(out), None)
            if g is None:
                continue
            for tin, gin in zip(inputs, pull(g)):
                if gin is None or not tin.requires_grad:
                    continue
                key = id(tin)
                held = adjoint.get(key)
                adjoint[key] = gin if held is None else held + gin
                if key not in produced:
                    leaves[key] = tin
        return {t: adjoint[key] for key, t in leaves.items()}


_ACTIVE = threading.local()


def _tape() -> Tape | None:
    return getattr(_ACTIVE, "tape", None)


@contextmanager
def record():
    """Open a fresh tape on this thread; restores the previous one on exit."""
    tape = Tape()
    prev = _tape()
    _ACTIVE.tape = tape
    try:
        yield tape
    finally:
        _ACTIVE.tape = prev


def backward(tape: Tape, loss: Tensor) -> dict[Tensor, np.ndarray]:
    """Adjoint sweep over ``tape`` from ``loss``; see :meth:`Tape.gradients`."""
    return tape.gradients(loss)


def _emit(out_data: np.ndarray, inputs: tuple[Tensor, ...], pull) -> Tensor:
    tape = _tape()
    needs = any(t.requires_grad for t in inputs)
    out = Tensor(out_data, requires_grad=needs and tape is not None)
    if out.requires_grad:
        tape.append(out, inputs, pull)
    return out


def _require(cond: bool, op: str, detail: str) -> None:
    if not cond:
        raise ShapeError(f"{op}: {detail}")


# ---------------------------------------------------------------------------
# convolution and pooling


def conv2d(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """Valid (no padding) stride-1 convolution.

    ``x``: (N, C, H, W), ``w``: (F, C, kh, kw), ``b``: (F,).  Output
    (N, F, H-kh+1, W-kw+1).
    """
    x, w, b = as_tensor(x), as_tensor(w), as_tensor(b)
    _require(x.ndim == 4, "conv2d", f"input must be (N,C,H,W), got {x.shape}")
    _require(w.ndim == 4, "conv2d", f"weights must be (F,C,kh,kw), got {w.shape}")
    n, c, h, wd = x.shape
    f, cw, kh, kw = w.shape
    _require(c == cw, "conv2d", f"channel mismatch: input {c} vs weight {cw}")
    _require(b.shape == (f,), "conv2d", f"bias must be ({f},), got {b.shape}")
    _require(h >= kh and wd >= kw, "conv2d",
             f"kernel ({kh},{kw}) larger than input ({h},{wd})")
    oh, ow = h - kh + 1, wd - kw + 1

    cols = _im2col(x.data, kh, kw)                        # (N, oh*ow, C*kh*kw)
    wmat = w.data.reshape(f, -1)                          # (F, C*kh*kw)
    out = cols @ wmat.T + b.data                          # (N, oh*ow, F)
    out = out.transpose(0, 2, 1).reshape(n, f, oh, ow)

    def pull(g):
        gm = g.reshape(n, f, oh * ow).transpose(0, 2, 1)  # (N, oh*ow, F)
        gw = None
        if w.requires_grad:
            cols_b = _im2col(x.data, kh, kw)
            gw = np.einsum("npf,npk->fk", gm, cols_b).reshape(w.shape)
        gb = gm.sum(axis=(0, 1)) if b.requires_grad else None
        gx = None
        if x.requires_grad:
            gcols = gm @ wmat                             # (N, oh*ow, C*kh*kw)
            gx = _col2im(gcols, x.shape, kh, kw)
        return gx, gw, gb

    return _emit(out, (x, w, b), pull)


def _im2col(x: np.ndarray, kh: int, kw: int) -> np.ndarray:
    n, c, h, w = x.shape
    oh, ow = h - kh + 1, w - kw + 1
    win = np.lib.stride_tricks.sliding_window_view(x, (kh, kw), axis=(2, 3))
    # (N, C, oh, ow, kh, kw) -> (N, oh*ow, C*kh*kw)
    return np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5)).reshape(
        n, oh * ow, c * kh * kw
    )


def _col2im(gcols: np.ndarray, xshape, kh: int, kw: int) -> np.ndarray:
    n, c, h, w = xshape
    oh, ow = h - kh + 1, w - kw + 1
    g = gcols.reshape(n, oh, ow, c, kh, kw)
    gx = np.zeros(xshape)
    for i in range(kh):
        for j in range(kw):
            gx[:, :, i:i + oh, j:j + ow] += g[:, :, :, :, i, j].transpose(0, 3, 1, 2)
    return gx


def maxpool2d(x: Tensor) -> Tensor:
    """2x2, stride-2 max pooling; a trailing odd row/column is dropped.

    Ties route the gradient to the first maximal element of the window in
    row-major order.
    """
    x = as_tensor(x)
    _require(x.ndim == 4, "maxpool2d", f"input must be (N,C,H,W), got {x.shape}")
    n, c, h, w = x.shape
    _require(h >= 2 and w >= 2, "maxpool2d", f"spatial extent too small: {x.shape}")
    oh, ow = h // 2, w // 2
    win = x.data[:, :, : oh * 2, : ow * 2].reshape(n, c, oh, 2, ow, 2)
    win = win.transpose(0, 1, 2, 4, 3, 5).reshape(n, c, oh, ow, 4)
    idx = win.argmax(axis=-1)                              # first max wins
    out = np.take_along_axis(win, idx[..., None], axis=-1)[..., 0]

    def pull(g):
        gw = np.zeros((n, c, oh, ow, 4))
        np.put_along_axis(gw, idx[..., None], g[..., None], axis=-1)
        gw = gw.reshape(n, c, oh, ow, 2, 2).transpose(0, 1, 2, 4, 3, 5)
        gx = np.zeros(x.shape)
        gx[:, :, : oh * 2, : ow * 2] = gw.reshape(n, c, oh * 2, ow * 2)
        return (gx,)

    return _emit(out, (x,), pull)


def spatial_max(x: Tensor) -> Tensor:
    """Global max over the two trailing spatial axes: (N,C,H,W) -> (N,C)."""
    x = as_tensor(x)
    _require(x.ndim == 4, "spatial_max", f"input must be (N,C,H,W), got {x.shape}")
    n, c, h, w = x.shape
    flat = x.data.reshape(n, c, h * w)
    idx = flat.argmax(axis=-1)
    out = np.take_along_axis(flat, idx[..., None], axis=-1)[..., 0]

    def pull(g):
        gx = np.zeros((n, c, h * w))
        np.put_along_axis(gx, idx[..., None], g[..., None], axis=-1)
        return (gx.reshape(x.shape),)

    return _emit(out, (x,), pull)


# ---------------------------------------------------------------------------
# activations


def relu(x: Tensor) -> Tensor:
    x = as_tensor(x)
    mask = x.data > 0.0
    return _emit(np.where(mask, x.data, 0.0), (x,), lambda g: (np.where(mask, g, 0.0),))


def leaky_relu(x: Tensor, slope: float = 0.01) -> Tensor:
    x = as_tensor(x)
    mask = x.data > 0.0
    out = np.where(mask, x.data, slope * x.data)
    return _emit(out, (x,), lambda g: (np.where(mask, g, slope * g),))


def softmax(x: Tensor) -> Tensor:
    """Numerically stable softmax over the last axis."""
    x = as_tensor(x)
    _require(x.ndim >= 1, "softmax", "input must have at least one axis")
    z = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=-1, keepdims=True)

    def pull(g):
        dot = (g * s).sum(axis=-1, keepdims=True)
        return (s * (g - dot),)

    return _emit(s, (x,), pull)


def log_softmax(x: Tensor) -> Tensor:
    """log(softmax(x)) over the last axis, stable for large magnitude logits."""
    x = as_tensor(x)
    _require(x.ndim >= 1, "log_softmax", "input must have at least one axis")
    z = x.data - x.data.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=-1, keepdims=True))
    out = z - lse
    s = np.exp(out)

    def pull(g):
        return (g - s * g.sum(axis=-1, keepdims=True),)

    return _emit(out, (x,), pull)


# ---------------------------------------------------------------------------
# affine and structural ops


def linear(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """Affine map ``x @ w.T + b`` with ``x``: (N, in), ``w``: (out, in)."""
    x, w, b = as_tensor(x), as_tensor(w), as_tensor(b)
    _require(x.ndim == 2, "linear", f"input must be (N,in), got {x.shape}")
    _require(w.ndim == 2, "linear", f"weights must be (out,in), got {w.shape}")
    _require(x.shape[1] == w.shape[1], "linear",
             f"width mismatch: input {x.shape[1]} vs weight {w.shape[1]}")
    _require(b.shape == (w.shape[0],), "linear",
             f"bias must be ({w.shape[0]},), got {b.shape}")
    out = x.data @ w.data.T + b.data

    def pull(g):
        gx = g @ w.data if x.requires_grad else None
        gw = g.T @ x.data if w.requires_grad else None
        gb = g.sum(axis=0) if b.requires_grad else None
        return gx, gw, gb

    return _emit(out, (x, w, b), pull)


def concat(tensors, axis: int = -1) -> Tensor:
    """Concatenate along ``axis``; off-axis shapes must match exactly."""
    ts = [as_tensor(t) for t in tensors]
    _require(len(ts) > 0, "concat", "needs at least one input")
    ref = list(ts[0].shape)
    ax = axis % len(ref) if ref else 0
    for t in ts[1:]:
        other = list(t.shape)
        _require(len(other) == len(ref), "concat",
                 f"rank mismatch: {ts[0].shape} vs {t.shape}")
        for d in range(len(ref)):
            _require(d == ax or other[d] == ref[d], "concat",
                     f"off-axis size mismatch at axis {d}: {ts[0].shape} vs {t.shape}")
    widths = [t.shape[ax] for t in ts]
    out = np.concatenate([t.data for t in ts], axis=ax)
    splits = np.cumsum(widths)[:-1]

    def pull(g):
        return tuple(np.split(g, splits, axis=ax))

    return _emit(out, tuple(ts), pull)


def stack(tensors) -> Tensor:
    """Stack same-shaped tensors along a new leading axis."""
    ts = [as_tensor(t) for t in tensors]
    _require(len(ts) > 0, "stack", "needs at least one input")
    for t in ts[1:]:
        _require(t.shape == ts[0].shape, "stack",
                 f"shape mismatch: {ts[0].shape} vs {t.shape}")
    out = np.stack([t.data for t in ts], axis=0)

    def pull(g):
        return tuple(g[i] for i in range(len(ts)))

    return _emit(out, tuple(ts), pull)


def reshape(x: Tensor, shape) -> Tensor:
    x = as_tensor(x)
    shape = tuple(int(s) for s in shape)
    _require(int(np.prod(shape, dtype=np.int64)) == x.data.size, "reshape",
             f"cannot view {x.shape} as {shape}")
    src = x.shape
    return _emit(x.data.reshape(shape), (x,), lambda g: (g.reshape(src),))


def take_rows(x: Tensor, indices) -> Tensor:
    """Gather rows along the leading axis; repeated indices accumulate adjoints."""
    x = as_tensor(x)
    idx = np.asarray(indices, dtype=np.int64)
    _require(x.ndim >= 1, "take_rows", "input must have a leading axis")
    _require(idx.ndim == 1, "take_rows", f"indices must be 1-D, got {idx.shape}")
    n = x.shape[0]
    _require(bool(np.all((idx >= 0) & (idx < n))), "take_rows",
             f"index out of range for leading size {n}")
    out = x.data[idx]

    def pull(g):
        gx = np.zeros(x.shape)
        np.add.at(gx, idx, g)
        return (gx,)

    return _emit(out, (x,), pull)


def max_reduce(tensors) -> Tensor:
    """Elementwise maximum over a list of same-shaped tensors.

    Permutation-invariant in value; ties route the adjoint to the earliest
    tensor in list order.
    """
    return axis_max(stack(tensors))


def axis_max(x: Tensor) -> Tensor:
    """Max over the leading axis; ties go to the lowest index."""
    x = as_tensor(x)
    _require(x.ndim >= 1 and x.shape[0] >= 1, "axis_max",
             f"needs a non-empty leading axis, got {x.shape}")
    idx = x.data.argmax(axis=0)
    out = np.take_along_axis(x.data, idx[None, ...], axis=0)[0]

    def pull(g):
        gx = np.zeros(x.shape)
        np.put_along_axis(gx, idx[None, ...], g[None, ...], axis=0)
        return (gx,)

    return _emit(out, (x,), pull)


# ---------------------------------------------------------------------------
# arithmetic used by the losses


def add(x: Tensor, y: Tensor) -> Tensor:
    x, y = as_tensor(x), as_tensor(y)
    _require(x.shape == y.shape, "add", f"shape mismatch: {x.shape} vs {y.shape}")
    return _emit(x.data + y.data, (x, y), lambda g: (g, g))


def mul(x: Tensor, y: Tensor) -> Tensor:
    x, y = as_tensor(x), as_tensor(y)
    _require(x.shape == y.shape, "mul", f"shape mismatch: {x.shape} vs {y.shape}")

    def pull(g):
        gx = g * y.data if x.requires_grad else None
        gy = g * x.data if y.requires_grad else None
        return gx, gy

    return _emit(x.data * y.data, (x, y), pull)


def scale(x: Tensor, c: float) -> Tensor:
    x = as_tensor(x)
    c = float(c)
    return _emit(x.data * c, (x,), lambda g: (g * c,))


def sum_all(x: Tensor) -> Tensor:
    x = as_tensor(x)
    shp = x.shape
    return _emit(np.array(x.data.sum()), (x,), lambda g: (np.broadcast_to(g, shp).copy(),))


def negsum(x: Tensor) -> Tensor:
    """``-sum(x)`` as one primitive (cross-entropy convenience)."""
    return scale(sum_all(x), -1.0)


# ---------------------------------------------------------------------------
# layer dispatch (uniform entry point used by the layer-level tests)

_LAYERS = {
    "conv2d": lambda inputs, weights: conv2d(inputs[0], weights[0], weights[1]),
    "maxpool2d": lambda inputs, weights: maxpool2d(inputs[0]),
    "relu": lambda inputs, weights: relu(inputs[0]),
    "leaky_relu": lambda inputs, weights: leaky_relu(inputs[0]),
    "linear": lambda inputs, weights: linear(inputs[0], weights[0], weights[1]),
    "concat": lambda inputs, weights: concat(inputs),
    "softmax": lambda inputs, weights: softmax(inputs[0]),
    "elementwise_max_reduce": lambda inputs, weights: max_reduce(inputs),
}


def layer_forward(kind: str, inputs, weights=None) -> Tensor:
    """Apply one named layer kind to ``inputs`` (and ``weights`` where used)."""
    try:
        fn = _LAYERS[kind]
    except KeyError:
        raise ShapeError(
            f"layer_forward: unknown kind {kind!r}; expected one of {sorted(_LAYERS)}"
        ) from None
    weights = list(weights) if weights is not None else None
    if kind in ("conv2d", "linear") and (weights is None or len(weights) != 2):
        raise ShapeError(f"layer_forward: {kind} requires weights (w, b)")
    return fn(list(inputs), weights)


# ---------------------------------------------------------------------------
# serialization

_TENSOR_MAGIC = b"TNSR"
_TENSOR_VERSION = 1


def tensor_to_bytes(t: Tensor) -> bytes:
    """Serialize one tensor: magic, version, rank, dims (u32 LE), raw f64 LE."""
    t = as_tensor(t)
    head = _TENSOR_MAGIC + struct.pack("<BB", _TENSOR_VERSION, t.ndim)
    dims = struct.pack(f"<{t.ndim}I", *t.shape) if t.ndim else b""
    payload = np.ascontiguousarray(t.data, dtype="<f8").tobytes()
    return head + dims + payload


def tensor_from_bytes(buf: bytes) -> Tensor:
    """Inverse of :func:`tensor_to_bytes`; bit-exact round trip."""
    if len(buf) < 6 or buf[:4] != _TENSOR_MAGIC:
        raise SerializationError("bad tensor stream: magic/version tag mismatch")
    version, ndim = struct.unpack_from("<BB", buf, 4)
    if version != _TENSOR_VERSION:
        raise SerializationError(f"unsupported tensor format version {version}")
    off = 6
    if len(buf) < off + 4 * ndim:
        raise SerializationError("truncated tensor stream (header)")
    shape = struct.unpack_from(f"<{ndim}I", buf, off) if ndim else ()
    off += 4 * ndim
    count = int(np.prod(shape, dtype=np.int64)) if ndim else 1
    if len(buf) != off + 8 * count:
        raise SerializationError("truncated tensor stream (payload)")
    data = np.frombuffer(buf, dtype="<f8", offset=off).reshape(shape).copy()
    return Tensor(data)
