"""Dense float64 tensors with tape-based reverse-mode autodiff.

Every differentiable operation the segmentation model composes lives here.
Tensors wrap row-major numpy arrays; each op records a backward closure on
the output, and ``Tensor.backward()`` replays the tape in reverse topological
order. Gradients accumulate into ``Tensor.grad`` buffers of leaf tensors
created with ``requires_grad=True``.

Tensors are treated as immutable once produced by an op. Non-finite values
are a contract violation and are rejected at construction time.
"""
from __future__ import annotations

import math
from typing import Callable, Optional, Sequence

import numpy as np

NORMALIZE_EPS = 1e-12


class Tensor:
    """Dense n-dimensional array of float64 values with an optional gradient.

    ``data`` is always a C-contiguous float64 ndarray. ``grad`` is allocated
    lazily during backward and has the same shape as ``data``.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.ascontiguousarray(data, dtype=np.float64)
        if not np.all(np.isfinite(arr)):
            raise ValueError("tensor values must be finite (got NaN or Inf)")
        self.data = arr
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple = ()
        self._backward: Optional[Callable[[np.ndarray], None]] = None

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        """Read-only copy of the underlying buffer."""
        return self.data.copy()

    def item(self) -> float:
        if self.data.size != 1:
            raise ValueError(f"item() requires a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        """Reverse-mode sweep from a scalar root; accumulates leaf gradients."""
        if self.data.size != 1:
            raise ValueError("backward() requires a scalar root")
        topo: list[Tensor] = []
        visited: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if id(parent) not in visited:
                    stack.append((parent, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is not None:
                node._backward(node.grad)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    if t.grad is None:
        t.grad = np.array(g, dtype=np.float64)  # owned copy; g may be shared
    else:
        t.grad += g


def _from_op(data: np.ndarray, parents: Sequence[Tensor],
             backward: Callable[[np.ndarray], None]) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    needs = any(p.requires_grad or p._parents for p in parents)
    out.requires_grad = needs
    out._parents = tuple(parents) if needs else ()
    out._backward = backward if needs else None
    return out


def tensor(data) -> Tensor:
    """Constant (non-trainable) tensor from array-like data."""
    return Tensor(data, requires_grad=False)


def zeros(shape) -> Tensor:
    return Tensor(np.zeros(shape), requires_grad=False)


# ---------------------------------------------------------------------------
# elementwise arithmetic

def add(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ValueError(f"add shape mismatch: {a.shape} vs {b.shape}")

    def backward(g):
        _accumulate(a, g)
        _accumulate(b, g)

    return _from_op(a.data + b.data, (a, b), backward)


def sub(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ValueError(f"sub shape mismatch: {a.shape} vs {b.shape}")

    def backward(g):
        _accumulate(a, g)
        _accumulate(b, -g)

    return _from_op(a.data - b.data, (a, b), backward)


def mul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ValueError(f"mul shape mismatch: {a.shape} vs {b.shape}")

    def backward(g):
        _accumulate(a, g * b.data)
        _accumulate(b, g * a.data)

    return _from_op(a.data * b.data, (a, b), backward)


def div(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ValueError(f"div shape mismatch: {a.shape} vs {b.shape}")

    def backward(g):
        _accumulate(a, g / b.data)
        _accumulate(b, -g * a.data / (b.data * b.data))

    return _from_op(a.data / b.data, (a, b), backward)


def smul(a: Tensor, s: float) -> Tensor:
    s = float(s)

    def backward(g):
        _accumulate(a, g * s)

    return _from_op(a.data * s, (a,), backward)


def sadd(a: Tensor, s: float) -> Tensor:
    s = float(s)

    def backward(g):
        _accumulate(a, g)

    return _from_op(a.data + s, (a,), backward)


def add_bias(x: Tensor, b: Tensor) -> Tensor:
    """Broadcast a 1-D bias over the last axis of ``x``."""
    if b.ndim != 1 or x.shape[-1] != b.shape[0]:
        raise ValueError(f"bias shape {b.shape} does not match last dim of {x.shape}")

    def backward(g):
        _accumulate(x, g)
        _accumulate(b, g.reshape(-1, b.shape[0]).sum(axis=0))

    return _from_op(x.data + b.data, (x, b), backward)


# ---------------------------------------------------------------------------
# shape manipulation

def reshape(x: Tensor, shape) -> Tensor:
    shape = tuple(int(s) for s in shape)
    old = x.shape

    def backward(g):
        _accumulate(x, g.reshape(old))

    return _from_op(np.ascontiguousarray(x.data.reshape(shape)), (x,), backward)


def transpose(x: Tensor) -> Tensor:
    if x.ndim != 2:
        raise ValueError("transpose expects a 2-D tensor")

    def backward(g):
        _accumulate(x, np.ascontiguousarray(g.T))

    return _from_op(np.ascontiguousarray(x.data.T), (x,), backward)


def concat_lastdim(parts: Sequence[Tensor]) -> Tensor:
    if not parts:
        raise ValueError("concat of zero tensors")
    lead = parts[0].shape[:-1]
    for p in parts:
        if p.shape[:-1] != lead:
            raise ValueError("concat leading-dimension mismatch")
    widths = [p.shape[-1] for p in parts]
    offsets = np.cumsum([0] + widths)

    def backward(g):
        for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            _accumulate(p, np.ascontiguousarray(g[..., lo:hi]))

    return _from_op(np.concatenate([p.data for p in parts], axis=-1), tuple(parts), backward)


def take_channel(x: Tensor, idx: int) -> Tensor:
    """Select one index from the last axis; shape drops that axis."""
    c = x.shape[-1]
    if not 0 <= idx < c:
        raise ValueError(f"channel {idx} out of range for {x.shape}")

    def backward(g):
        gx = np.zeros_like(x.data)
        gx[..., idx] = g
        _accumulate(x, gx)

    return _from_op(np.ascontiguousarray(x.data[..., idx]), (x,), backward)


# ---------------------------------------------------------------------------
# nonlinearities and reductions

def relu(x: Tensor) -> Tensor:
    mask = x.data > 0

    def backward(g):
        _accumulate(x, g * mask)

    return _from_op(np.where(mask, x.data, 0.0), (x,), backward)


def sigmoid(x: Tensor) -> Tensor:
    s = 1.0 / (1.0 + np.exp(-x.data))

    def backward(g):
        _accumulate(x, g * s * (1.0 - s))

    return _from_op(s, (x,), backward)


def tanh(x: Tensor) -> Tensor:
    t = np.tanh(x.data)

    def backward(g):
        _accumulate(x, g * (1.0 - t * t))

    return _from_op(t, (x,), backward)


def log(x: Tensor) -> Tensor:
    def backward(g):
        _accumulate(x, g / x.data)

    return _from_op(np.log(x.data), (x,), backward)


def power(x: Tensor, p: float) -> Tensor:
    """Elementwise x**p for a fixed non-negative exponent."""
    p = float(p)
    out = x.data ** p

    def backward(g):
        if p == 0.0:
            return
        _accumulate(x, g * p * x.data ** (p - 1.0))

    return _from_op(out, (x,), backward)


def clamp(x: Tensor, lo: float, hi: float) -> Tensor:
    mask = (x.data >= lo) & (x.data <= hi)

    def backward(g):
        _accumulate(x, g * mask)

    return _from_op(np.clip(x.data, lo, hi), (x,), backward)


def sum_all(x: Tensor) -> Tensor:
    def backward(g):
        _accumulate(x, np.full_like(x.data, float(g)))

    return _from_op(np.array(x.data.sum()), (x,), backward)


def mean_all(x: Tensor) -> Tensor:
    n = x.size

    def backward(g):
        _accumulate(x, np.full_like(x.data, float(g) / n))

    return _from_op(np.array(x.data.mean()), (x,), backward)


# ---------------------------------------------------------------------------
# linear algebra

def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2:
        raise ValueError("matmul expects 2-D tensors")
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul inner-dim mismatch: {a.shape} @ {b.shape}")

    def backward(g):
        _accumulate(a, g @ b.data.T)
        _accumulate(b, a.data.T @ g)

    return _from_op(a.data @ b.data, (a, b), backward)


def softmax_lastdim(x: Tensor) -> Tensor:
    """Numerically stable softmax over the last axis (max subtraction)."""
    if x.size == 0 or x.shape[-1] == 0:
        raise ValueError("softmax of an empty tensor")
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        dot = (g * s).sum(axis=-1, keepdims=True)
        _accumulate(x, s * (g - dot))

    return _from_op(s, (x,), backward)


def l2_normalize_rows(x: Tensor) -> Tensor:
    """Divide each last-axis vector by max(||v||2, eps); zero rows stay zero."""
    norms = np.sqrt((x.data * x.data).sum(axis=-1, keepdims=True))
    denom = np.maximum(norms, NORMALIZE_EPS)
    out = x.data / denom
    live = norms > NORMALIZE_EPS

    def backward(g):
        dot = (g * x.data).sum(axis=-1, keepdims=True)
        gx = g / denom - np.where(live, x.data * dot / (denom ** 3), 0.0)
        _accumulate(x, gx)

    return _from_op(out, (x,), backward)


# ---------------------------------------------------------------------------
# spatial ops (H x W x C layout)

def avg_pool2d(x: Tensor, kh: int, kw: int) -> Tensor:
    """Mean pooling with stride == kernel; ragged edge windows average their
    actual extent. Kernels must fit inside the map (full-span allowed)."""
    if x.ndim != 3:
        raise ValueError("avg_pool2d expects an H x W x C tensor")
    h, w, c = x.shape
    if kh < 1 or kw < 1:
        raise ValueError("pooling kernel extents must be >= 1")
    if kh > h or kw > w:
        raise ValueError(f"pooling kernel {kh}x{kw} exceeds input {h}x{w}")
    oh = -(-h // kh)
    ow = -(-w // kw)
    row_edges = [(i * kh, min((i + 1) * kh, h)) for i in range(oh)]
    col_edges = [(j * kw, min((j + 1) * kw, w)) for j in range(ow)]
    out = np.empty((oh, ow, c))
    for i, (r0, r1) in enumerate(row_edges):
        for j, (c0, c1) in enumerate(col_edges):
            out[i, j] = x.data[r0:r1, c0:c1].mean(axis=(0, 1))

    def backward(g):
        gx = np.zeros_like(x.data)
        for i, (r0, r1) in enumerate(row_edges):
            for j, (c0, c1) in enumerate(col_edges):
                gx[r0:r1, c0:c1] += g[i, j] / ((r1 - r0) * (c1 - c0))
        _accumulate(x, gx)

    return _from_op(out, (x,), backward)


def _im2col(data: np.ndarray, kh: int, kw: int) -> np.ndarray:
    """Patch matrix (H*W, kh*kw*C) of a same-padded H x W x C map."""
    h, w, c = data.shape
    padded = np.pad(data, ((kh // 2, kh // 2), (kw // 2, kw // 2), (0, 0)))
    win = np.lib.stride_tricks.sliding_window_view(padded, (kh, kw), axis=(0, 1))
    return win.transpose(0, 1, 3, 4, 2).reshape(h * w, kh * kw * c)


def conv2d(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """Same-padded cross-correlation. ``x`` is H x W x Cin, ``weight`` is
    kh x kw x Cin x Cout with odd extents, ``bias`` is (Cout,)."""
    if x.ndim != 3 or weight.ndim != 4:
        raise ValueError("conv2d expects H x W x Cin input and kh x kw x Cin x Cout weight")
    h, w, cin = x.shape
    kh, kw, wcin, cout = weight.shape
    if kh % 2 == 0 or kw % 2 == 0:
        raise ValueError(f"conv2d kernel extents must be odd, got {kh}x{kw}")
    if wcin != cin:
        raise ValueError(f"conv2d channel mismatch: input {cin}, weight {wcin}")
    if bias.shape != (cout,):
        raise ValueError(f"conv2d bias shape {bias.shape} != ({cout},)")
    wmat = weight.data.reshape(kh * kw * cin, cout)
    cols = _im2col(x.data, kh, kw)
    out = (cols @ wmat + bias.data).reshape(h, w, cout)

    def backward(g):
        gflat = g.reshape(h * w, cout)
        _accumulate(weight, (cols.T @ gflat).reshape(weight.shape))
        _accumulate(bias, gflat.sum(axis=0))
        # input gradient is the same-padded correlation of g with the
        # spatially flipped kernel, contracted over output channels
        wflip = weight.data[::-1, ::-1].transpose(0, 1, 3, 2).reshape(kh * kw * cout, cin)
        gcols = _im2col(np.ascontiguousarray(g), kh, kw)
        _accumulate(x, (gcols @ wflip).reshape(h, w, cin))

    return _from_op(out, (x, weight, bias), backward)


_RESIZE_CACHE: dict = {}


def _resize_matrix(n_in: int, n_out: int) -> np.ndarray:
    """Half-pixel-center bilinear interpolation weights (n_out x n_in)."""
    key = (n_in, n_out)
    m = _RESIZE_CACHE.get(key)
    if m is not None:
        return m
    if n_in == n_out:
        m = np.eye(n_in)
    else:
        pos = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
        pos = np.clip(pos, 0.0, n_in - 1.0)
        i0 = np.minimum(np.floor(pos).astype(int), n_in - 1)
        i1 = np.minimum(i0 + 1, n_in - 1)
        frac = pos - i0
        m = np.zeros((n_out, n_in))
        m[np.arange(n_out), i0] += 1.0 - frac
        m[np.arange(n_out), i1] += frac
    _RESIZE_CACHE[key] = m
    return m


def _resample(data: np.ndarray, rmat: np.ndarray, cmat: np.ndarray) -> np.ndarray:
    """Apply per-axis interpolation matrices: out[o,p,c] = R[o,i] C[p,j] x[i,j,c]."""
    tmp = np.tensordot(rmat, data, axes=(1, 0))        # (Ho, w, c)
    out = np.tensordot(cmat, tmp, axes=(1, 1))         # (Wo, Ho, c)
    return np.ascontiguousarray(out.transpose(1, 0, 2))


def bilinear_resize(x: Tensor, out_h: int, out_w: int) -> Tensor:
    """Bilinear resampling with half-pixel centers (align_corners=False).
    Exact identity when the target size equals the source size."""
    if x.ndim != 3:
        raise ValueError("bilinear_resize expects an H x W x C tensor")
    if out_h < 1 or out_w < 1:
        raise ValueError("resize target extents must be >= 1")
    h, w, _ = x.shape
    if (out_h, out_w) == (h, w):
        def backward_id(g):
            _accumulate(x, g)

        return _from_op(x.data, (x,), backward_id)
    rmat = _resize_matrix(h, out_h)
    cmat = _resize_matrix(w, out_w)
    out = _resample(x.data, rmat, cmat)

    def backward(g):
        _accumulate(x, _resample(g, rmat.T, cmat.T))

    return _from_op(out, (x,), backward)


def bilinear_resize_np(arr: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Gradient-free resize for plain arrays; same sampling as bilinear_resize."""
    squeeze = arr.ndim == 2
    if squeeze:
        arr = arr[:, :, None]
    h, w, _ = arr.shape
    if (out_h, out_w) != (h, w):
        arr = _resample(arr, _resize_matrix(h, out_h), _resize_matrix(w, out_w))
    return arr[:, :, 0].copy() if squeeze else np.ascontiguousarray(arr)


# ---------------------------------------------------------------------------
# gated recurrent update

def gru_cell(x: Tensor, h: Tensor, p: dict) -> Tensor:
    """One GRU step over B x d rows.

    Convention: z = sig(xWz + hUz + bz), r = sig(xWr + hUr + br),
    n = tanh(xWn + bn + r * (hUn)), out = (1 - z) * n + z * h.
    ``p`` maps the names wz,uz,bz,wr,ur,br,wn,un,bn to tensors.
    """
    if x.shape != h.shape or x.ndim != 2:
        raise ValueError(f"gru_cell expects matching B x d inputs, got {x.shape} and {h.shape}")
    z = sigmoid(add_bias(add(matmul(x, p["wz"]), matmul(h, p["uz"])), p["bz"]))
    r = sigmoid(add_bias(add(matmul(x, p["wr"]), matmul(h, p["ur"])), p["br"]))
    n = tanh(add(add_bias(matmul(x, p["wn"]), p["bn"]), mul(r, matmul(h, p["un"]))))
    one_minus_z = sadd(smul(z, -1.0), 1.0)
    return add(mul(one_minus_z, n), mul(z, h))


def attention(q: Tensor, k: Tensor, v: Tensor, d_k: int) -> Tensor:
    """Scaled dot-product attention over row-token matrices."""
    scores = smul(matmul(q, transpose(k)), 1.0 / math.sqrt(d_k))
    return matmul(softmax_lastdim(scores), v)
