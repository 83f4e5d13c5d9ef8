"""Named trainable parameters, checkpoint serialization, finite-difference checks.

Checkpoints are flat binary files: the magic string ``CSAM1`` followed by one
record per parameter in sorted-name order. Each record is: name length (u64
little-endian), name bytes (utf-8), rank (u64 LE), extents (u64 LE each), then
the buffer as little-endian float64 in row-major order.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Callable, Iterable, Optional

import numpy as np

from .tensor import Tensor

CHECKPOINT_MAGIC = b"CSAM1"


@dataclass
class Param:
    """A named leaf tensor; names are unique within a store."""
    name: str
    tensor: Tensor


class ParamStore:
    """Creates, tracks and serializes the parameters of one model instance.

    Initialization draws from a single seeded generator in creation order, so
    a fixed seed plus a fixed model-construction order is fully deterministic.
    Gradient buffers exist only when ``training`` is true.
    """

    def __init__(self, seed: int, training: bool = True):
        self.seed = int(seed)
        self.training = bool(training)
        self._params: dict[str, Param] = {}
        self._rng = np.random.default_rng(seed)

    def make(self, name: str, shape, fan_in: int) -> Tensor:
        """New parameter initialized uniform(-1/sqrt(fan_in), +1/sqrt(fan_in))."""
        if name in self._params:
            raise ValueError(f"duplicate parameter name: {name}")
        bound = 1.0 / np.sqrt(max(int(fan_in), 1))
        data = self._rng.uniform(-bound, bound, size=tuple(shape))
        t = Tensor(data, requires_grad=self.training)
        self._params[name] = Param(name, t)
        return t

    def params(self) -> list[Param]:
        return [self._params[k] for k in sorted(self._params)]

    def __len__(self) -> int:
        return len(self._params)

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def get(self, name: str) -> Tensor:
        return self._params[name].tensor

    def zero_grad(self) -> None:
        for p in self._params.values():
            p.tensor.grad = None

    # -- checkpoint I/O ----------------------------------------------------

    def save(self, path) -> None:
        with open(path, "wb") as fh:
            fh.write(CHECKPOINT_MAGIC)
            for p in self.params():
                name = p.name.encode("utf-8")
                arr = np.ascontiguousarray(p.tensor.data, dtype="<f8")
                fh.write(struct.pack("<Q", len(name)))
                fh.write(name)
                fh.write(struct.pack("<Q", arr.ndim))
                for ext in arr.shape:
                    fh.write(struct.pack("<Q", ext))
                fh.write(arr.tobytes())

    def load(self, path) -> None:
        """Overwrite existing parameter values; names and shapes must match."""
        records = read_checkpoint(path)
        expected = {p.name: p.tensor.shape for p in self.params()}
        got = {name: arr.shape for name, arr in records.items()}
        if expected != got:
            missing = sorted(set(expected) - set(got))
            extra = sorted(set(got) - set(expected))
            shapes = sorted(k for k in expected.keys() & got.keys()
                            if expected[k] != got[k])
            raise ValueError(
                "checkpoint incompatible with model: "
                f"missing={missing} extra={extra} shape_mismatch={shapes}")
        for name, arr in records.items():
            self._params[name].tensor.data = arr


def read_checkpoint(path) -> dict[str, np.ndarray]:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:5] != CHECKPOINT_MAGIC:
        raise ValueError(f"bad checkpoint magic in {path!r}")
    pos = 5
    records: dict[str, np.ndarray] = {}

    def take_u64():
        nonlocal pos
        (v,) = struct.unpack_from("<Q", blob, pos)
        pos += 8
        return v

    while pos < len(blob):
        nlen = take_u64()
        name = blob[pos:pos + nlen].decode("utf-8")
        pos += nlen
        rank = take_u64()
        shape = tuple(take_u64() for _ in range(rank))
        count = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(blob, dtype="<f8", count=count, offset=pos).reshape(shape)
        pos += 8 * count
        records[name] = np.ascontiguousarray(arr, dtype=np.float64)
    return records


# ---------------------------------------------------------------------------
# finite-difference gradient verification

def max_relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-8)
    return float(np.max(np.abs(analytic - numeric) / denom))


def analytic_gradients(f: Callable[[], Tensor], params: Iterable[Param]) -> dict[str, np.ndarray]:
    params = list(params)
    for p in params:
        p.tensor.grad = None
    loss = f()
    if not np.isfinite(loss.item()):
        raise ValueError("non-finite loss at gradient-check probe point")
    loss.backward()
    return {p.name: (np.zeros_like(p.tensor.data) if p.tensor.grad is None
                     else p.tensor.grad.copy()) for p in params}


def numeric_gradients(f: Callable[[], Tensor], params: Iterable[Param],
                      step: float = 1e-5) -> dict[str, np.ndarray]:
    grads: dict[str, np.ndarray] = {}
    for p in list(params):
        data = p.tensor.data
        g = np.zeros_like(data)
        flat = data.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            up = f().item()
            flat[i] = orig - step
            down = f().item()
            flat[i] = orig
            gflat[i] = (up - down) / (2.0 * step)
        grads[p.name] = g
    return grads


def grad_check(f: Callable[[], Tensor], params: Iterable[Param],
               seed: Optional[int] = None, step: float = 1e-5) -> float:
    """Worst relative error between reverse-mode and central-difference
    gradients over every entry of every parameter.

    When ``seed`` is given, parameters are first overwritten with uniform
    values in [-0.5, 0.5] so the probe point is reproducible.
    """
    params = list(params)
    if seed is not None:
        rng = np.random.default_rng(seed)
        for p in params:
            p.tensor.data = rng.uniform(-0.5, 0.5, size=p.tensor.shape)
    analytic = analytic_gradients(f, params)
    numeric = numeric_gradients(f, params, step=step)
    return max(max_relative_error(analytic[k], numeric[k]) for k in analytic)
