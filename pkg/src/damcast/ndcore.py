"""Dense float64 tensors with a reverse-mode gradient tape.

Everything above this module (projections, attention, LSTM, fusion) is
composed from the ops defined here. Tensors are row-major float64 arrays
of rank 1-3; any op that would produce a NaN/Inf raises NumericError
immediately instead of letting it propagate.

Gradients are recorded on a GradTape while it is active (context
manager). One tape is confined to one thread; separate tapes may run on
separate threads. `backward` consumes the tape and accumulates gradients
into the `.grad` buffer of every leaf tensor flagged `requires_grad`.
"""

from __future__ import annotations

import json
import threading
from pathlib import Path
from typing import Callable, Iterable, Mapping

import numpy as np

from .errors import DataError, DimensionError, GraphError, NumericError

_WEIGHT_DTYPE = "<f8"  # little-endian float64, fixed for portability


class Tensor:
    """Row-major float64 array of rank 1-3 plus an optional grad buffer."""

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.ascontiguousarray(data, dtype=np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(1)
        if not 1 <= arr.ndim <= 3:
            raise DimensionError(f"tensor rank must be 1-3, got shape {arr.shape}")
        if not np.isfinite(arr).all():
            raise NumericError("tensor initialized with non-finite values")
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise DimensionError(f"item() needs a single element, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:  # pragma: no cover - debug aid
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


def tensor(data, requires_grad: bool = False) -> Tensor:
    """Convenience constructor mirroring the class."""
    return Tensor(data, requires_grad=requires_grad)


# --------------------------------------------------------------------------
# gradient tape
# --------------------------------------------------------------------------

_tape_stack = threading.local()


def _stack() -> list["GradTape"]:
    if not hasattr(_tape_stack, "stack"):
        _tape_stack.stack = []
    return _tape_stack.stack


def active_tape() -> "GradTape | None":
    stack = _stack()
    return stack[-1] if stack else None


class GradTape:
    """Ordered record of executed ops, consumed by `backward`.

    Each record is (inputs, output, rule) where rule maps the output
    gradient to per-input gradients (None for non-differentiable args).
    Execution order is topological order by construction.
    """

    def __init__(self):
        self._records: list[tuple[tuple[Tensor, ...], Tensor, Callable]] = []

    def __enter__(self) -> "GradTape":
        _stack().append(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        popped = _stack().pop()
        assert popped is self, "GradTape contexts must nest"

    def __len__(self) -> int:
        return len(self._records)

    def record(self, inputs: tuple[Tensor, ...], out: Tensor, rule: Callable) -> None:
        self._records.append((inputs, out, rule))


def _quiet():
    # float64 overflow is detected by the finiteness check and raised as
    # NumericError; numpy's own warning would just be noise before that.
    return np.errstate(over="ignore", invalid="ignore")


def _finish(out_arr: np.ndarray, inputs: tuple[Tensor, ...], rule: Callable) -> Tensor:
    """Wrap an op result, enforce finiteness, and record it if taping."""
    if not np.isfinite(out_arr).all():
        raise NumericError("operation produced non-finite values")
    out = Tensor.__new__(Tensor)
    out.data = out_arr
    out.requires_grad = False
    out.grad = None
    tape = active_tape()
    if tape is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        tape.record(inputs, out, rule)
    return out


def backward(loss: Tensor, tape: GradTape) -> None:
    """Accumulate d(loss)/d(leaf) into each requires_grad leaf's `.grad`.

    Walks the tape once in reverse execution order; fan-out gradients sum.
    The tape is cleared afterwards and cannot be replayed.
    """
    if loss.size != 1:
        raise GraphError(f"backward needs a scalar loss, got shape {loss.shape}")
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    holders: dict[int, Tensor] = {id(loss): loss}
    for inputs, out, rule in reversed(tape._records):
        g_out = grads.pop(id(out), None)
        holders.pop(id(out), None)
        if g_out is None:
            continue
        for t, g in zip(inputs, rule(g_out)):
            if g is None or not t.requires_grad:
                continue
            key = id(t)
            if key in grads:
                grads[key] = grads[key] + g
            else:
                grads[key] = g
                holders[key] = t
    for key, g in grads.items():
        t = holders[key]
        if t.requires_grad:
            t.grad = g.copy() if t.grad is None else t.grad + g
    tape._records.clear()


def zero_grad(params: Iterable[Tensor]) -> None:
    for p in params:
        p.zero_grad()


# --------------------------------------------------------------------------
# ops
# --------------------------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product; also accepts a rank-1 left operand (row vector)."""
    if a.data.ndim == 2 and b.data.ndim == 2:
        if a.shape[1] != b.shape[0]:
            raise DimensionError(f"matmul inner dims disagree: {a.shape} x {b.shape}")
        with _quiet():
            out = a.data @ b.data

        def rule(g, a=a.data, b=b.data):
            return g @ b.T, a.T @ g

        return _finish(out, (a, b), rule)
    if a.data.ndim == 1 and b.data.ndim == 2:
        if a.shape[0] != b.shape[0]:
            raise DimensionError(f"matmul inner dims disagree: {a.shape} x {b.shape}")
        with _quiet():
            out = a.data @ b.data

        def rule(g, a=a.data, b=b.data):
            return b @ g, np.outer(a, g)

        return _finish(out, (a, b), rule)
    raise DimensionError(f"matmul supports (m,k)x(k,n) or (k,)x(k,n), got {a.shape} x {b.shape}")


def transpose(a: Tensor) -> Tensor:
    if a.data.ndim != 2:
        raise DimensionError(f"transpose needs a rank-2 tensor, got shape {a.shape}")
    return _finish(np.ascontiguousarray(a.data.T), (a,), lambda g: (g.T,))


def softmax_rows(x: Tensor) -> Tensor:
    """Row-wise softmax with max subtraction for stability."""
    if x.data.ndim != 2:
        raise DimensionError(f"softmax_rows needs a rank-2 tensor, got shape {x.shape}")
    shifted = x.data - x.data.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=1, keepdims=True)

    def rule(g, y=y):
        return (y * (g - (g * y).sum(axis=1, keepdims=True)),)

    return _finish(y, (x,), rule)


def sigmoid(x: Tensor) -> Tensor:
    d = x.data
    out = np.empty_like(d)
    pos = d >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-d[pos]))
    ex = np.exp(d[~pos])
    out[~pos] = ex / (1.0 + ex)

    def rule(g, s=out):
        return (g * s * (1.0 - s),)

    return _finish(out, (x,), rule)


def tanh_act(x: Tensor) -> Tensor:
    out = np.tanh(x.data)

    def rule(g, t=out):
        return (g * (1.0 - t * t),)

    return _finish(out, (x,), rule)


def _check_same_shape(op: str, a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape:
        raise DimensionError(f"{op} needs matching shapes, got {a.shape} and {b.shape}")


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape("add", a, b)
    with _quiet():
        out = a.data + b.data
    return _finish(out, (a, b), lambda g: (g, g))


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape("sub", a, b)
    with _quiet():
        out = a.data - b.data
    return _finish(out, (a, b), lambda g: (g, -g))


def hadamard(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape("hadamard", a, b)

    def rule(g, a=a.data, b=b.data):
        return g * b, g * a

    with _quiet():
        out = a.data * b.data
    return _finish(out, (a, b), rule)


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)
    if not np.isfinite(c):
        raise NumericError("scale factor must be finite")
    with _quiet():
        out = a.data * c
    return _finish(out, (a,), lambda g, c=c: (g * c,))


def concat(a: Tensor, b: Tensor, axis: int) -> Tensor:
    if a.data.ndim != b.data.ndim:
        raise DimensionError(f"concat needs equal ranks, got {a.shape} and {b.shape}")
    if not 0 <= axis < a.data.ndim:
        raise DimensionError(f"concat axis {axis} out of range for rank {a.data.ndim}")
    for ax in range(a.data.ndim):
        if ax != axis and a.shape[ax] != b.shape[ax]:
            raise DimensionError(
                f"concat non-concat dims must match, got {a.shape} and {b.shape} on axis {axis}"
            )
    split = a.shape[axis]

    def rule(g, split=split, axis=axis):
        head = [slice(None)] * g.ndim
        tail = [slice(None)] * g.ndim
        head[axis] = slice(0, split)
        tail[axis] = slice(split, None)
        return g[tuple(head)], g[tuple(tail)]

    return _finish(np.concatenate([a.data, b.data], axis=axis), (a, b), rule)


def add_rowvec(a: Tensor, v: Tensor) -> Tensor:
    """Add a rank-1 vector to every row of a rank-2 tensor."""
    if a.data.ndim != 2 or v.data.ndim != 1 or a.shape[1] != v.shape[0]:
        raise DimensionError(f"add_rowvec needs (T,n) and (n,), got {a.shape} and {v.shape}")

    def rule(g):
        return g, g.sum(axis=0)

    return _finish(a.data + v.data, (a, v), rule)


def take_row(a: Tensor, index: int) -> Tensor:
    """Select one row of a rank-2 tensor as a rank-1 tensor."""
    if a.data.ndim != 2:
        raise DimensionError(f"take_row needs a rank-2 tensor, got shape {a.shape}")
    if not 0 <= index < a.shape[0]:
        raise DimensionError(f"row {index} out of range for shape {a.shape}")

    def rule(g, shape=a.shape, index=index):
        full = np.zeros(shape)
        full[index] = g
        return (full,)

    return _finish(a.data[index].copy(), (a,), rule)


def sum_all(a: Tensor) -> Tensor:
    def rule(g, shape=a.shape):
        return (np.full(shape, g[0]),)

    return _finish(np.array([a.data.sum()]), (a,), rule)


def mean_all(a: Tensor) -> Tensor:
    n = a.size

    def rule(g, shape=a.shape, n=n):
        return (np.full(shape, g[0] / n),)

    return _finish(np.array([a.data.mean()]), (a,), rule)


# --------------------------------------------------------------------------
# weight serialization: flat little-endian float64 blob + JSON manifest
# --------------------------------------------------------------------------


def save_tensors(named: Mapping[str, Tensor], bin_path, manifest_path) -> None:
    """Write tensors as one concatenated <f8 buffer plus a sidecar manifest.

    The manifest records (name, shape, byte offset) per tensor; round
    trips are bit-exact.
    """
    bin_path, manifest_path = Path(bin_path), Path(manifest_path)
    entries = []
    offset = 0
    chunks = []
    for name, t in named.items():
        raw = np.ascontiguousarray(t.data, dtype=_WEIGHT_DTYPE).tobytes()
        entries.append({"name": name, "shape": list(t.shape), "offset": offset})
        offset += len(raw)
        chunks.append(raw)
    bin_path.write_bytes(b"".join(chunks))
    manifest = {"format": "damcast-weights", "dtype": _WEIGHT_DTYPE, "tensors": entries}
    manifest_path.write_text(json.dumps(manifest, indent=2) + "\n")


def load_tensors(bin_path, manifest_path) -> dict[str, np.ndarray]:
    """Inverse of save_tensors; returns name -> float64 array."""
    blob = Path(bin_path).read_bytes()
    manifest = json.loads(Path(manifest_path).read_text())
    if manifest.get("format") != "damcast-weights":
        raise DataError(f"unrecognized weight manifest format in {manifest_path}")
    out: dict[str, np.ndarray] = {}
    for entry in manifest["tensors"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        start = entry["offset"]
        arr = np.frombuffer(blob, dtype=manifest["dtype"], count=count, offset=start)
        out[entry["name"]] = arr.reshape(shape).astype(np.float64)
    return out


def manifest_parameter_count(manifest_path) -> int:
    """Total scalar parameter count recorded in a weight manifest."""
    manifest = json.loads(Path(manifest_path).read_text())
    return sum(int(np.prod(e["shape"])) for e in manifest["tensors"])
