"""Reverse-mode automatic differentiation on a define-by-run tape.

Every differentiable operation validates its operands, computes the forward
value with numpy (float64 throughout; reductions therefore accumulate in
64-bit), and, when a Tape is supplied, appends a record holding the operand
references and a backward closure over the saved forward values. The tape is
an ordered log of executed operations, so replaying it in reverse is already
a valid topological order and one sweep per record suffices.

Non-finite results never propagate silently: each op checks its output and
raises NumericsError naming itself.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import (
    ContractError,
    DegenerateInputError,
    DomainError,
    NumericsError,
    ShapeError,
)

_uid_counter = itertools.count()


class Tensor:
    """Immutable dense float64 array tracked (by identity) on a tape."""

    __slots__ = ("data", "uid")

    def __init__(self, data):
        arr = np.asarray(data, dtype=np.float64)
        arr.setflags(write=False)
        self.data = arr
        self.uid = next(_uid_counter)

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(
                f"item() needs a size-1 tensor, got shape {list(self.shape)}"
            )
        return float(self.data.reshape(()))

    def __float__(self) -> float:
        return self.item()

    def __repr__(self):
        return f"Tensor(shape={list(self.shape)}, uid={self.uid})"


def tensor(data) -> Tensor:
    """Create a leaf tensor from a copy of data. Leaves must be finite."""
    t = Tensor(np.array(data, dtype=np.float64))
    if not np.all(np.isfinite(t.data)):
        raise NumericsError("leaf tensor holds non-finite values")
    return t


@dataclass
class TapeRecord:
    op: str
    inputs: tuple
    output: Tensor
    vjp: Callable[[np.ndarray], tuple]


class Tape:
    """Ordered record of executed differentiable operations.

    Rebuilt each training step. Operand tensors of every record were either
    produced by an earlier record or are leaves, so record order is a
    topological order of the computation graph by construction.
    """

    def __init__(self):
        self.records: list[TapeRecord] = []
        self._produced: set[int] = set()

    def record(self, op: str, inputs: Sequence[Tensor], output: Tensor, vjp) -> None:
        self.records.append(TapeRecord(op, tuple(inputs), output, vjp))
        self._produced.add(output.uid)

    def produced(self, t: Tensor) -> bool:
        return t.uid in self._produced


class GradSet:
    """Gradients of one scalar root, queryable per leaf tensor.

    Leaves that do not influence the root get a zero gradient of their shape.
    """

    def __init__(self, grads: dict, root: Tensor):
        self._grads = grads
        self.root = root

    def wrt(self, t: Tensor) -> np.ndarray:
        g = self._grads.get(t.uid)
        if g is None:
            return np.zeros_like(t.data)
        return g

    def has(self, t: Tensor) -> bool:
        return t.uid in self._grads


def backward(root: Tensor, tape: Tape) -> GradSet:
    """One reverse sweep over the tape, accumulating vector-Jacobian products.

    root must be a scalar produced on this tape.
    """
    if root.data.size != 1:
        raise ContractError(
            f"backward root must be scalar, got shape {list(root.shape)}"
        )
    if not tape.produced(root):
        raise ContractError("backward root was not produced on this tape")
    grads: dict[int, np.ndarray] = {root.uid: np.ones_like(root.data)}
    for rec in reversed(tape.records):
        g_out = grads.get(rec.output.uid)
        if g_out is None:
            continue
        parts = rec.vjp(g_out)
        for operand, g in zip(rec.inputs, parts):
            if g is None:
                continue
            acc = grads.get(operand.uid)
            grads[operand.uid] = g if acc is None else acc + g
    return GradSet(grads, root)


# ---------------------------------------------------------------------------
# op helpers

def _check_finite(arr: np.ndarray, op: str) -> None:
    if not np.all(np.isfinite(arr)):
        raise NumericsError(f"non-finite values produced by op '{op}'")


def _require_ndim(t: Tensor, ndim: int, op: str) -> None:
    if t.ndim != ndim:
        raise ShapeError(
            f"{op} expects a {ndim}-d operand, got shape {list(t.shape)}"
        )


def _require_same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        raise ShapeError(
            f"{op} operands differ in shape: {list(a.shape)} vs {list(b.shape)}"
        )


def _emit(tape: Optional[Tape], op: str, inputs, out_data: np.ndarray, vjp) -> Tensor:
    _check_finite(out_data, op)
    out = Tensor(out_data)
    if tape is not None:
        tape.record(op, inputs, out, vjp)
    return out


# ---------------------------------------------------------------------------
# differentiable operations

def matmul(a: Tensor, b: Tensor, tape: Optional[Tape] = None) -> Tensor:
    """2-d matrix product. d(A@B) -> (g @ B^T, A^T @ g)."""
    _require_ndim(a, 2, "matmul")
    _require_ndim(b, 2, "matmul")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(
            f"matmul inner dims differ: {list(a.shape)} vs {list(b.shape)}"
        )
    ad, bd = a.data, b.data

    def vjp(g):
        return g @ bd.T, ad.T @ g

    return _emit(tape, "matmul", (a, b), ad @ bd, vjp)


def add(a: Tensor, b: Tensor, tape: Optional[Tape] = None) -> Tensor:
    _require_same_shape(a, b, "add")
    return _emit(tape, "add", (a, b), a.data + b.data, lambda g: (g, g))


def sub(a: Tensor, b: Tensor, tape: Optional[Tape] = None) -> Tensor:
    _require_same_shape(a, b, "sub")
    return _emit(tape, "sub", (a, b), a.data - b.data, lambda g: (g, -g))


def mul(a: Tensor, b: Tensor, tape: Optional[Tape] = None) -> Tensor:
    _require_same_shape(a, b, "mul")
    ad, bd = a.data, b.data
    return _emit(tape, "mul", (a, b), ad * bd, lambda g: (g * bd, g * ad))


def relu(a: Tensor, tape: Optional[Tape] = None) -> Tensor:
    """max(x, 0); the subgradient at exactly 0 is taken as 0."""
    mask = a.data > 0.0
    return _emit(tape, "relu", (a,), np.where(mask, a.data, 0.0), lambda g: (g * mask,))


def exp(a: Tensor, tape: Optional[Tape] = None) -> Tensor:
    with np.errstate(over="ignore"):
        out_data = np.exp(a.data)
    return _emit(tape, "exp", (a,), out_data, lambda g: (g * out_data,))


def log(a: Tensor, tape: Optional[Tape] = None) -> Tensor:
    if np.any(a.data <= 0.0):
        raise DomainError("log operand must be strictly positive")
    ad = a.data
    return _emit(tape, "log", (a,), np.log(ad), lambda g: (g / ad,))


def scale(a: Tensor, c: float, tape: Optional[Tape] = None) -> Tensor:
    """Multiply by a python scalar constant (not differentiated through c)."""
    c = float(c)
    if not np.isfinite(c):
        raise DomainError(f"scale constant must be finite, got {c}")
    return _emit(tape, "scale", (a,), a.data * c, lambda g: (g * c,))


_ELEMENTWISE = {"add": add, "sub": sub, "mul": mul, "relu": relu,
                "exp": exp, "log": log, "scale": scale}


def elementwise(op: str, operands: Sequence, tape: Optional[Tape] = None) -> Tensor:
    """Dispatch to one of the named elementwise ops by string."""
    fn = _ELEMENTWISE.get(op)
    if fn is None:
        raise ContractError(
            f"unknown elementwise op '{op}', expected one of {sorted(_ELEMENTWISE)}"
        )
    return fn(*operands, tape=tape)


def transpose(a: Tensor, tape: Optional[Tape] = None) -> Tensor:
    _require_ndim(a, 2, "transpose")
    return _emit(tape, "transpose", (a,), a.data.T.copy(), lambda g: (g.T,))


def bias_add(m: Tensor, b: Tensor, tape: Optional[Tape] = None) -> Tensor:
    """Add a length-d bias row to every row of an n-by-d matrix."""
    _require_ndim(m, 2, "bias_add")
    _require_ndim(b, 1, "bias_add")
    if m.shape[1] != b.shape[0]:
        raise ShapeError(
            f"bias_add width mismatch: {list(m.shape)} vs {list(b.shape)}"
        )
    return _emit(tape, "bias_add", (m, b), m.data + b.data,
                 lambda g: (g, g.sum(axis=0)))


def sum_all(a: Tensor, tape: Optional[Tape] = None) -> Tensor:
    shape = a.shape
    return _emit(tape, "sum_all", (a,), np.asarray(a.data.sum()),
                 lambda g: (np.full(shape, float(g)),))


def sum_axis(a: Tensor, axis: int, tape: Optional[Tape] = None) -> Tensor:
    _require_ndim(a, 2, "sum_axis")
    if axis not in (0, 1):
        raise ContractError(f"sum_axis axis must be 0 or 1, got {axis}")
    shape = a.shape

    def vjp(g):
        if axis == 0:
            return (np.broadcast_to(g[None, :], shape).copy(),)
        return (np.broadcast_to(g[:, None], shape).copy(),)

    return _emit(tape, "sum_axis", (a,), a.data.sum(axis=axis), vjp)


def take(a: Tensor, indices, tape: Optional[Tape] = None) -> Tensor:
    """Gather flat (row-major) positions into a 1-d tensor.

    Backward scatter-adds, so repeated indices accumulate.
    """
    idx = np.asarray(indices, dtype=np.int64)
    if idx.ndim != 1:
        raise ContractError(f"take indices must be 1-d, got shape {list(idx.shape)}")
    size = a.data.size
    if idx.size and (idx.min() < 0 or idx.max() >= size):
        raise ContractError(f"take index out of range for size {size}")
    shape = a.shape

    def vjp(g):
        buf = np.zeros(size, dtype=np.float64)
        np.add.at(buf, idx, g)
        return (buf.reshape(shape),)

    return _emit(tape, "take", (a,), a.data.reshape(-1)[idx].copy(), vjp)


def l2_normalize(v: Tensor, tape: Optional[Tape] = None) -> Tensor:
    """Normalize a vector to unit L2 norm. Zero vectors are degenerate."""
    _require_ndim(v, 1, "l2_normalize")
    n = float(np.linalg.norm(v.data))
    if n == 0.0:
        raise DegenerateInputError("l2_normalize input has zero norm")
    y = v.data / n

    def vjp(g):
        return ((g - y * float(y @ g)) / n,)

    return _emit(tape, "l2_normalize", (v,), y, vjp)


def l2_normalize_rows(m: Tensor, tape: Optional[Tape] = None) -> Tensor:
    """Normalize each row of a matrix to unit L2 norm."""
    _require_ndim(m, 2, "l2_normalize_rows")
    norms = np.linalg.norm(m.data, axis=1)
    zero = np.nonzero(norms == 0.0)[0]
    if zero.size:
        raise DegenerateInputError(
            f"l2_normalize_rows: row {int(zero[0])} has zero norm"
        )
    y = m.data / norms[:, None]

    def vjp(g):
        dots = np.sum(y * g, axis=1, keepdims=True)
        return ((g - y * dots) / norms[:, None],)

    return _emit(tape, "l2_normalize_rows", (m,), y, vjp)
