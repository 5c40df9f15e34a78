"""Dense kernels for sign (+/-1) weight matrices.

A :class:`SignMatrix` stores one bit per entry, row-major, least-significant
bit first within each byte; bit 1 means +1.  The single-vector kernels apply
signs by conditional add/subtract.  The batched kernels feed a dense +/-1
float matrix to BLAS; a product with +/-1 is exact, so the result only
differs from add/subtract by summation order.
"""
from __future__ import annotations

import contextlib
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np


@dataclass
class OpCounter:
    """Logical operation tally, filled in by the kernels while active."""

    shift: int = 0
    add: int = 0
    multiply: int = 0


_counters: list[OpCounter] = []


@contextlib.contextmanager
def count_ops():
    counter = OpCounter()
    _counters.append(counter)
    try:
        yield counter
    finally:
        _counters.remove(counter)


def _tally(shift: int = 0, add: int = 0, multiply: int = 0) -> None:
    for c in _counters:
        c.shift += shift
        c.add += add
        c.multiply += multiply


@dataclass(frozen=True, eq=False)
class SignMatrix:
    rows: int
    cols: int
    bits: bytes = field(repr=False)

    def __post_init__(self) -> None:
        if self.rows < 0 or self.cols < 0:
            raise ValueError("negative dimension")
        expected = -(-self.rows * self.cols // 8)
        if len(self.bits) != expected:
            raise ValueError(f"expected {expected} packed bytes for {self.rows}x{self.cols}, got {len(self.bits)}")

    @classmethod
    def from_signs(cls, signs: np.ndarray) -> SignMatrix:
        """Pack a 2-D array; entries >= 0 become +1, negative entries -1."""
        signs = np.asarray(signs)
        if signs.ndim != 2:
            raise ValueError("sign matrix must be 2-D")
        packed = np.packbits((signs >= 0).ravel(), bitorder="little")
        return cls(signs.shape[0], signs.shape[1], packed.tobytes())

    @property
    def shape(self) -> tuple[int, int]:
        return (self.rows, self.cols)

    @property
    def nbytes(self) -> int:
        return len(self.bits)

    @cached_property
    def positive(self) -> np.ndarray:
        """Boolean mask of +1 entries."""
        flat = np.unpackbits(np.frombuffer(self.bits, dtype=np.uint8), bitorder="little",
                             count=self.rows * self.cols)
        mask = flat.astype(bool).reshape(self.rows, self.cols)
        mask.flags.writeable = False
        return mask

    @cached_property
    def dense(self) -> np.ndarray:
        """+/-1 float64 copy for BLAS kernels."""
        d = np.where(self.positive, 1.0, -1.0)
        d.flags.writeable = False
        return d

    def to_signs(self) -> np.ndarray:
        return np.where(self.positive, 1, -1).astype(np.int8)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, SignMatrix):
            return NotImplemented
        return self.shape == other.shape and self.bits == other.bits

    def __hash__(self) -> int:
        return hash((self.rows, self.cols, self.bits))


def matvec_sign(w: SignMatrix, x: np.ndarray) -> np.ndarray:
    """y_i = sum_j s_ij x_j, by adding x_j where s_ij = +1 and subtracting elsewhere."""
    x = np.asarray(x)
    if x.ndim != 1 or x.shape[0] != w.cols:
        raise ValueError(f"matvec_sign: matrix is {w.rows}x{w.cols}, vector has shape {x.shape}")
    _tally(shift=w.rows * w.cols, add=w.rows * w.cols)
    pos = w.positive
    y = np.empty(w.rows, dtype=np.result_type(x.dtype, np.int64) if x.dtype.kind in "iu" else x.dtype)
    for i in range(w.rows):
        y[i] = x[pos[i]].sum() - x[~pos[i]].sum()
    return y


def matvec_sign_transpose(w: SignMatrix, g: np.ndarray) -> np.ndarray:
    """y_j = sum_i s_ij g_i."""
    g = np.asarray(g)
    if g.ndim != 1 or g.shape[0] != w.rows:
        raise ValueError(f"matvec_sign_transpose: matrix is {w.rows}x{w.cols}, vector has shape {g.shape}")
    _tally(shift=w.rows * w.cols, add=w.rows * w.cols)
    pos = w.positive
    y = np.empty(w.cols, dtype=np.result_type(g.dtype, np.int64) if g.dtype.kind in "iu" else g.dtype)
    for j in range(w.cols):
        y[j] = g[pos[:, j]].sum() - g[~pos[:, j]].sum()
    return y


def outer_accumulate(g: np.ndarray, a: np.ndarray) -> np.ndarray:
    """G_ij = g_i a_j.  With 2-D inputs (batch first) the outer products are summed over the batch."""
    g = np.asarray(g)
    a = np.asarray(a)
    if g.ndim == 1 and a.ndim == 1:
        _tally(multiply=g.size * a.size)
        return np.outer(g, a)
    if g.ndim != 2 or a.ndim != 2 or g.shape[0] != a.shape[0]:
        raise ValueError(f"outer_accumulate: incompatible shapes {g.shape} and {a.shape}")
    n = g.shape[0]
    _tally(multiply=n * g.shape[1] * a.shape[1], add=n * g.shape[1] * a.shape[1])
    return g.T @ a


def sign_matmul(w: SignMatrix, x: np.ndarray) -> np.ndarray:
    """Batched :func:`matvec_sign`: rows of ``x`` (batch x cols) -> batch x rows."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != w.cols:
        raise ValueError(f"sign_matmul: matrix is {w.rows}x{w.cols}, input has shape {x.shape}")
    _tally(shift=x.shape[0] * w.rows * w.cols, add=x.shape[0] * w.rows * w.cols)
    return x @ w.dense.T


def sign_matmul_transpose(w: SignMatrix, g: np.ndarray) -> np.ndarray:
    """Batched :func:`matvec_sign_transpose`: batch x rows -> batch x cols."""
    g = np.asarray(g, dtype=np.float64)
    if g.ndim != 2 or g.shape[1] != w.rows:
        raise ValueError(f"sign_matmul_transpose: matrix is {w.rows}x{w.cols}, input has shape {g.shape}")
    _tally(shift=g.shape[0] * w.rows * w.cols, add=g.shape[0] * w.rows * w.cols)
    return g @ w.dense
