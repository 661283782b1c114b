"""Truncated power series in t with multiple-double complex coefficients."""
from __future__ import annotations

import threading
from contextlib import contextmanager
from dataclasses import dataclass

import numpy as np

from .expansion import Expansion, check_level
from .kernels import fast
from .linalg import ComplexMD, MatrixMD, VectorMD, lift_complex


class ShapeError(ValueError):
    pass


class NotInvertibleError(ZeroDivisionError):
    pass


@dataclass
class SeriesOpCounter:
    """Coefficient-level operations done by series products."""

    mults: int = 0
    adds: int = 0
    products: int = 0

    def add_raw(self, cnt) -> None:
        self.mults += int(cnt[0])
        self.adds += int(cnt[1])
        self.products += int(cnt[2])


_local = threading.local()


@contextmanager
def series_counting():
    """Tally series work done by this thread inside the block."""
    counter = SeriesOpCounter()
    stack = getattr(_local, "stack", None)
    if stack is None:
        stack = _local.stack = []
    stack.append(counter)
    try:
        yield counter
    finally:
        stack.pop()


def record(cnt) -> None:
    """Hand a raw kernel counter array to every active ``series_counting``."""
    for counter in getattr(_local, "stack", ()):
        counter.add_raw(cnt)


def _frozen(arr):
    arr = np.ascontiguousarray(arr, dtype=np.float64)
    arr.setflags(write=False)
    return arr


def _coef_data(c, k):
    if isinstance(c, ComplexMD):
        if c.k != k:
            raise ShapeError("coefficient precision mismatch")
        return c.data
    if isinstance(c, Expansion):
        out = np.zeros((2, k))
        out[0] = Expansion(c, k).limbs
        return out
    return lift_complex(complex(c), k)


class Series:
    """c_0 + c_1 t + ... + c_d t^d, stored as a (d+1, 2, k) array."""

    __slots__ = ("data",)

    def __init__(self, coeffs, k: int | None = None):
        if isinstance(coeffs, np.ndarray) and coeffs.dtype == np.float64 and coeffs.ndim == 3:
            data = coeffs
        else:
            coeffs = list(coeffs)
            if not coeffs:
                raise ShapeError("a series needs at least one coefficient")
            if k is None:
                k = next((c.k for c in coeffs if isinstance(c, (ComplexMD, Expansion))), 2)
            data = np.array([_coef_data(c, k) for c in coeffs])
        if data.shape[1] != 2:
            raise ShapeError(f"series data must be (d+1, 2, k), got {data.shape}")
        check_level(data.shape[2])
        self.data = _frozen(data)

    @classmethod
    def constant(cls, c, degree: int, k: int) -> "Series":
        data = np.zeros((degree + 1, 2, k))
        data[0] = _coef_data(c, k)
        return cls(data)

    @classmethod
    def zeros(cls, degree: int, k: int) -> "Series":
        return cls(np.zeros((degree + 1, 2, k)))

    @classmethod
    def variable(cls, degree: int, k: int) -> "Series":
        """The series t."""
        data = np.zeros((degree + 1, 2, k))
        if degree >= 1:
            data[1, 0, 0] = 1.0
        return cls(data)

    @property
    def degree(self) -> int:
        return self.data.shape[0] - 1

    @property
    def k(self) -> int:
        return self.data.shape[2]

    def __len__(self):
        return self.data.shape[0]

    def __getitem__(self, j) -> ComplexMD:
        return ComplexMD._wrap(self.data[j].copy())

    @property
    def coeffs(self) -> list[ComplexMD]:
        return [self[j] for j in range(len(self))]

    def to_complex(self) -> np.ndarray:
        return self.data[:, 0, 0] + 1j * self.data[:, 1, 0]

    def truncate(self, degree: int) -> "Series":
        if not 0 <= degree <= self.degree:
            raise ShapeError(f"cannot truncate degree {self.degree} to {degree}")
        return Series(self.data[: degree + 1].copy())

    def __add__(self, other):
        return ps_add(self, _as_series(other, self))

    __radd__ = __add__

    def __sub__(self, other):
        return ps_sub(self, _as_series(other, self))

    def __rsub__(self, other):
        return ps_sub(_as_series(other, self), self)

    def __mul__(self, other):
        return ps_mul(self, _as_series(other, self))

    __rmul__ = __mul__

    def __neg__(self):
        return Series(-self.data)

    def inverse(self) -> "Series":
        return ps_inverse(self)

    def __eq__(self, other):
        return isinstance(other, Series) and np.array_equal(self.data, other.data)

    def __hash__(self):
        return hash(self.data.tobytes())

    def __repr__(self):
        return f"Series(degree={self.degree}, k={self.k})"

    def __str__(self):
        return format_series(self)


def _as_series(other, like: Series) -> Series:
    if isinstance(other, Series):
        return other
    return Series.constant(other, like.degree, like.k)


def _check_pair(x: Series, y: Series) -> int:
    if x.data.shape != y.data.shape:
        raise ShapeError(f"series shapes differ: degree/precision {x.degree}/{x.k} vs {y.degree}/{y.k}")
    return x.k


def ps_add(x: Series, y: Series) -> Series:
    k = _check_pair(x, y)
    out = np.empty_like(x.data)
    fast.s_add(x.data, y.data, out, k)
    return Series(out)


def ps_sub(x: Series, y: Series) -> Series:
    k = _check_pair(x, y)
    out = np.empty_like(x.data)
    fast.s_sub(x.data, y.data, out, k)
    return Series(out)


def ps_mul(x: Series, y: Series) -> Series:
    """Truncated Cauchy product.

    Costs (d+2)(d+1)/2 coefficient multiplications and (d+1)d/2 additions,
    visible through :func:`series_counting`.
    """
    k = _check_pair(x, y)
    out = np.empty_like(x.data)
    cnt = np.zeros(3, dtype=np.int64)
    fast.s_mul(x.data, y.data, out, k, cnt)
    record(cnt)
    return Series(out)


def ps_inverse(x: Series) -> Series:
    if fast.c_is_zero(x.data[0], x.k):
        raise NotInvertibleError("series with zero constant term has no inverse")
    out = np.empty_like(x.data)
    fast.s_inverse(x.data, out, x.k)
    return Series(out)


# vector and matrix coefficients ---------------------------------------------


class SeriesVector:
    """Series with vector coefficients b_0..b_d, stored as (d+1, n, 2, k)."""

    def __init__(self, data):
        data = np.asarray(data, dtype=np.float64)
        if data.ndim != 4 or data.shape[2] != 2:
            raise ShapeError(f"series vector data must be (d+1, n, 2, k), got {data.shape}")
        check_level(data.shape[3])
        self.data = _frozen(data)

    @classmethod
    def from_coeffs(cls, coeffs: list[VectorMD]) -> "SeriesVector":
        if not coeffs or len({c.data.shape for c in coeffs}) != 1:
            raise ShapeError("coefficient vectors must share dimension and precision")
        return cls(np.stack([c.data for c in coeffs]))

    @property
    def degree(self) -> int:
        return self.data.shape[0] - 1

    @property
    def n(self) -> int:
        return self.data.shape[1]

    @property
    def k(self) -> int:
        return self.data.shape[3]

    @property
    def coeffs(self) -> list[VectorMD]:
        return [VectorMD(c.copy()) for c in self.data]

    def __eq__(self, other):
        return isinstance(other, SeriesVector) and np.array_equal(self.data, other.data)


class SeriesMatrix:
    """Series with matrix coefficients A_0..A_d, stored as (d+1, N, n, 2, k)."""

    def __init__(self, data):
        data = np.asarray(data, dtype=np.float64)
        if data.ndim != 5 or data.shape[3] != 2:
            raise ShapeError(f"series matrix data must be (d+1, N, n, 2, k), got {data.shape}")
        check_level(data.shape[4])
        self.data = _frozen(data)

    @classmethod
    def from_coeffs(cls, coeffs: list[MatrixMD]) -> "SeriesMatrix":
        if not coeffs or len({c.data.shape for c in coeffs}) != 1:
            raise ShapeError("coefficient matrices must share shape and precision")
        return cls(np.stack([c.data for c in coeffs]))

    @property
    def degree(self) -> int:
        return self.data.shape[0] - 1

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape[1], self.data.shape[2]

    @property
    def k(self) -> int:
        return self.data.shape[4]

    @property
    def coeffs(self) -> list[MatrixMD]:
        return [MatrixMD(c.copy()) for c in self.data]


def linearize(v: list[Series]) -> SeriesVector:
    """Vector of series -> series of vectors."""
    if not v:
        raise ShapeError("empty vector")
    if len({s.data.shape for s in v}) != 1:
        raise ShapeError("series in the vector must share degree and precision")
    return SeriesVector(np.stack([s.data for s in v], axis=1))


def delinearize(sv: SeriesVector) -> list[Series]:
    return [Series(sv.data[:, i].copy()) for i in range(sv.n)]


# text -------------------------------------------------------------------------


def _fmt(v: float) -> str:
    return f"{v:.14E}"


def format_series(x: Series, part: str = "re") -> str:
    """Render one part ('re' or 'im') as terms of decreasing degree.

    Each coefficient shows its leading limb, e.g. ``4.16666666666667E-02*t^4``;
    exactly zero coefficients are skipped.
    """
    idx = {"re": 0, "im": 1}[part]
    out = ""
    for j in range(x.degree, -1, -1):
        c = x.data[j, idx, 0]
        if c == 0.0:
            continue
        term = _fmt(abs(c)) + ("" if j == 0 else "*t" if j == 1 else f"*t^{j}")
        if out:
            out += (" - " if c < 0 else " + ") + term
        else:
            out = ("-" if c < 0 else "") + term
    return out or "0"
