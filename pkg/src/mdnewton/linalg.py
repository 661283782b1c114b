"""Complex numbers, vectors and matrices of multiple doubles; LU, QR, condition."""
from __future__ import annotations

import threading
from dataclasses import dataclass

import numpy as np

from .expansion import Expansion, check_level, format_expansion, limbs_from_text, limbs_to_text
from .kernels import fast


class LinAlgError(ArithmeticError):
    pass


class SingularMatrixError(LinAlgError):
    def __init__(self, index: int):
        super().__init__(f"matrix is singular: pivot column {index} is exactly zero")
        self.index = index


class RankDeficientError(LinAlgError):
    def __init__(self, index: int):
        super().__init__(f"matrix is rank deficient: negligible diagonal at column {index}")
        self.index = index


def _frozen(arr):
    arr = np.ascontiguousarray(arr, dtype=np.float64)
    arr.setflags(write=False)
    return arr


def lift_complex(values, k: int) -> np.ndarray:
    """Complex doubles -> array of shape (..., 2, k) with zero trailing limbs."""
    values = np.asarray(values, dtype=np.complex128)
    out = np.zeros(values.shape + (2, k))
    out[..., 0, 0] = values.real
    out[..., 1, 0] = values.imag
    return out


def lead_complex(data) -> np.ndarray:
    """Leading limbs of (..., 2, k) data as complex doubles."""
    return data[..., 0, 0] + 1j * data[..., 1, 0]


def set_precision(data, k: int) -> np.ndarray:
    """Change the level of (..., k0) limb data.  Raising it is exact."""
    k0 = data.shape[-1]
    if k == k0:
        return data.copy()
    if k > k0:
        out = np.zeros(data.shape[:-1] + (k,))
        out[..., :k0] = data
        return out
    flat = data.reshape(-1, k0)
    out = np.zeros((flat.shape[0], k))
    for i, row in enumerate(flat):
        fast.renorm_robust(row.copy(), k0, k, out[i])
    return out.reshape(data.shape[:-1] + (k,))


class ComplexMD:
    """A complex number with multiple-double real and imaginary parts."""

    __slots__ = ("data",)

    def __init__(self, re=0.0, im=0.0, k: int = 2):
        check_level(k)
        data = np.zeros((2, k))
        data[0] = Expansion(re, k).limbs
        data[1] = Expansion(im, k).limbs
        self.data = _frozen(data)

    @classmethod
    def _wrap(cls, data):
        obj = object.__new__(cls)
        obj.data = _frozen(data)
        return obj

    @classmethod
    def from_complex(cls, z: complex, k: int) -> "ComplexMD":
        return cls._wrap(lift_complex(z, k))

    @property
    def k(self) -> int:
        return self.data.shape[1]

    @property
    def re(self) -> Expansion:
        return Expansion._wrap(self.data[0].copy())

    @property
    def im(self) -> Expansion:
        return Expansion._wrap(self.data[1].copy())

    def __complex__(self):
        return complex(self.data[0, 0], self.data[1, 0])

    def _binary(self, other, kernel):
        if not isinstance(other, ComplexMD):
            other = ComplexMD.from_complex(complex(other), self.k)
        out = np.empty((2, self.k))
        kernel(self.data, other.data, out, self.k)
        return ComplexMD._wrap(out)

    def __add__(self, other):
        return self._binary(other, fast.c_add)

    def __sub__(self, other):
        return self._binary(other, fast.c_sub)

    def __mul__(self, other):
        return self._binary(other, fast.c_mul)

    def __truediv__(self, other):
        if isinstance(other, ComplexMD) and fast.c_is_zero(other.data, other.k):
            raise ZeroDivisionError("complex division by zero")
        return self._binary(other, fast.c_div)

    def __neg__(self):
        return ComplexMD._wrap(-self.data)

    def abs2(self) -> Expansion:
        out = np.empty(self.k)
        fast.c_abs2(self.data, out, self.k)
        return Expansion._wrap(out)

    def __abs__(self) -> Expansion:
        return self.abs2().sqrt()

    def __eq__(self, other):
        return isinstance(other, ComplexMD) and np.array_equal(self.data, other.data)

    def __repr__(self):
        return f"ComplexMD({format_expansion(self.re)!r}, {format_expansion(self.im)!r}, k={self.k})"


class VectorMD:
    """Dense vector of ComplexMD entries, stored as an (n, 2, k) array."""

    def __init__(self, data):
        data = np.asarray(data, dtype=np.float64)
        if data.ndim != 3 or data.shape[1] != 2:
            raise ValueError(f"vector data must have shape (n, 2, k), got {data.shape}")
        check_level(data.shape[2])
        self.data = _frozen(data)

    @classmethod
    def from_complex(cls, values, k: int) -> "VectorMD":
        return cls(lift_complex(np.asarray(values).reshape(-1), k))

    @classmethod
    def zeros(cls, n: int, k: int) -> "VectorMD":
        return cls(np.zeros((n, 2, k)))

    @property
    def n(self) -> int:
        return self.data.shape[0]

    @property
    def k(self) -> int:
        return self.data.shape[2]

    def __len__(self):
        return self.n

    def __getitem__(self, i) -> ComplexMD:
        return ComplexMD._wrap(self.data[i].copy())

    def to_complex(self) -> np.ndarray:
        return lead_complex(self.data)

    def scale(self, alpha: ComplexMD) -> "VectorMD":
        out = np.empty_like(self.data)
        for i in range(self.n):
            fast.c_mul(alpha.data, self.data[i], out[i], self.k)
        return VectorMD(out)

    def __sub__(self, other: "VectorMD") -> "VectorMD":
        out = np.empty_like(self.data)
        for i in range(self.n):
            fast.c_sub(self.data[i], other.data[i], out[i], self.k)
        return VectorMD(out)


class MatrixMD:
    """Dense N-by-n matrix of ComplexMD entries, stored as (N, n, 2, k)."""

    def __init__(self, data):
        data = np.asarray(data, dtype=np.float64)
        if data.ndim != 4 or data.shape[2] != 2:
            raise ValueError(f"matrix data must have shape (N, n, 2, k), got {data.shape}")
        check_level(data.shape[3])
        self.data = _frozen(data)

    @classmethod
    def from_complex(cls, values, k: int) -> "MatrixMD":
        values = np.asarray(values)
        if values.ndim != 2:
            raise ValueError("expected a 2-d array")
        return cls(lift_complex(values, k))

    @classmethod
    def identity(cls, n: int, k: int) -> "MatrixMD":
        return cls.from_complex(np.eye(n), k)

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape[0], self.data.shape[1]

    @property
    def k(self) -> int:
        return self.data.shape[3]

    def __getitem__(self, ij) -> ComplexMD:
        return ComplexMD._wrap(self.data[ij].copy())

    def to_complex(self) -> np.ndarray:
        return lead_complex(self.data)

    def __matmul__(self, x: VectorMD) -> VectorMD:
        if self.shape[1] != x.n or self.k != x.k:
            raise ValueError("matrix-vector shape or precision mismatch")
        out = np.empty((self.shape[0], 2, self.k))
        fast.matvec(self.data, x.data, out, self.k)
        return VectorMD(out)


# factorizations -------------------------------------------------------------

_counts = threading.local()


def factorization_count() -> int:
    """Number of LU/QR factorizations performed by the calling thread."""
    return getattr(_counts, "n", 0)


def _count_factorization():
    _counts.n = factorization_count() + 1


@dataclass(frozen=True)
class LUFactors:
    lu: np.ndarray
    piv: np.ndarray

    @property
    def k(self) -> int:
        return self.lu.shape[3]

    def solve(self, b: VectorMD) -> VectorMD:
        x = np.empty_like(b.data)
        fast.lu_solve(self.lu, self.piv, b.data, x, self.k)
        return VectorMD(x)

    def solve_data(self, b, x):
        fast.lu_solve(self.lu, self.piv, b, x, self.k)

    def solve_adjoint(self, b: VectorMD) -> VectorMD:
        x = np.empty_like(b.data)
        fast.lu_solve_adjoint(self.lu, self.piv, b.data, x, self.k)
        return VectorMD(x)


def lu_factor(a: MatrixMD) -> LUFactors:
    """PA = LU with partial pivoting by leading-limb magnitude."""
    n, m = a.shape
    if n != m:
        raise ValueError("LU needs a square matrix")
    lu = a.data.copy()
    piv = np.empty(n, dtype=np.int64)
    _count_factorization()
    bad = fast.lu_factor(lu, piv, a.k)
    if bad >= 0:
        raise SingularMatrixError(int(bad))
    lu.setflags(write=False)
    return LUFactors(lu, piv)


def lu_solve(a: MatrixMD, b: VectorMD) -> VectorMD:
    return lu_factor(a).solve(b)


@dataclass(frozen=True)
class QRFactors:
    r: np.ndarray
    vs: np.ndarray
    beta: np.ndarray

    @property
    def k(self) -> int:
        return self.r.shape[3]

    def solve(self, b: VectorMD) -> VectorMD:
        x = np.empty((self.r.shape[1], 2, self.k))
        fast.qr_solve(self.r, self.vs, self.beta, b.data, x, self.k)
        return VectorMD(x)

    def solve_data(self, b, x):
        fast.qr_solve(self.r, self.vs, self.beta, b, x, self.k)

    def q(self) -> MatrixMD:
        """Accumulate the N-by-N unitary factor (diagnostics only)."""
        nr = self.r.shape[0]
        k = self.k
        cols = np.empty((nr, nr, 2, k))
        w = np.empty((2, k))
        p = np.empty((2, k))
        bw = np.empty((2, k))
        for c in range(nr):
            y = lift_complex(np.eye(nr)[:, c], k)
            for j in range(self.r.shape[1] - 1, -1, -1):
                fast.c_conj_mul(self.vs[j, j], y[j], w, k)
                for i in range(j + 1, nr):
                    fast.c_conj_mul(self.vs[i, j], y[i], p, k)
                    fast.c_add(w, p, w, k)
                fast.c_scale(w, self.beta[j], bw, k)
                for i in range(j, nr):
                    fast.c_mul(bw, self.vs[i, j], p, k)
                    fast.c_sub(y[i], p, y[i], k)
            cols[:, c] = y
        return MatrixMD(cols)


def qr_factor(a: MatrixMD) -> QRFactors:
    """Householder QR of an N-by-n matrix with N >= n."""
    nr, nc = a.shape
    if nr < nc:
        raise ValueError("QR least squares needs N >= n")
    k = a.k
    r = a.data.copy()
    vs = np.empty((nr, nc, 2, k))
    beta = np.empty((nc, k))
    tol = nr * 2.0 ** (-52 * k)
    _count_factorization()
    bad = fast.qr_factor(r, vs, beta, tol, k)
    if bad >= 0:
        raise RankDeficientError(int(bad))
    for arr in (r, vs, beta):
        arr.setflags(write=False)
    return QRFactors(r, vs, beta)


def qr_least_squares(a: MatrixMD, b: VectorMD) -> VectorMD:
    return qr_factor(a).solve(b)


def norm2(v: VectorMD) -> Expansion:
    """Euclidean norm, summing |v_i|^2 in index order."""
    if v.n == 0:
        raise ValueError("norm of an empty vector")
    out = np.empty(v.k)
    fast.norm2(v.data, out, v.k)
    return Expansion._wrap(out)


def one_norm(a: MatrixMD) -> float:
    return float(np.abs(a.to_complex()).sum(axis=0).max())


def inv_condition_estimate(a: MatrixMD, factors: LUFactors | None = None) -> float:
    """Estimate 1/cond_1(A) with a Hager-Higham one-norm estimator.

    Five iterations at most, each one solve with A and one with A^H on the
    LU factors.  Returns 0.0 for a singular matrix.
    """
    n = a.shape[0]
    if factors is None:
        try:
            factors = lu_factor(a)
        except SingularMatrixError:
            return 0.0
    k = a.k

    def solve(z, adjoint=False):
        b = VectorMD.from_complex(z, k)
        return (factors.solve_adjoint(b) if adjoint else factors.solve(b)).to_complex()

    x = np.full(n, 1.0 / n, dtype=np.complex128)
    est = 0.0
    for it in range(5):
        y = solve(x)
        new = float(np.abs(y).sum())
        if it > 0 and new <= est:
            break
        est = new
        mag = np.abs(y)
        xi = np.where(mag > 0, y / np.where(mag > 0, mag, 1.0), 1.0)
        z = solve(xi, adjoint=True)
        j = int(np.argmax(np.abs(z)))
        if it > 0 and np.abs(z[j]) <= np.real(np.vdot(z, x)):
            break
        x = np.zeros(n, dtype=np.complex128)
        x[j] = 1.0
    if n > 1:
        alt = np.array([(-1) ** i * (1 + i / (n - 1)) for i in range(n)], dtype=np.complex128)
        est = max(est, 2 * float(np.abs(solve(alt)).sum()) / (3 * n))
    anorm = one_norm(a)
    if est == 0.0 or anorm == 0.0 or not np.isfinite(est):
        return 0.0
    return 1.0 / (anorm * est)


def unit_modulus_vector(n: int, k: int, seed: int = 0) -> VectorMD:
    """Entries (a + bi)/sqrt(a^2 + b^2) for random doubles a, b, at level k."""
    rng = np.random.default_rng(seed)
    a = rng.uniform(-1.0, 1.0, n)
    b = rng.uniform(-1.0, 1.0, n)
    out = np.zeros((n, 2, k))
    fast.unit_modulus(a, b, out, k)
    return VectorMD(out)


# text format ----------------------------------------------------------------


def _entry_line(z) -> str:
    return f"{limbs_to_text(z[0])} | {limbs_to_text(z[1])}"


def _parse_entry(line: str, k: int) -> np.ndarray:
    try:
        re_part, im_part = line.split("|")
    except ValueError:
        raise ValueError(f"bad entry line: {line!r}") from None
    return np.stack([limbs_from_text(re_part, k), limbs_from_text(im_part, k)])


def dumps_vector(v: VectorMD) -> str:
    lines = [f"vector {v.n} {v.k}"]
    lines += [_entry_line(z) for z in v.data]
    return "\n".join(lines) + "\n"


def dumps_matrix(a: MatrixMD) -> str:
    nr, nc = a.shape
    lines = [f"matrix {nr} {nc} {a.k}"]
    lines += [_entry_line(a.data[i, j]) for i in range(nr) for j in range(nc)]
    return "\n".join(lines) + "\n"


def loads(text: str) -> VectorMD | MatrixMD:
    """Parse the output of :func:`dumps_vector` or :func:`dumps_matrix` exactly."""
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise ValueError("empty input")
    head = lines[0].split()
    if head[0] == "vector" and len(head) == 3:
        n, k = int(head[1]), int(head[2])
        shape = (n,)
    elif head[0] == "matrix" and len(head) == 4:
        nr, nc, k = int(head[1]), int(head[2]), int(head[3])
        shape = (nr, nc)
    else:
        raise ValueError(f"bad header: {lines[0]!r}")
    count = int(np.prod(shape))
    if len(lines) - 1 != count:
        raise ValueError(f"expected {count} entries, got {len(lines) - 1}")
    data = np.array([_parse_entry(ln, k) for ln in lines[1:]]).reshape(shape + (2, k))
    return VectorMD(data) if head[0] == "vector" else MatrixMD(data)
