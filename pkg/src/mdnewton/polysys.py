"""Polynomial systems with power-series coefficients, evaluated at series arguments."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .expansion import Expansion, check_level, md_div
from .kernels import fast
from .linalg import lift_complex
from .series import Series, SeriesMatrix, SeriesVector, ShapeError, record


@dataclass(frozen=True)
class Monomial:
    coefficient: Series
    exponents: tuple[int, ...]

    def __post_init__(self):
        exps = tuple(int(e) for e in self.exponents)
        if any(e < 0 for e in exps):
            raise ValueError(f"negative exponent in {exps}")
        object.__setattr__(self, "exponents", exps)


class Polynomial:
    """Sum of monomials; terms with equal exponent vectors are merged.

    Stored as ``exps`` (T, n) int64 and ``coefs`` (T, d+1, 2, k), in order
    of first appearance.
    """

    def __init__(self, monomials, n: int | None = None):
        monomials = list(monomials)
        if not monomials and n is None:
            raise ShapeError("an empty polynomial needs an explicit n")
        if n is None:
            n = len(monomials[0].exponents)
        if monomials:
            shape = monomials[0].coefficient.data.shape
        merged: dict[tuple[int, ...], np.ndarray] = {}
        for m in monomials:
            if len(m.exponents) != n:
                raise ShapeError(f"exponent vector {m.exponents} does not have length {n}")
            if m.coefficient.data.shape != shape:
                raise ShapeError("monomial coefficients must share degree and precision")
            if m.exponents in merged:
                acc = merged[m.exponents]
                fast.s_add(acc, m.coefficient.data, acc, shape[2])
            else:
                merged[m.exponents] = m.coefficient.data.copy()
        self.n = n
        if merged:
            self.exps = np.array(list(merged), dtype=np.int64).reshape(len(merged), n)
            self.coefs = np.ascontiguousarray(np.stack(list(merged.values())))
        else:
            self.exps = np.zeros((0, n), dtype=np.int64)
            self.coefs = np.zeros((0, 1, 2, 1))
        self.exps.setflags(write=False)
        self.coefs.setflags(write=False)

    @classmethod
    def from_arrays(cls, exps, coefs) -> "Polynomial":
        exps = np.asarray(exps, dtype=np.int64)
        coefs = np.asarray(coefs, dtype=np.float64)
        mons = [Monomial(Series(c.copy()), tuple(e)) for e, c in zip(exps, coefs)]
        return cls(mons, n=exps.shape[1])

    @property
    def monomials(self) -> list[Monomial]:
        return [Monomial(Series(c.copy()), tuple(int(v) for v in e)) for e, c in zip(self.exps, self.coefs)]

    @property
    def degree(self) -> int:
        return self.coefs.shape[1] - 1

    @property
    def k(self) -> int:
        return self.coefs.shape[3]

    def __len__(self):
        return self.exps.shape[0]

    def __eq__(self, other):
        return (
            isinstance(other, Polynomial)
            and np.array_equal(self.exps, other.exps)
            and np.array_equal(self.coefs, other.coefs)
        )


class PolySystem:
    """N polynomials in n variables, all at degree d and level k, N >= n."""

    def __init__(self, polys, n: int | None = None):
        self.polys = tuple(polys)
        if not self.polys:
            raise ShapeError("a system needs at least one polynomial")
        self.n = self.polys[0].n if n is None else n
        p0 = self.polys[0]
        for p in self.polys:
            if p.n != self.n:
                raise ShapeError("polynomials must share the number of variables")
            if len(p) and (p.degree, p.k) != (p0.degree, p0.k):
                raise ShapeError("polynomials must share degree and precision")
        if len(self.polys) < self.n:
            raise ShapeError(f"need N >= n, got N={len(self.polys)}, n={self.n}")

    @property
    def N(self) -> int:
        return len(self.polys)

    @property
    def degree(self) -> int:
        return self.polys[0].degree

    @property
    def k(self) -> int:
        return self.polys[0].k

    def __eq__(self, other):
        return isinstance(other, PolySystem) and self.n == other.n and self.polys == other.polys

    def dumps(self) -> str:
        lines = [f"{self.N} {self.n} {self.degree} {self.k}"]
        for p in self.polys:
            lines.append(str(len(p)))
            for e, c in zip(p.exps, p.coefs):
                lines.append(" ".join(map(str, e)) + " " + " ".join(repr(float(v)) for v in c.ravel()))
        return "\n".join(lines) + "\n"

    @classmethod
    def loads(cls, text: str) -> "PolySystem":
        lines = iter(ln for ln in text.splitlines() if ln.strip())
        try:
            nr, n, d, k = map(int, next(lines).split())
            check_level(k)
            polys = []
            for _ in range(nr):
                terms = int(next(lines))
                exps = np.zeros((terms, n), dtype=np.int64)
                coefs = np.zeros((terms, d + 1, 2, k))
                for t in range(terms):
                    fields = next(lines).split()
                    if len(fields) != n + (d + 1) * 2 * k:
                        raise ValueError(f"term line has {len(fields)} fields")
                    exps[t] = [int(v) for v in fields[:n]]
                    coefs[t] = np.array([float(v) for v in fields[n:]]).reshape(d + 1, 2, k)
                polys.append(Polynomial.from_arrays(exps, coefs))
        except StopIteration:
            raise ValueError("truncated system file") from None
        return cls(polys, n=n)

    def save(self, path) -> None:
        Path(path).write_text(self.dumps())

    @classmethod
    def load(cls, path) -> "PolySystem":
        return cls.loads(Path(path).read_text())


# evaluation -------------------------------------------------------------------


def series_args(x, n: int, degree: int, k: int) -> np.ndarray:
    """Normalize a vector of series to one contiguous (n, d+1, 2, k) array."""
    if isinstance(x, SeriesVector):
        arr = np.ascontiguousarray(x.data.transpose(1, 0, 2, 3))
    elif isinstance(x, np.ndarray):
        arr = np.ascontiguousarray(x, dtype=np.float64)
    else:
        x = list(x)
        if not all(isinstance(s, Series) for s in x):
            raise ShapeError("expected a vector of Series")
        arr = np.stack([s.data for s in x]) if x else np.zeros((0, degree + 1, 2, k))
    if arr.shape != (n, degree + 1, 2, k):
        raise ShapeError(f"argument shape {arr.shape} does not match (n, d+1, 2, k) = {(n, degree + 1, 2, k)}")
    return arr


def _poly_shape(p: Polynomial, x):
    if len(p):
        return p.degree, p.k
    if isinstance(x, SeriesVector):
        return x.degree, x.k
    if isinstance(x, np.ndarray):
        return x.shape[1] - 1, x.shape[3]
    x = list(x)
    return x[0].degree, x[0].k


def eval_into(p: Polynomial, xs: np.ndarray, val, grad, want_grad: bool) -> None:
    """Low-level evaluation into caller-owned buffers; records series counts."""
    if len(p) == 0:
        val[...] = 0.0
        if want_grad:
            grad[...] = 0.0
        return
    cnt = np.zeros(3, dtype=np.int64)
    fast.poly_eval(xs, p.exps, p.coefs, val, grad, cnt, want_grad, p.k)
    record(cnt)


def eval_poly(p: Polynomial, x) -> Series:
    d, k = _poly_shape(p, x)
    xs = series_args(x, p.n, d, k)
    val = np.empty((d + 1, 2, k))
    grad = np.empty((p.n, d + 1, 2, k))
    eval_into(p, xs, val, grad, False)
    return Series(val)


def eval_and_diff(p: Polynomial, x) -> tuple[Series, list[Series]]:
    """Value and all n partial derivatives, by prefix/suffix products."""
    d, k = _poly_shape(p, x)
    xs = series_args(x, p.n, d, k)
    val = np.empty((d + 1, 2, k))
    grad = np.empty((p.n, d + 1, 2, k))
    eval_into(p, xs, val, grad, True)
    return Series(val), [Series(g) for g in grad]


def eval_job(f: PolySystem, xs: np.ndarray, vals: np.ndarray, grads: np.ndarray):
    """Job factory: job i evaluates polynomial i into vals[i] and grads[i]."""

    def job(i: int) -> None:
        eval_into(f.polys[i], xs, vals[i], grads[i], True)

    return job


def assemble(vals: np.ndarray, grads: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-polynomial buffers -> (b, A) data with b = -f(x)."""
    b = -vals.transpose(1, 0, 2, 3)
    a = grads.transpose(2, 0, 1, 3, 4)
    return np.ascontiguousarray(b), np.ascontiguousarray(a)


def system_jacobian(f: PolySystem, x) -> tuple[SeriesVector, SeriesMatrix]:
    """Right-hand side b = -f(x) and the series of Jacobian matrices."""
    xs = series_args(x, f.n, f.degree, f.k)
    vals, grads = workspace(f)
    job = eval_job(f, xs, vals, grads)
    for i in range(f.N):
        job(i)
    b, a = assemble(vals, grads)
    return SeriesVector(b), SeriesMatrix(a)


def workspace(f: PolySystem):
    d1, k = f.degree + 1, f.k
    return np.empty((f.N, d1, 2, k)), np.empty((f.N, f.n, d1, 2, k))


# generators -------------------------------------------------------------------


def _const(c, degree, k):
    return Series.constant(c, degree, k)


def circle_system(k: int = 1, degree: int = 8) -> PolySystem:
    """Truncated sine Taylor polynomial minus y, and the unit circle.

    Starting Newton at (1, 0) recovers the cosine series in x.
    """
    check_level(k)
    one = Expansion(1, k)
    sine = np.zeros((degree + 1, 2, k))
    for j, fact in ((1, 1), (3, 6), (5, 120), (7, 5040)):
        if j <= degree:
            c = md_div(one, Expansion(fact, k))
            sine[j, 0] = c.limbs if j % 4 == 1 else (-c).limbs
    eq1 = Polynomial([Monomial(Series(sine), (0, 0)), Monomial(_const(-1, degree, k), (0, 1))])
    eq2 = Polynomial(
        [
            Monomial(_const(1, degree, k), (2, 0)),
            Monomial(_const(1, degree, k), (0, 2)),
            Monomial(_const(-1, degree, k), (0, 0)),
        ]
    )
    return PolySystem([eq1, eq2])


def _exponent_sets(rng, N, n, terms, max_exponent):
    base = max_exponent + 1
    space = base**n
    if terms > space:
        raise ValueError(f"cannot draw {terms} distinct exponent vectors from {space} candidates")
    out = []
    for _ in range(N):
        if space <= 1 << 20:
            idx = rng.choice(space, size=terms, replace=False)
            exps = np.array([[(int(i) // base**v) % base for v in range(n)] for i in idx], dtype=np.int64)
        else:
            seen = {}
            while len(seen) < terms:
                e = tuple(int(v) for v in rng.integers(0, base, size=n))
                seen.setdefault(e, None)
            exps = np.array(list(seen), dtype=np.int64)
        out.append(exps.reshape(terms, n))
    return out


def _unit_coefficients(rng, count, k):
    a = rng.uniform(-1.0, 1.0, count)
    b = rng.uniform(-1.0, 1.0, count)
    while np.any((a == 0) & (b == 0)):
        a[(a == 0) & (b == 0)] = 0.5
    out = np.zeros((count, 2, k))
    fast.unit_modulus(a, b, out, k)
    return out


def random_system(
    seed: int, N: int, n: int, terms: int, max_exponent: int = 2, k: int = 1, degree: int = 8
) -> PolySystem:
    """Seeded random system with unit-modulus constant coefficients.

    Each polynomial gets ``terms`` distinct exponent vectors whose entries are
    uniform in 0..max_exponent.
    """
    check_level(k)
    if terms < 1 or n < 1 or N < n:
        raise ValueError("need terms >= 1, n >= 1 and N >= n")
    rng = np.random.default_rng(seed)
    polys = []
    for exps in _exponent_sets(rng, N, n, terms, max_exponent):
        coefs = np.zeros((terms, degree + 1, 2, k))
        coefs[:, 0] = _unit_coefficients(rng, terms, k)
        polys.append(Polynomial.from_arrays(exps, coefs))
    return PolySystem(polys, n=n)


def random_curve_system(
    seed: int, N: int, n: int, terms: int, max_exponent: int = 2, k: int = 1, degree: int = 8
) -> tuple[PolySystem, list[complex]]:
    """Random system with a known start point z at t = 0 and nontrivial series.

    Starting from :func:`random_system`, the constant-exponent term of every
    polynomial i is replaced by the series (c_i - f_i(z)) + g_i t with g_i of
    unit modulus, so f(z) = 0 at t = 0 and the solution moves with t.
    Returns the system and the start point z (as complex doubles, exact in
    the leading limb).
    """
    base = random_system(seed, N, n, terms, max_exponent, k, degree)
    rng = np.random.default_rng([seed, 1])
    zdata = np.zeros((n, 2, k))
    fast.unit_modulus(rng.uniform(-1, 1, n), rng.uniform(-1, 1, n), zdata, k)
    z = zdata[:, 0, 0] + 1j * zdata[:, 1, 0]
    zs = np.zeros((n, degree + 1, 2, k))
    zs[:, 0] = lift_complex(z, k)
    gammas = _unit_coefficients(rng, N, k)
    polys = []
    for i, p in enumerate(base.polys):
        val = eval_poly(p, zs).data
        exps = p.exps.copy()
        coefs = p.coefs.copy()
        row = np.flatnonzero(~exps.any(axis=1))
        shift = np.zeros((degree + 1, 2, k))
        fast.c_neg(val[0], shift[0], k)
        if degree >= 1:
            shift[1] = gammas[i]
        if row.size:
            fast.s_add(coefs[row[0]], shift, coefs[row[0]], k)
        else:
            exps = np.vstack([exps, np.zeros((1, n), dtype=np.int64)])
            coefs = np.concatenate([coefs, shift[None]])
        polys.append(Polynomial.from_arrays(exps, coefs))
    return PolySystem(polys, n=n), list(z)

