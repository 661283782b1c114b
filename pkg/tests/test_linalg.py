from fractions import Fraction

import numpy as np
import pytest

from conftest import ALL_K, fill_tail
from mdnewton.expansion import Expansion
from mdnewton.linalg import (
    ComplexMD,
    MatrixMD,
    RankDeficientError,
    SingularMatrixError,
    VectorMD,
    dumps_matrix,
    dumps_vector,
    factorization_count,
    inv_condition_estimate,
    loads,
    lu_factor,
    lu_solve,
    norm2,
    one_norm,
    qr_factor,
    qr_least_squares,
    set_precision,
    unit_modulus_vector,
)

SOLVER_K = (1, 2, 3, 4, 8)


def exact_entries(data):
    """(..., 2, k) limb data -> object array of (re, im) Fraction pairs."""
    flat = data.reshape(-1, 2, data.shape[-1])
    out = [(sum(map(Fraction, z[0].tolist()), Fraction(0)), sum(map(Fraction, z[1].tolist()), Fraction(0))) for z in flat]
    arr = np.empty(len(out), dtype=object)
    arr[:] = out
    return arr.reshape(data.shape[:-2])


def cmul(a, b):
    return (a[0] * b[0] - a[1] * b[1], a[0] * b[1] + a[1] * b[0])


def exact_residual(a: MatrixMD, x: VectorMD, b: VectorMD) -> float:
    """max_i |(A x - b)_i| (modulus bounded by |re| + |im|) in exact arithmetic."""
    ea, ex, eb = exact_entries(a.data), exact_entries(x.data), exact_entries(b.data)
    worst = Fraction(0)
    for i in range(a.shape[0]):
        re, im = -eb[i][0], -eb[i][1]
        for j in range(a.shape[1]):
            p = cmul(ea[i, j], ex[j])
            re += p[0]
            im += p[1]
        worst = max(worst, abs(re) + abs(im))
    return float(worst)


def inf_norm(m) -> float:
    m = np.atleast_2d(m)
    return float(np.abs(m).sum(axis=1).max())


def random_matrix(rng, n, m, k):
    z = rng.standard_normal((n, m)) + 1j * rng.standard_normal((n, m))
    return MatrixMD(set_precision(MatrixMD.from_complex(z + 2 * np.eye(n, m), 1).data, k))


def random_vector(rng, n, k):
    return VectorMD.from_complex(rng.standard_normal(n) + 1j * rng.standard_normal(n), k)


def fill_limbs(m: MatrixMD, rng) -> MatrixMD:
    """Give every entry nonzero trailing limbs so higher precision is exercised."""
    return MatrixMD(fill_tail(m.data, rng))


# complex scalars and vectors ----------------------------------------------------


def test_complex_scalar_ops():
    a = ComplexMD(1.5, -2.0, k=3)
    b = ComplexMD.from_complex(0.25 + 4j, 3)
    assert complex(a * b) == (1.5 - 2j) * (0.25 + 4j)
    assert complex(a + b) == (1.5 - 2j) + (0.25 + 4j)
    q = (a * b) / b
    assert abs(complex(q - a)) < 1e-45
    assert a.abs2() == Fraction(25, 4)
    assert abs(abs(a).exact() - Fraction(5, 2)) <= Fraction(2) ** (-52 * 3 + 8)
    assert -a == ComplexMD(-1.5, 2.0, k=3)


@pytest.mark.parametrize("k", ALL_K)
def test_norm_trivial(k):
    e1 = VectorMD.from_complex([1, 0, 0], k)
    assert norm2(e1) == 1
    assert norm2(VectorMD.zeros(4, k)).is_zero


@pytest.mark.parametrize("k", (2, 3, 4, 5, 8, 10))
def test_norm_unit_modulus_entries(k):
    v = unit_modulus_vector(64, k, seed=3)
    mods = [abs(z) for z in v]
    assert all(abs(m.exact() - 1) <= Fraction(2) ** (-52 * k + 4) for m in mods)
    assert abs(norm2(v).exact() - 8) <= Fraction(2) ** (-52 * k + 8) * 8


@pytest.mark.parametrize("k", (1, 2, 4, 10))
def test_norm_homogeneous(k, rng):
    v = VectorMD(set_precision(random_vector(rng, 16, 1).data, k))
    alpha = ComplexMD.from_complex(0.3 - 1.7j, k)
    lhs = norm2(v.scale(alpha)).exact()
    rhs = abs(alpha).exact() * norm2(v).exact()
    assert abs(lhs - rhs) <= Fraction(2) ** (-52 * k + 8) * rhs


def test_norm_rejects_empty():
    with pytest.raises(ValueError):
        norm2(VectorMD.zeros(0, 2))


# LU ---------------------------------------------------------------------------------


@pytest.mark.parametrize("k", ALL_K)
def test_lu_identity_bit_exact(k, rng):
    b = random_vector(rng, 5, k)
    x = lu_solve(MatrixMD.identity(5, k), b)
    assert x.data.tobytes() == b.data.tobytes()


@pytest.mark.parametrize("k", SOLVER_K)
def test_lu_residual_bound(k, rng):
    for n in (1, 3, 8):
        a = fill_limbs(random_matrix(rng, n, n, k), rng)
        b = random_vector(rng, n, k)
        x = lu_solve(a, b)
        bound = n * 2.0 ** (-52 * k + 12) * inf_norm(a.to_complex()) * inf_norm(x.to_complex())
        assert exact_residual(a, x, b) <= bound


@pytest.mark.parametrize("k", (1, 2, 4))
def test_lu_reproduces_permuted_matrix(k, rng):
    n = 6
    a = fill_limbs(random_matrix(rng, n, n, k), rng)
    f = lu_factor(a)
    assert sorted(f.piv.tolist()) == list(range(n))
    lu = exact_entries(f.lu)
    ea = exact_entries(a.data)
    worst = Fraction(0)
    for i in range(n):
        for j in range(n):
            re, im = Fraction(0), Fraction(0)
            for m in range(min(i, j) + 1):
                lower = (Fraction(1), Fraction(0)) if m == i else lu[i, m]
                p = cmul(lower, lu[m, j])
                re, im = re + p[0], im + p[1]
            target = ea[f.piv[i], j]
            worst = max(worst, abs(re - target[0]) + abs(im - target[1]))
    assert float(worst) <= n * 2.0 ** (-52 * k + 12) * inf_norm(a.to_complex())


def test_lu_singular_names_column():
    a = MatrixMD.from_complex([[1, 2, 3], [2, 4, 6], [0, 0, 1]], 2)
    with pytest.raises(SingularMatrixError) as info:
        lu_factor(a)
    assert info.value.index == 1
    with pytest.raises(SingularMatrixError):
        lu_factor(MatrixMD.from_complex(np.zeros((2, 2)), 3))


def test_lu_rejects_rectangular():
    with pytest.raises(ValueError):
        lu_factor(MatrixMD.from_complex(np.ones((3, 2)), 2))


def hilbert(n, k):
    data = np.zeros((n, n, 2, k))
    for i in range(n):
        for j in range(n):
            data[i, j, 0] = Expansion(Fraction(1, i + j + 1), k).limbs
    return MatrixMD(data)


def test_hilbert_forward_error_shrinks_with_precision():
    n = 8
    ones = [1.0] * n
    ref = exact_entries(lu_solve(hilbert(n, 10), VectorMD.from_complex(ones, 10)).data)

    def forward_error(k):
        x = exact_entries(lu_solve(hilbert(n, k), VectorMD.from_complex(ones, k)).data)
        return max(abs(x[i][0] - ref[i][0]) + abs(x[i][1] - ref[i][1]) for i in range(n))

    e1, e4 = forward_error(1), forward_error(4)
    assert e1 > 0
    assert e4 * Fraction(10) ** 40 <= e1


# QR ---------------------------------------------------------------------------------


@pytest.mark.parametrize("k", SOLVER_K)
def test_qr_identity(k, rng):
    b = random_vector(rng, 4, k)
    x = qr_least_squares(MatrixMD.identity(4, k), b)
    eb, ex = exact_entries(b.data), exact_entries(x.data)
    for (br, bi), (xr, xi) in zip(eb, ex):
        assert abs(xr - br) + abs(xi - bi) <= Fraction(2) ** (-52 * k + 8) * (abs(br) + abs(bi))


@pytest.mark.parametrize("k", SOLVER_K)
def test_qr_overdetermined_consistent(k, rng):
    a = fill_limbs(random_matrix(rng, 10, 4, k), rng)
    x_known = random_vector(rng, 4, k)
    b = a @ x_known
    x = qr_least_squares(a, b)
    bound = 10 * 2.0 ** (-52 * k + 12) * inf_norm(a.to_complex()) * inf_norm(x.to_complex())
    assert exact_residual(a, x, b) <= bound
    ex, ek = exact_entries(x.data), exact_entries(x_known.data)
    diff = max(abs(p[0] - q[0]) + abs(p[1] - q[1]) for p, q in zip(ex, ek))
    assert diff <= Fraction(2) ** (-52 * k + 20) * max(abs(q[0]) + abs(q[1]) for q in ek)


@pytest.mark.parametrize("k", SOLVER_K)
def test_qr_agrees_with_lu(k, rng):
    a = fill_limbs(random_matrix(rng, 8, 8, k), rng)
    b = random_vector(rng, 8, k)
    x_lu = exact_entries(lu_solve(a, b).data)
    x_qr = exact_entries(qr_least_squares(a, b).data)
    diff = max(abs(p[0] - q[0]) + abs(p[1] - q[1]) for p, q in zip(x_lu, x_qr))
    size = max(abs(p[0]) + abs(p[1]) for p in x_lu)
    assert diff <= Fraction(2) ** (-52 * k + 16) * size


@pytest.mark.parametrize("k", (1, 2, 4))
def test_qr_orthogonality(k, rng):
    nr = 7
    f = qr_factor(fill_limbs(random_matrix(rng, nr, 4, k), rng))
    q = exact_entries(f.q().data)
    worst = Fraction(0)
    for i in range(nr):
        for j in range(nr):
            re, im = Fraction(0), Fraction(0)
            for m in range(nr):
                conj = (q[m, i][0], -q[m, i][1])
                p = cmul(conj, q[m, j])
                re, im = re + p[0], im + p[1]
            if i == j:
                re -= 1
            worst = max(worst, abs(re) + abs(im))
    assert float(worst) <= nr * 2.0 ** (-52 * k + 12)


def test_qr_rank_deficient():
    a = MatrixMD.from_complex([[1, 2], [2, 4], [3, 6]], 2)
    with pytest.raises(RankDeficientError) as info:
        qr_factor(a)
    assert info.value.index == 1


def test_factorization_counter():
    before = factorization_count()
    lu_factor(MatrixMD.identity(3, 2))
    qr_factor(MatrixMD.identity(3, 2))
    assert factorization_count() == before + 2


# condition estimation --------------------------------------------------------------


def test_inv_condition_identity():
    est = inv_condition_estimate(MatrixMD.identity(6, 2))
    assert 0.5 <= est <= 2.0


def test_inv_condition_diagonal():
    est = inv_condition_estimate(MatrixMD.from_complex(np.diag([1.0, 1e-6]), 2))
    assert 1e-7 <= est <= 1e-5


@pytest.mark.parametrize("seed", range(5))
def test_inv_condition_random(seed):
    rng = np.random.default_rng(seed)
    n = 6
    z = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
    q, _ = np.linalg.qr(z)
    z = q @ np.diag(np.logspace(0, -seed - 1, n)) @ q.conj().T
    a = MatrixMD.from_complex(z, 2)
    exact = 1.0 / (np.abs(z).sum(axis=0).max() * np.abs(np.linalg.inv(z)).sum(axis=0).max())
    est = inv_condition_estimate(a)
    assert exact / 10 <= est <= exact * 10


def test_inv_condition_singular_is_zero():
    assert inv_condition_estimate(MatrixMD.from_complex(np.ones((3, 3)), 2)) == 0.0


def test_one_norm():
    assert one_norm(MatrixMD.from_complex([[1, -2], [3j, 4]], 1)) == 6.0


# determinism and text round trip -----------------------------------------------------


def test_solvers_deterministic(rng):
    a = fill_limbs(random_matrix(rng, 6, 6, 4), rng)
    b = random_vector(rng, 6, 4)
    assert lu_solve(a, b).data.tobytes() == lu_solve(a, b).data.tobytes()
    assert qr_least_squares(a, b).data.tobytes() == qr_least_squares(a, b).data.tobytes()


@pytest.mark.parametrize("k", ALL_K)
def test_text_round_trip(k, rng):
    m = fill_limbs(random_matrix(rng, 3, 2, k), rng)
    back = loads(dumps_matrix(m))
    assert isinstance(back, MatrixMD) and back.data.tobytes() == m.data.tobytes()
    v = VectorMD(set_precision(random_vector(rng, 4, 1).data, k))
    back = loads(dumps_vector(v))
    assert isinstance(back, VectorMD) and back.data.tobytes() == v.data.tobytes()


def test_text_errors():
    with pytest.raises(ValueError):
        loads("")
    with pytest.raises(ValueError):
        loads("tensor 1 2\n")
    with pytest.raises(ValueError):
        loads("vector 2 1\n1.0 | 0.0\n")
