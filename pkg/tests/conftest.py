import os
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from mdnewton.expansion import Expansion
from mdnewton.linalg import lift_complex
from mdnewton.newton import BlockToeplitzSystem
from mdnewton.series import SeriesMatrix, SeriesVector

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

ALL_K = (1, 2, 3, 4, 5, 8, 10)
MULTI_K = (2, 3, 4, 5, 8, 10)


def random_expansion(rng, k, scale=1.0):
    """Fully populated random expansion (every limb carries information)."""
    limbs = rng.standard_normal(k) * scale * 2.0 ** (-53.0 * np.arange(k))
    return Expansion.from_limbs(limbs)


def rel_err(got, exact: Fraction) -> Fraction:
    value = got.exact() if isinstance(got, Expansion) else Fraction(got)
    if exact == 0:
        return abs(value)
    return abs(value - exact) / abs(exact)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def normalized(data):
    """Renormalize every limb vector along the last axis."""
    from mdnewton.kernels import fast

    k = data.shape[-1]
    flat = np.ascontiguousarray(data, dtype=np.float64).reshape(-1, k)
    out = np.zeros_like(flat)
    for i, row in enumerate(flat):
        fast.renorm_robust(row.copy(), k, k, out[i])
    return out.reshape(data.shape)


def fill_tail(data, rng):
    """Random lower limbs under each leading limb, then renormalized."""
    k = data.shape[-1]
    data = data.copy()
    if k > 1:
        scales = 2.0 ** (-53.0 * np.arange(1, k))
        data[..., 1:] = rng.standard_normal(data.shape[:-1] + (k - 1,)) * scales * np.abs(data[..., :1])
    return normalized(data)


# block Toeplitz systems --------------------------------------------------------


def exact_complex(data):
    flat = data.reshape(-1, 2, data.shape[-1])
    vals = [(sum(map(Fraction, z[0].tolist()), Fraction(0)), sum(map(Fraction, z[1].tolist()), Fraction(0))) for z in flat]
    out = np.empty(len(vals), dtype=object)
    out[:] = vals
    return out.reshape(data.shape[:-2])


def random_block_system(rng, n, d, k, nrows=None):
    nrows = nrows or n
    a = rng.standard_normal((d + 1, nrows, n)) + 1j * rng.standard_normal((d + 1, nrows, n))
    a[0] += 3 * np.eye(nrows, n)
    b = rng.standard_normal((d + 1, nrows)) + 1j * rng.standard_normal((d + 1, nrows))
    return BlockToeplitzSystem(SeriesMatrix(fill_tail(lift_complex(a, k), rng)), SeriesVector(fill_tail(lift_complex(b, k), rng)))


def toeplitz_residual(system: BlockToeplitzSystem, dx: SeriesVector):
    """Largest |b_j - sum_i A_i dx_(j-i)| over coefficients, exactly; plus the scale used for bounds."""
    a, b, x = exact_complex(system.A.data), exact_complex(system.b.data), exact_complex(dx.data)
    d1, nr, nc = a.shape
    worst = Fraction(0)
    for j in range(d1):
        for r in range(nr):
            re, im = b[j, r]
            for i in range(j + 1):
                for c in range(nc):
                    ar, ai = a[i, r, c]
                    xr, xi = x[j - i, c]
                    re -= ar * xr - ai * xi
                    im -= ar * xi + ai * xr
            worst = max(worst, abs(re) + abs(im))
    anorm = max(float(np.abs(system.A.data[i, ..., 0, 0] + 1j * system.A.data[i, ..., 1, 0]).sum(axis=1).max()) for i in range(d1))
    xnorm = float(np.abs(dx.data[..., 0, 0] + 1j * dx.data[..., 1, 0]).max())
    return float(worst), anorm * xnorm
