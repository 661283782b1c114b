"""Multiple-double kernels.

This file is executed twice by :mod:`mdnewton.kernels`: once with ``_JIT``
set, where every ``@kernel`` is compiled with numba, and once as plain
Python.  The plain copy runs on lists of operation-counting floats to
measure hardware operation counts; the compiled copy does the real work.
Both copies execute the same statements in the same order, so they agree
bit for bit.

Conventions: a real k-fold number is a length-k sequence of doubles, most
significant limb first.  A complex number is a ``(2, k)`` array (real part,
imaginary part).  A truncated series is a ``(d+1, 2, k)`` array.
"""
import math

import numpy as np

try:
    _JIT
except NameError:
    _JIT = False

if _JIT:
    import numba

    kernel = numba.njit(cache=True, nogil=True)
else:

    def kernel(f):
        return f


SPLITTER = 134217729.0  # 2^27 + 1
SPLIT_THRESH = 6.69692879491417e299  # beyond this SPLITTER * a can overflow
EPS_CHECK = 2.0**-52


if _JIT:

    @kernel
    def _buf(n):
        return np.empty(n)

else:

    def _buf(n):
        return np.zeros(n, dtype=object)


# error-free transformations -----------------------------------------------


@kernel
def two_sum(a, b):
    s = a + b
    bb = s - a
    e = (a - (s - bb)) + (b - bb)
    return s, e


@kernel
def fast_two_sum(a, b):
    s = a + b
    e = b - (s - a)
    return s, e


@kernel
def split(a):
    t = SPLITTER * a
    hi = t - (t - a)
    lo = a - hi
    return hi, lo


@kernel
def two_prod(a, b):
    if abs(float(a)) > SPLIT_THRESH or abs(float(b)) > SPLIT_THRESH:
        # splitting would overflow; a finite product then keeps the scaled
        # error term well above the subnormal range, so scaling is exact
        if abs(float(a)) > SPLIT_THRESH:
            p, e = _two_prod_split(a * 3.7252902984619140625e-09, b)  # 2^-28
        else:
            p, e = _two_prod_split(a, b * 3.7252902984619140625e-09)
        return p * 268435456.0, e * 268435456.0
    return _two_prod_split(a, b)


@kernel
def _two_prod_split(a, b):
    p = a * b
    ah, al = split(a)
    bh, bl = split(b)
    e = ((ah * bh - p) + ah * bl + al * bh) + al * bl
    return p, e


@kernel
def two_sum_many(a, b, s, e):
    for i in range(a.shape[0]):
        x, y = two_sum(a[i], b[i])
        s[i] = x
        e[i] = y


@kernel
def two_prod_many(a, b, p, e):
    for i in range(a.shape[0]):
        x, y = two_prod(a[i], b[i])
        p[i] = x
        e[i] = y


# renormalization ----------------------------------------------------------


@kernel
def _before(a, b):
    # ordering for renormalization: larger magnitude first, ties by value
    fa = abs(float(a))
    fb = abs(float(b))
    if fa != fb:
        return fa > fb
    return float(a) > float(b)


@kernel
def _sort_desc(t, m):
    for i in range(1, m):
        v = t[i]
        j = i - 1
        while j >= 0 and _before(v, t[j]):
            t[j + 1] = t[j]
            j -= 1
        t[j + 1] = v


@kernel
def _vec_sum(t, m):
    s = t[m - 1]
    for i in range(m - 2, -1, -1):
        s, e = two_sum(t[i], s)
        t[i + 1] = e
    t[0] = s


@kernel
def _canonical(t, m):
    # each nonzero term is absorbed when added to its predecessor; zeros trail
    for i in range(m - 1):
        a = float(t[i])
        b = float(t[i + 1])
        if b != 0.0:
            if a == 0.0 or a + b != a:
                return False
    return True


@kernel
def _canonical_nonzero(t, m):
    # like _canonical but zeros may sit anywhere
    prev = 0.0
    for i in range(m):
        b = float(t[i])
        if b != 0.0:
            if prev != 0.0 and prev + b != prev:
                return False
            prev = b
    return True


@kernel
def _err_branch(t, m, k, out):
    for i in range(k):
        out[i] = 0.0
    j = 0
    eps = t[0]
    for i in range(1, m):
        r, e = fast_two_sum(eps, t[i])
        out[j] = r
        if e != 0.0:
            if j >= k - 1:
                return
            j += 1
            eps = e
        else:
            eps = r
    if j < k:
        out[j] = eps


@kernel
def renorm(t, m, k, out):
    """Renormalize the m terms in ``t`` (clobbered) into k limbs of ``out``.

    Sort by magnitude, one bottom-up VecSum and the branching error
    accumulation, then a few canonicalizing passes on the k outputs.
    Exact up to the final truncation for inputs produced by the arithmetic
    below (merged or level-accumulated expansions).
    """
    if m == 1:
        out[0] = t[0]
        for i in range(1, k):
            out[i] = 0.0
        return
    _sort_desc(t, m)
    _vec_sum(t, m)
    _err_branch(t, m, k, out)
    for _ in range(4):
        if _canonical(out, k):
            return
        for i in range(k):
            t[i] = out[i]
        _sort_desc(t, k)
        _vec_sum(t, k)
        _err_branch(t, k, k, out)


@kernel
def renorm_robust(t, m, k, out):
    """Renormalize arbitrary (overlapping, unordered) terms.

    Repeated sort + VecSum distills the terms into a nonoverlapping
    sequence before truncation; every step is exact.
    """
    for _ in range(2 * m + 2):
        _sort_desc(t, m)
        _vec_sum(t, m)
        if _canonical_nonzero(t, m):
            break
    renorm(t, m, k, out)


# real k-fold arithmetic ---------------------------------------------------
#
# The underscored kernels take a scratch vector ``ws`` (see ws_size) so that
# inner loops never allocate; each one keeps its locals at the front of
# ws and hands the rest to its callees.  The public names allocate.


@kernel
def ws_size(k):
    return 4 * k * k + 64 * k + 64


@kernel
def _dd_add(a0, a1, b0, b1):
    s1, s2 = two_sum(a0, b0)
    t1, t2 = two_sum(a1, b1)
    s2 = s2 + t1
    s1, s2 = fast_two_sum(s1, s2)
    s2 = s2 + t2
    return fast_two_sum(s1, s2)


@kernel
def _dd_mul(a0, a1, b0, b1):
    p, e = two_prod(a0, b0)
    e = e + (a0 * b1 + a1 * b0)
    return fast_two_sum(p, e)


@kernel
def _add(x, y, out, k, ws):
    if k == 1:
        out[0] = x[0] + y[0]
    elif k == 2:
        h, l = _dd_add(x[0], x[1], y[0], y[1])
        out[0] = h
        out[1] = l
    else:
        for i in range(k):
            ws[i] = x[i]
            ws[k + i] = y[i]
        renorm(ws, 2 * k, k, out)


@kernel
def _sub(x, y, out, k, ws):
    if k == 1:
        out[0] = x[0] - y[0]
    elif k == 2:
        h, l = _dd_add(x[0], x[1], -y[0], -y[1])
        out[0] = h
        out[1] = l
    else:
        for i in range(k):
            ws[i] = x[i]
            ws[k + i] = -y[i]
        renorm(ws, 2 * k, k, out)


@kernel
def _lex_greater(x, y, k):
    for i in range(k):
        a = float(x[i])
        b = float(y[i])
        if a != b:
            return a > b
    return False


@kernel
def _mul_levels(x, y, out, k, ws):
    # Layout of ws: v (the level being summed) first, so that _vec_sum and
    # renorm work in place, then the operands, error terms and results.
    # Operands go in canonical order so that x*y and y*x share every rounding.
    oa = k * k + 2 * k
    ob = oa + k
    oe = ob + k
    oh = oe + k * k + k
    orr = oh + k
    swap = _lex_greater(x, y, k)
    for i in range(k):
        if swap:
            ws[oa + i] = y[i]
            ws[ob + i] = x[i]
        else:
            ws[oa + i] = x[i]
            ws[ob + i] = y[i]
    p, e = two_prod(ws[oa], ws[ob])
    ws[orr] = p
    ws[oe] = e
    ne = 1
    for n in range(1, k):
        for i in range(n + 1):
            p, e = two_prod(ws[oa + i], ws[ob + n - i])
            ws[i] = p
            ws[oh + i] = e
        for i in range(ne):
            ws[n + 1 + i] = ws[oe + i]
        m = n + 1 + ne
        _vec_sum(ws, m)
        ws[orr + n] = ws[0]
        for i in range(m - 1):
            ws[oe + i] = ws[i + 1]
        for i in range(n + 1):
            ws[oe + m - 1 + i] = ws[oh + i]
        ne = m + n
    # guard term: level-k products and all leftover errors
    acc = ws[oa + 1] * ws[ob + k - 1]
    for i in range(2, k):
        acc = acc + ws[oa + i] * ws[ob + k - i]
    for i in range(ne):
        acc = acc + ws[oe + i]
    for i in range(k):
        ws[i] = ws[orr + i]
    ws[k] = acc
    renorm(ws, k + 1, k, out)


@kernel
def _mul(x, y, out, k, ws):
    if k == 1:
        out[0] = x[0] * y[0]
    elif k == 2:
        h, l = _dd_mul(x[0], x[1], y[0], y[1])
        out[0] = h
        out[1] = l
    else:
        _mul_levels(x, y, out, k, ws)


@kernel
def _mul_d(x, c, out, k, ws):
    if k == 1:
        out[0] = x[0] * c
        return
    for i in range(k):
        p, e = two_prod(x[i], c)
        ws[2 * i] = p
        ws[2 * i + 1] = e
    renorm(ws, 2 * k, k, out)


@kernel
def _div(x, y, out, k, ws):
    """Long division: k+1 quotient digits, each followed by a correction."""
    if k == 1:
        out[0] = x[0] / y[0]
        return
    q = ws[0 : k + 1]
    rem = ws[k + 1 : 2 * k + 1]
    t = ws[2 * k + 1 : 5 * k + 1]
    for i in range(k):
        rem[i] = x[i]
    for i in range(k + 1):
        q[i] = rem[0] / y[0]
        if i == k:
            break
        for j in range(k):
            t[j] = rem[j]
        for j in range(k):
            p, e = two_prod(q[i], y[j])
            t[k + 2 * j] = -p
            t[k + 2 * j + 1] = -e
        renorm(t, 3 * k, k, rem)
    renorm(q, k + 1, k, out)


@kernel
def _sqrt(x, out, k, ws):
    """Square root by Newton iteration on the reciprocal square root."""
    if x[0] == 0.0:
        for i in range(k):
            out[i] = 0.0
        return
    if k == 1:
        out[0] = math.sqrt(x[0])
        return
    y = ws[0:k]
    h = ws[k : 2 * k]
    w = ws[2 * k : 3 * k]
    one = ws[3 * k : 4 * k]
    s = ws[4 * k : 5 * k]
    rest = ws[5 * k :]
    for i in range(k):
        one[i] = 0.0
        y[i] = 0.0
    one[0] = 1.0
    y[0] = 1.0 / math.sqrt(float(x[0]))
    steps = int(math.ceil(math.log2(k))) + 1
    for _ in range(steps):
        _mul(y, y, h, k, rest)
        _mul(x, h, w, k, rest)
        _sub(one, w, h, k, rest)
        _mul(y, h, w, k, rest)
        for i in range(k):
            w[i] = 0.5 * w[i]
        _add(y, w, h, k, rest)
        for i in range(k):
            y[i] = h[i]
    # s = x*y, then s + y*(x - s^2)/2
    _mul(x, y, s, k, rest)
    _mul(s, s, h, k, rest)
    _sub(x, h, w, k, rest)
    _mul(y, w, h, k, rest)
    for i in range(k):
        h[i] = 0.5 * h[i]
    _add(s, h, out, k, rest)


@kernel
def md_add(x, y, out, k):
    _add(x, y, out, k, _buf(ws_size(k)))


@kernel
def md_sub(x, y, out, k):
    _sub(x, y, out, k, _buf(ws_size(k)))


@kernel
def md_mul(x, y, out, k):
    _mul(x, y, out, k, _buf(ws_size(k)))


@kernel
def md_mul_d(x, c, out, k):
    """Multiply an expansion by a single double."""
    _mul_d(x, c, out, k, _buf(ws_size(k)))


@kernel
def md_div(x, y, out, k):
    _div(x, y, out, k, _buf(ws_size(k)))


@kernel
def md_sqrt(x, out, k):
    _sqrt(x, out, k, _buf(ws_size(k)))


@kernel
def md_neg(x, out, k):
    for i in range(k):
        out[i] = -x[i]


@kernel
def md_copy(x, out, k):
    for i in range(k):
        out[i] = x[i]


# complex k-fold arithmetic on (2, k) arrays --------------------------------


@kernel
def _pair(ws, k):
    # a (2, k) complex scratch value at the front of ws, and the rest
    return ws[0 : 2 * k].reshape((2, k)), ws[2 * k :]


@kernel
def _cadd(a, b, out, k, ws):
    _add(a[0], b[0], out[0], k, ws)
    _add(a[1], b[1], out[1], k, ws)


@kernel
def _csub(a, b, out, k, ws):
    _sub(a[0], b[0], out[0], k, ws)
    _sub(a[1], b[1], out[1], k, ws)


@kernel
def _cmul(a, b, out, k, ws):
    if k == 1:
        ar = a[0, 0]
        ai = a[1, 0]
        br = b[0, 0]
        bi = b[1, 0]
        out[0, 0] = ar * br - ai * bi
        out[1, 0] = ar * bi + ai * br
    elif k == 2:
        rh, rl, ih, il = _cmul2(a[0, 0], a[0, 1], a[1, 0], a[1, 1], b[0, 0], b[0, 1], b[1, 0], b[1, 1])
        out[0, 0] = rh
        out[0, 1] = rl
        out[1, 0] = ih
        out[1, 1] = il
    else:
        t0, rest = _pair(ws, k)
        t1, rest = _pair(rest, k)
        _mul(a[0], b[0], t0[0], k, rest)
        _mul(a[1], b[1], t0[1], k, rest)
        _mul(a[0], b[1], t1[0], k, rest)
        _mul(a[1], b[0], t1[1], k, rest)
        _sub(t0[0], t0[1], out[0], k, rest)
        _add(t1[0], t1[1], out[1], k, rest)


@kernel
def _cmul2(ar0, ar1, ai0, ai1, br0, br1, bi0, bi1):
    t1h, t1l = _dd_mul(ar0, ar1, br0, br1)
    t2h, t2l = _dd_mul(ai0, ai1, bi0, bi1)
    t3h, t3l = _dd_mul(ar0, ar1, bi0, bi1)
    t4h, t4l = _dd_mul(ai0, ai1, br0, br1)
    rh, rl = _dd_add(t1h, t1l, -t2h, -t2l)
    ih, il = _dd_add(t3h, t3l, t4h, t4l)
    return rh, rl, ih, il


@kernel
def _cconj_mul(a, b, out, k, ws):
    """conj(a) * b"""
    ac, rest = _pair(ws, k)
    for i in range(k):
        ac[0, i] = a[0, i]
        ac[1, i] = -a[1, i]
    _cmul(ac, b, out, k, rest)


@kernel
def _cabs2(a, out, k, ws):
    t, rest = _pair(ws, k)
    _mul(a[0], a[0], t[0], k, rest)
    _mul(a[1], a[1], t[1], k, rest)
    _add(t[0], t[1], out, k, rest)


@kernel
def _cdiv(a, b, out, k, ws):
    num, rest = _pair(ws, k)
    den = rest[0:k]
    rest = rest[k:]
    _cabs2(b, den, k, rest)
    _cconj_mul(b, a, num, k, rest)
    _div(num[0], den, out[0], k, rest)
    _div(num[1], den, out[1], k, rest)


@kernel
def _cscale(a, s, out, k, ws):
    _mul(a[0], s, out[0], k, ws)
    _mul(a[1], s, out[1], k, ws)


@kernel
def _cscale_d(a, c, out, k, ws):
    _mul_d(a[0], c, out[0], k, ws)
    _mul_d(a[1], c, out[1], k, ws)


@kernel
def c_add(a, b, out, k):
    _cadd(a, b, out, k, _buf(ws_size(k)))


@kernel
def c_sub(a, b, out, k):
    _csub(a, b, out, k, _buf(ws_size(k)))


@kernel
def c_neg(a, out, k):
    for i in range(k):
        out[0, i] = -a[0, i]
        out[1, i] = -a[1, i]


@kernel
def c_mul(a, b, out, k):
    _cmul(a, b, out, k, _buf(ws_size(k)))


@kernel
def c_conj_mul(a, b, out, k):
    _cconj_mul(a, b, out, k, _buf(ws_size(k)))


@kernel
def c_abs2(a, out, k):
    _cabs2(a, out, k, _buf(ws_size(k)))


@kernel
def c_div(a, b, out, k):
    _cdiv(a, b, out, k, _buf(ws_size(k)))


@kernel
def c_scale(a, s, out, k):
    """Multiply a complex number by a real k-fold number s."""
    _cscale(a, s, out, k, _buf(ws_size(k)))


@kernel
def c_scale_d(a, c, out, k):
    _cscale_d(a, c, out, k, _buf(ws_size(k)))


@kernel
def c_is_zero(a, k):
    return a[0, 0] == 0.0 and a[1, 0] == 0.0


@kernel
def c_lead_abs(a):
    return math.hypot(a[0, 0], a[1, 0])


# truncated power series on (d+1, 2, k) arrays -------------------------------


@kernel
def _smul_small(a, b, out, k, cnt):
    # k <= 2 on scalars: the same operations as the general loop in _smul,
    # without creating array views in the innermost loop
    d1 = a.shape[0]
    for j in range(d1):
        first = True
        r0 = 0.0
        r1 = 0.0
        i0 = 0.0
        i1 = 0.0
        half = (j + 1) // 2
        for i in range(half + 1):
            if i == half:
                if j % 2 != 0:
                    break
                p0, p1, p2, p3 = _cmul_at(a, i, b, i, k)
                cnt[0] += 1
            else:
                q0, q1, q2, q3 = _cmul_at(a, i, b, j - i, k)
                s0, s1, s2, s3 = _cmul_at(a, j - i, b, i, k)
                p0, p1, p2, p3 = _cadd_at(q0, q1, q2, q3, s0, s1, s2, s3, k)
                cnt[0] += 2
                cnt[1] += 1
            if first:
                r0, r1, i0, i1 = p0, p1, p2, p3
                first = False
            else:
                r0, r1, i0, i1 = _cadd_at(r0, r1, i0, i1, p0, p1, p2, p3, k)
                cnt[1] += 1
        out[j, 0, 0] = r0
        out[j, 1, 0] = i0
        if k == 2:
            out[j, 0, 1] = r1
            out[j, 1, 1] = i1
    cnt[2] += 1


@kernel
def _cmul_at(a, i, b, j, k):
    if k == 1:
        ar = a[i, 0, 0]
        ai = a[i, 1, 0]
        br = b[j, 0, 0]
        bi = b[j, 1, 0]
        return ar * br - ai * bi, 0.0, ar * bi + ai * br, 0.0
    return _cmul2(a[i, 0, 0], a[i, 0, 1], a[i, 1, 0], a[i, 1, 1], b[j, 0, 0], b[j, 0, 1], b[j, 1, 0], b[j, 1, 1])


@kernel
def _cadd_at(x0, x1, x2, x3, y0, y1, y2, y3, k):
    if k == 1:
        return x0 + y0, 0.0, x2 + y2, 0.0
    rh, rl = _dd_add(x0, x1, y0, y1)
    ih, il = _dd_add(x2, x3, y2, y3)
    return rh, rl, ih, il


@kernel
def _smul(a, b, out, k, cnt, ws):
    """Cauchy product truncated at the common degree.

    Coefficient j sums the pairs a_i*b_(j-i) + a_(j-i)*b_i for i < j-i in
    increasing i, then the middle square a_(j/2)*b_(j/2) when j is even.
    Pairing makes the product commutative bit for bit.  ``cnt[0]`` and
    ``cnt[1]`` receive the coefficient multiplications and additions,
    ``cnt[2]`` the number of series products.  ``out`` must not alias.
    """
    if k <= 2:
        _smul_small(a, b, out, k, cnt)
        return
    d1 = a.shape[0]
    p, rest = _pair(ws, k)
    q, rest = _pair(rest, k)
    pair, rest = _pair(rest, k)
    acc, rest = _pair(rest, k)
    for j in range(d1):
        first = True
        half = (j + 1) // 2
        for i in range(half):
            _cmul(a[i], b[j - i], p, k, rest)
            _cmul(a[j - i], b[i], q, k, rest)
            _cadd(p, q, pair, k, rest)
            cnt[0] += 2
            cnt[1] += 1
            if first:
                acc[:, :] = pair
                first = False
            else:
                _cadd(acc, pair, acc, k, rest)
                cnt[1] += 1
        if j % 2 == 0:
            _cmul(a[j // 2], b[j // 2], p, k, rest)
            cnt[0] += 1
            if first:
                acc[:, :] = p
            else:
                _cadd(acc, p, acc, k, rest)
                cnt[1] += 1
        out[j, :, :] = acc
    cnt[2] += 1


@kernel
def s_mul(a, b, out, k, cnt):
    _smul(a, b, out, k, cnt, _buf(ws_size(k)))


@kernel
def _sadd(a, b, out, k, ws):
    for j in range(a.shape[0]):
        _cadd(a[j], b[j], out[j], k, ws)


@kernel
def s_add(a, b, out, k):
    _sadd(a, b, out, k, _buf(ws_size(k)))


@kernel
def s_sub(a, b, out, k):
    ws = _buf(ws_size(k))
    for j in range(a.shape[0]):
        _csub(a[j], b[j], out[j], k, ws)


@kernel
def s_inverse(a, out, k):
    """1/a by the recurrence y_j = -(sum_{i=1..j} a_i y_(j-i)) / a_0."""
    d1 = a.shape[0]
    ws = _buf(ws_size(k) + 6 * k)
    one, rest = _pair(ws, k)
    p, rest = _pair(rest, k)
    acc, rest = _pair(rest, k)
    for r in range(k):
        one[0, r] = 0.0
        one[1, r] = 0.0
    one[0, 0] = 1.0
    _cdiv(one, a[0], out[0], k, rest)
    for j in range(1, d1):
        _cmul(a[1], out[j - 1], acc, k, rest)
        for i in range(2, j + 1):
            _cmul(a[i], out[j - i], p, k, rest)
            _cadd(acc, p, acc, k, rest)
        _cdiv(acc, a[0], p, k, rest)
        c_neg(p, out[j], k)


# polynomial evaluation and differentiation ---------------------------------


@kernel
def poly_eval(x, exps, coefs, val, grad, cnt, want_grad, k):
    """Evaluate one polynomial (and optionally its gradient) at series x.

    x: (n, d+1, 2, k) series arguments; exps: (T, n) exponents;
    coefs: (T, d+1, 2, k) coefficient series; val: (d+1, 2, k);
    grad: (n, d+1, 2, k).  Per monomial the coefficient is the first factor
    of a forward product chain; partials come from prefix times suffix
    products, which costs 3(m-1) series products for m distinct linear
    factors.  Higher powers come from a power table and the exponent rule.
    """
    ws = _buf(ws_size(k))
    n = x.shape[0]
    d1 = x.shape[1]
    nterms = exps.shape[0]
    emax = 1
    for t in range(nterms):
        for v in range(n):
            if exps[t, v] > emax:
                emax = exps[t, v]
    need = np.zeros(n, dtype=np.int64)
    for t in range(nterms):
        for v in range(n):
            if exps[t, v] > need[v]:
                need[v] = exps[t, v]
    pw = np.zeros((n, emax + 1, d1, 2, k))
    for v in range(n):
        if need[v] >= 1:
            pw[v, 1, :, :, :] = x[v]
        for e in range(2, need[v] + 1):
            _smul(pw[v, e - 1], x[v], pw[v, e], k, cnt, ws)
    val[:, :, :] = 0.0
    if want_grad:
        grad[:, :, :, :] = 0.0
    pre = np.empty((n + 1, d1, 2, k))
    suf = np.empty((n + 2, d1, 2, k))
    q = np.empty((d1, 2, k))
    q2 = np.empty((d1, 2, k))
    tmp = np.empty((d1, 2, k))
    vars_ = np.empty(n, dtype=np.int64)
    for t in range(nterms):
        m = 0
        for v in range(n):
            if exps[t, v] > 0:
                vars_[m] = v
                m += 1
        pre[0, :, :, :] = coefs[t]
        for l in range(1, m + 1):
            v = vars_[l - 1]
            _smul(pre[l - 1], pw[v, exps[t, v]], pre[l], k, cnt, ws)
        _sadd(val, pre[m], tmp, k, ws)
        val[:, :, :] = tmp
        if not want_grad or m == 0:
            continue
        # suf[l] = F_l * ... * F_m for l >= 2
        if m >= 2:
            v = vars_[m - 1]
            suf[m, :, :, :] = pw[v, exps[t, v]]
            for l in range(m - 1, 1, -1):
                v = vars_[l - 1]
                _smul(pw[v, exps[t, v]], suf[l + 1], suf[l], k, cnt, ws)
        for l in range(1, m + 1):
            v = vars_[l - 1]
            if l == m:
                q[:, :, :] = pre[m - 1]
            else:
                _smul(pre[l - 1], suf[l + 1], q, k, cnt, ws)
            e = exps[t, v]
            if e > 1:
                _smul(q, pw[v, e - 1], q2, k, cnt, ws)
                for j in range(d1):
                    _cscale_d(q2[j], float(e), q[j], k, ws)
            _sadd(grad[v], q, tmp, k, ws)
            grad[v, :, :, :] = tmp


# dense complex linear algebra ---------------------------------------------


@kernel
def matvec_sub(a, x, b, k):
    """b <- b - a @ x with row sums accumulated in column order."""
    ws = _buf(ws_size(k))
    nr = a.shape[0]
    nc = a.shape[1]
    p = np.empty((2, k))
    acc = np.empty((2, k))
    for i in range(nr):
        _cmul(a[i, 0], x[0], acc, k, ws)
        for l in range(1, nc):
            _cmul(a[i, l], x[l], p, k, ws)
            _cadd(acc, p, acc, k, ws)
        _csub(b[i], acc, b[i], k, ws)


@kernel
def matvec(a, x, out, k):
    ws = _buf(ws_size(k))
    nr = a.shape[0]
    nc = a.shape[1]
    p = np.empty((2, k))
    for i in range(nr):
        _cmul(a[i, 0], x[0], out[i], k, ws)
        for l in range(1, nc):
            _cmul(a[i, l], x[l], p, k, ws)
            _cadd(out[i], p, out[i], k, ws)


@kernel
def lu_factor(a, piv, k):
    """In-place LU with partial pivoting on leading-limb magnitudes.

    Returns -1 on success, else the column whose pivot candidates are all
    exactly zero.
    """
    ws = _buf(ws_size(k))
    n = a.shape[0]
    for i in range(n):
        piv[i] = i
    lij = np.empty((2, k))
    p = np.empty((2, k))
    row = np.empty((n, 2, k))
    for j in range(n):
        best = -1.0
        ib = j
        for i in range(j, n):
            mag = c_lead_abs(a[i, j])
            if mag > best:
                best = mag
                ib = i
        if best == 0.0:
            return j
        if ib != j:
            row[:, :, :] = a[j]
            a[j, :, :, :] = a[ib]
            a[ib, :, :, :] = row
            tp = piv[j]
            piv[j] = piv[ib]
            piv[ib] = tp
        for i in range(j + 1, n):
            _cdiv(a[i, j], a[j, j], lij, k, ws)
            a[i, j, :, :] = lij
            for l in range(j + 1, n):
                _cmul(lij, a[j, l], p, k, ws)
                _csub(a[i, l], p, a[i, l], k, ws)
    return -1


@kernel
def lu_solve(lu, piv, b, x, k):
    ws = _buf(ws_size(k))
    n = lu.shape[0]
    p = np.empty((2, k))
    for i in range(n):
        x[i, :, :] = b[piv[i]]
    for i in range(1, n):
        for l in range(i):
            _cmul(lu[i, l], x[l], p, k, ws)
            _csub(x[i], p, x[i], k, ws)
    for i in range(n - 1, -1, -1):
        for l in range(i + 1, n):
            _cmul(lu[i, l], x[l], p, k, ws)
            _csub(x[i], p, x[i], k, ws)
        _cdiv(x[i], lu[i, i], p, k, ws)
        x[i, :, :] = p


@kernel
def lu_solve_adjoint(lu, piv, b, x, k):
    """Solve A^H x = b given PA = LU."""
    ws = _buf(ws_size(k))
    n = lu.shape[0]
    p = np.empty((2, k))
    z = np.empty((n, 2, k))
    z[:, :, :] = b
    # U^H y = b
    for i in range(n):
        for l in range(i):
            _cconj_mul(lu[l, i], z[l], p, k, ws)
            _csub(z[i], p, z[i], k, ws)
        uc = np.empty((2, k))
        uc[0, :] = lu[i, i, 0]
        for r in range(k):
            uc[1, r] = -lu[i, i, 1, r]
        _cdiv(z[i], uc, p, k, ws)
        z[i, :, :] = p
    # L^H w = y
    for i in range(n - 1, -1, -1):
        for l in range(i + 1, n):
            _cconj_mul(lu[l, i], z[l], p, k, ws)
            _csub(z[i], p, z[i], k, ws)
    for i in range(n):
        x[piv[i], :, :] = z[i]


@kernel
def qr_factor(a, vs, beta, tol, k):
    """Householder QR in place: R in the upper triangle of ``a``.

    vs[:, j] keeps reflector j (rows j.., zero above) and beta[j] = 2/|v|^2.
    Returns -1, or the first column whose diagonal is negligible
    (|R_jj| <= tol * max |R_ii| on leading limbs).
    """
    ws = _buf(ws_size(k))
    nr = a.shape[0]
    nc = a.shape[1]
    vs[:, :, :, :] = 0.0
    sigma = np.empty(k)
    t = np.empty(k)
    xnorm = np.empty(k)
    a0abs = np.empty(k)
    phase = np.empty((2, k))
    alpha = np.empty((2, k))
    w = np.empty((2, k))
    p = np.empty((2, k))
    bw = np.empty((2, k))
    rmax = 0.0
    for j in range(nc):
        for r in range(k):
            sigma[r] = 0.0
        for i in range(j + 1, nr):
            _cabs2(a[i, j], t, k, ws)
            _add(sigma, t, sigma, k, ws)
        _cabs2(a[j, j], a0abs, k, ws)
        _add(a0abs, sigma, t, k, ws)
        _sqrt(t, xnorm, k, ws)
        lead = abs(xnorm[0])
        if lead > rmax:
            rmax = lead
        if lead == 0.0 or lead <= tol * rmax:
            return j
        if c_is_zero(a[j, j], k):
            phase[:, :] = 0.0
            phase[0, 0] = 1.0
        else:
            _sqrt(a0abs, t, k, ws)
            _div(a[j, j, 0], t, phase[0], k, ws)
            _div(a[j, j, 1], t, phase[1], k, ws)
        _cscale(phase, xnorm, alpha, k, ws)
        c_neg(alpha, alpha, k)
        for i in range(j, nr):
            vs[i, j, :, :] = a[i, j]
        _csub(a[j, j], alpha, vs[j, j], k, ws)
        _cabs2(vs[j, j], t, k, ws)
        _add(t, sigma, t, k, ws)
        two = np.zeros(k)
        two[0] = 2.0
        _div(two, t, beta[j], k, ws)
        for c in range(j + 1, nc):
            _cconj_mul(vs[j, j], a[j, c], w, k, ws)
            for i in range(j + 1, nr):
                _cconj_mul(vs[i, j], a[i, c], p, k, ws)
                _cadd(w, p, w, k, ws)
            _cscale(w, beta[j], bw, k, ws)
            for i in range(j, nr):
                _cmul(bw, vs[i, j], p, k, ws)
                _csub(a[i, c], p, a[i, c], k, ws)
        a[j, j, :, :] = alpha
        for i in range(j + 1, nr):
            a[i, j, :, :] = 0.0
    return -1


@kernel
def qr_solve(r, vs, beta, b, x, k):
    """Least-squares solution of A x = b from qr_factor output."""
    ws = _buf(ws_size(k))
    nr = r.shape[0]
    nc = r.shape[1]
    y = np.empty((nr, 2, k))
    y[:, :, :] = b
    w = np.empty((2, k))
    p = np.empty((2, k))
    bw = np.empty((2, k))
    for j in range(nc):
        _cconj_mul(vs[j, j], y[j], w, k, ws)
        for i in range(j + 1, nr):
            _cconj_mul(vs[i, j], y[i], p, k, ws)
            _cadd(w, p, w, k, ws)
        _cscale(w, beta[j], bw, k, ws)
        for i in range(j, nr):
            _cmul(bw, vs[i, j], p, k, ws)
            _csub(y[i], p, y[i], k, ws)
    for i in range(nc - 1, -1, -1):
        x[i, :, :] = y[i]
        for l in range(i + 1, nc):
            _cmul(r[i, l], x[l], p, k, ws)
            _csub(x[i], p, x[i], k, ws)
        _cdiv(x[i], r[i, i], p, k, ws)
        x[i, :, :] = p


@kernel
def norm2(v, out, k):
    ws = _buf(ws_size(k))
    acc = np.zeros(k)
    t = np.empty(k)
    for i in range(v.shape[0]):
        _cabs2(v[i], t, k, ws)
        _add(acc, t, acc, k, ws)
    _sqrt(acc, out, k, ws)


@kernel
def unit_modulus(a, b, out, k):
    """(a + b i) / sqrt(a^2 + b^2) at k-fold precision, for doubles a, b."""
    ws = _buf(ws_size(k))
    for i in range(a.shape[0]):
        re = np.zeros(k)
        im = np.zeros(k)
        re[0] = a[i]
        im[0] = b[i]
        r2 = np.empty(k)
        r = np.empty(k)
        t = np.empty(k)
        _mul(re, re, r2, k, ws)
        _mul(im, im, t, k, ws)
        _add(r2, t, r2, k, ws)
        _sqrt(r2, r, k, ws)
        _div(re, r, out[i, 0], k, ws)
        _div(im, r, out[i, 1], k, ws)
