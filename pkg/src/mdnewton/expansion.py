"""Multiple-double numbers: unevaluated sums of k hardware doubles."""
from __future__ import annotations

import math
import re
import threading
import warnings
from contextlib import contextmanager
from dataclasses import dataclass, fields
from fractions import Fraction

import numpy as np

from .kernels import fast, ref

LEVELS = (1, 2, 3, 4, 5, 8, 10)
MNEMONICS = {"d": 1, "dd": 2, "td": 3, "qd": 4, "pd": 5, "od": 8, "xd": 10}
NAMES = {
    1: "double",
    2: "double double",
    3: "triple double",
    4: "quad double",
    5: "penta double",
    8: "octo double",
    10: "deca double",
}

# Published hardware-operation counts (+, -, *, /) per operation and level.
PUBLISHED_COSTS = {
    2: {"add": (8, 12, 0, 0), "mul": (5, 9, 9, 0), "div": (33, 18, 16, 3)},
    3: {"add": (13, 22, 0, 0), "mul": (83, 84, 42, 0), "div": (113, 214, 63, 4)},
    4: {"add": (35, 54, 0, 0), "mul": (99, 164, 73, 0), "div": (266, 510, 112, 5)},
    5: {"add": (44, 78, 0, 0), "mul": (162, 283, 109, 0), "div": (474, 898, 175, 6)},
    8: {"add": (95, 174, 0, 0), "mul": (529, 954, 259, 0), "div": (1599, 3070, 448, 9)},
    10: {"add": (139, 258, 0, 0), "mul": (952, 1743, 394, 0), "div": (2899, 5598, 700, 11)},
}


class PrecisionLossWarning(UserWarning):
    """The rounding error of a product fell into the subnormal range."""


def check_level(k: int) -> int:
    if k not in LEVELS:
        raise ValueError(f"precision level must be one of {LEVELS}, got {k}")
    return k


def level_from_mnemonic(name: str) -> int:
    try:
        return MNEMONICS[name]
    except KeyError:
        raise ValueError(f"unknown precision {name!r}; use one of {sorted(MNEMONICS, key=MNEMONICS.get)}") from None


def _check_rounding():
    u = 2.0**-53
    if not (1.0 + u == 1.0 and (1.0 + 2 * u) + u == 1.0 + 4 * u and 1.0 + 3 * u / 2 == 1.0 + 2 * u):
        raise RuntimeError("floating-point rounding is not round-to-nearest-even")


_check_rounding()


# operation counting ---------------------------------------------------------


@dataclass
class OpCounter:
    adds: int = 0
    subs: int = 0
    muls: int = 0
    divs: int = 0
    fmas: int = 0

    @property
    def total(self) -> int:
        return self.adds + self.subs + self.muls + self.divs + self.fmas

    def reset(self) -> None:
        for f in fields(self):
            setattr(self, f.name, 0)

    def __add__(self, other: "OpCounter") -> "OpCounter":
        return OpCounter(*(getattr(self, f.name) + getattr(other, f.name) for f in fields(self)))


_state = threading.local()


def _tally(name):
    counter = getattr(_state, "counter", None)
    if counter is not None:
        setattr(counter, name, getattr(counter, name) + 1)


@contextmanager
def counting():
    """Count hardware operations done by ``counted_*`` calls in this thread."""
    counter = OpCounter()
    previous = getattr(_state, "counter", None)
    _state.counter = counter
    try:
        yield counter
    finally:
        _state.counter = previous


class _Counted(float):
    __slots__ = ()

    def __add__(self, other):
        _tally("adds")
        return _Counted(float(self) + float(other))

    def __radd__(self, other):
        _tally("adds")
        return _Counted(float(other) + float(self))

    def __sub__(self, other):
        _tally("subs")
        return _Counted(float(self) - float(other))

    def __rsub__(self, other):
        _tally("subs")
        return _Counted(float(other) - float(self))

    def __mul__(self, other):
        _tally("muls")
        return _Counted(float(self) * float(other))

    def __rmul__(self, other):
        _tally("muls")
        return _Counted(float(other) * float(self))

    def __truediv__(self, other):
        _tally("divs")
        return _Counted(float(self) / float(other))

    def __rtruediv__(self, other):
        _tally("divs")
        return _Counted(float(other) / float(self))

    def __neg__(self):
        return _Counted(-float(self))

    def __pos__(self):
        return self


ref._buf = lambda n: np.array([_Counted(0.0)] * n, dtype=object)


def _counted_call(kernel, *operands, k):
    args = [[_Counted(v) for v in x.limbs] for x in operands]
    out = [_Counted(0.0)] * k
    kernel(*args, out, k)
    return Expansion._wrap(np.array([float(v) for v in out]))


def counted_add(x, y):
    return _counted_call(ref.md_add, x, y, k=_same_k(x, y))


def counted_mul(x, y):
    return _counted_call(ref.md_mul, x, y, k=_same_k(x, y))


def counted_div(x, y):
    if y.is_zero:
        raise ZeroDivisionError("division by a zero expansion")
    return _counted_call(ref.md_div, x, y, k=_same_k(x, y))


def counted_sqrt(x):
    return _counted_call(ref.md_sqrt, x, k=x.k)


# error-free transformations -------------------------------------------------


def two_sum(a: float, b: float) -> tuple[float, float]:
    """s = fl(a + b) and e with s + e == a + b exactly."""
    return fast.two_sum(float(a), float(b))


def two_prod(a: float, b: float) -> tuple[float, float]:
    """p = fl(a * b) and e with p + e == a * b exactly (Dekker splitting).

    Warns with :class:`PrecisionLossWarning` when the error term may have
    been rounded because the product is too close to the subnormal range.
    """
    p, e = fast.two_prod(float(a), float(b))
    if p != 0.0 and math.isfinite(p) and abs(p) < 2.0**-968:
        warnings.warn("product error below the normal range", PrecisionLossWarning, stacklevel=2)
    return p, e


# the number type ------------------------------------------------------------


def _same_k(x, y):
    if x.k != y.k:
        raise ValueError(f"precision mismatch: {x.k} vs {y.k}")
    return x.k


class Expansion:
    """A k-fold multiple double, immutable.

    ``limbs`` holds k doubles of decreasing magnitude whose exact sum is the
    value.  Arithmetic keeps results normalized: each nonzero limb is
    absorbed when added to its predecessor, and zeros trail.
    """

    __slots__ = ("limbs",)

    def __init__(self, value=0.0, k: int = 2):
        check_level(k)
        if isinstance(value, Expansion):
            limbs = _resize(value.limbs, k)
        elif isinstance(value, str):
            limbs = parse_expansion(value, k).limbs
        elif isinstance(value, Fraction):
            limbs = _from_fraction(value, k)
        else:
            if isinstance(value, int) and not isinstance(value, bool) and abs(value) >= 2**53:
                limbs = _from_fraction(Fraction(value), k)
            else:
                limbs = np.zeros(k)
                limbs[0] = float(value)
        limbs = np.array(limbs, dtype=np.float64)
        limbs.setflags(write=False)
        object.__setattr__(self, "limbs", limbs)

    @classmethod
    def _wrap(cls, arr):
        obj = object.__new__(cls)
        arr = np.ascontiguousarray(arr, dtype=np.float64)
        arr.setflags(write=False)
        object.__setattr__(obj, "limbs", arr)
        return obj

    @classmethod
    def from_limbs(cls, limbs) -> "Expansion":
        """Renormalize arbitrary limbs; the level is their count."""
        return renormalize(limbs, len(limbs))

    def __setattr__(self, name, value):
        raise AttributeError("Expansion is immutable")

    @property
    def k(self) -> int:
        return self.limbs.shape[0]

    @property
    def is_zero(self) -> bool:
        return self.limbs[0] == 0.0

    @property
    def isfinite(self) -> bool:
        return bool(np.isfinite(self.limbs).all())

    def exact(self) -> Fraction:
        """The represented value as an exact rational."""
        return sum((Fraction(float(v)) for v in self.limbs), Fraction(0))

    def __float__(self):
        return float(self.limbs[0])

    def __repr__(self):
        return f"Expansion({format_expansion(self)!r}, k={self.k})"

    def __str__(self):
        return format_expansion(self)

    def _coerce(self, other):
        if isinstance(other, Expansion):
            _same_k(self, other)
            return other
        if isinstance(other, (int, float, Fraction)):
            return Expansion(other, self.k)
        return NotImplemented

    def __add__(self, other):
        other = self._coerce(other)
        if other is NotImplemented:
            return other
        return md_add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        other = self._coerce(other)
        if other is NotImplemented:
            return other
        return md_sub(self, other)

    def __rsub__(self, other):
        other = self._coerce(other)
        if other is NotImplemented:
            return other
        return md_sub(other, self)

    def __mul__(self, other):
        other = self._coerce(other)
        if other is NotImplemented:
            return other
        return md_mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = self._coerce(other)
        if other is NotImplemented:
            return other
        return md_div(self, other)

    def __rtruediv__(self, other):
        other = self._coerce(other)
        if other is NotImplemented:
            return other
        return md_div(other, self)

    def __neg__(self):
        return Expansion._wrap(-self.limbs)

    def __abs__(self):
        return -self if self.limbs[0] < 0 else self

    def sqrt(self) -> "Expansion":
        return md_sqrt(self)

    def __eq__(self, other):
        if isinstance(other, Expansion):
            return self.k == other.k and bool(np.array_equal(self.limbs, other.limbs))
        if isinstance(other, (int, float, Fraction)):
            return self.exact() == Fraction(other)
        return NotImplemented

    def __hash__(self):
        return hash(tuple(self.limbs.tolist()))

    def __lt__(self, other):
        return self.exact() < _exact(other)

    def __le__(self, other):
        return self.exact() <= _exact(other)

    def __gt__(self, other):
        return self.exact() > _exact(other)

    def __ge__(self, other):
        return self.exact() >= _exact(other)


def _exact(value):
    return value.exact() if isinstance(value, Expansion) else Fraction(value)


def _resize(limbs, k):
    if len(limbs) == k:
        return limbs.copy()
    if len(limbs) > k:
        return renormalize(limbs, k).limbs
    out = np.zeros(k)
    out[: len(limbs)] = limbs
    return out


def _from_fraction(value: Fraction, k: int):
    limbs = np.zeros(k)
    rest = value
    for i in range(k):
        v = float(rest)
        limbs[i] = v
        rest -= Fraction(v)
        if rest == 0:
            break
    return renormalize(limbs, k).limbs


def _finish(out, lead):
    if not np.isfinite(out).all():
        out[:] = 0.0
        out[0] = lead
    return Expansion._wrap(out)


def renormalize(values, k: int) -> Expansion:
    """Normalize any finite doubles into a k-limb expansion of their sum."""
    check_level(k)
    t = np.array(values, dtype=np.float64).ravel()
    if t.size == 0:
        return Expansion(0.0, k)
    out = np.zeros(k)
    if not np.isfinite(t).all():
        return _finish(np.full(k, np.nan), float(np.sum(t)))
    fast.renorm_robust(t, t.size, k, out)
    return Expansion._wrap(out)


def md_add(x: Expansion, y: Expansion) -> Expansion:
    k = _same_k(x, y)
    out = np.empty(k)
    fast.md_add(x.limbs, y.limbs, out, k)
    return _finish(out, x.limbs[0] + y.limbs[0])


def md_sub(x: Expansion, y: Expansion) -> Expansion:
    k = _same_k(x, y)
    out = np.empty(k)
    fast.md_sub(x.limbs, y.limbs, out, k)
    return _finish(out, x.limbs[0] - y.limbs[0])


def md_mul(x: Expansion, y: Expansion) -> Expansion:
    k = _same_k(x, y)
    out = np.empty(k)
    fast.md_mul(x.limbs, y.limbs, out, k)
    return _finish(out, x.limbs[0] * y.limbs[0])


def md_div(x: Expansion, y: Expansion) -> Expansion:
    k = _same_k(x, y)
    if y.is_zero:
        raise ZeroDivisionError("division by a zero expansion")
    out = np.empty(k)
    fast.md_div(x.limbs, y.limbs, out, k)
    return _finish(out, x.limbs[0] / y.limbs[0])


def md_sqrt(x: Expansion) -> Expansion:
    if x.limbs[0] < 0:
        raise ValueError("square root of a negative expansion")
    out = np.empty(x.k)
    fast.md_sqrt(x.limbs, out, x.k)
    return _finish(out, math.sqrt(x.limbs[0]))


# cost report ----------------------------------------------------------------


def report_costs(k: int, seed: int = 0) -> dict[str, OpCounter]:
    """Measured hardware-operation counts of one add, mul and div at level k."""
    check_level(k)
    rng = np.random.default_rng(seed)

    def operand():
        return Expansion.from_limbs(rng.standard_normal(k) * 2.0 ** (-53.0 * np.arange(k)))

    x, y = operand(), operand()
    costs = {}
    for name, op in (("add", counted_add), ("mul", counted_mul), ("div", counted_div)):
        with counting() as c:
            op(x, y)
        costs[name] = c
    return costs


def published_total(k: int, op: str) -> int | None:
    if k == 1:
        return 1
    row = PUBLISHED_COSTS.get(k, {}).get(op)
    return None if row is None else sum(row)


# text -----------------------------------------------------------------------


def format_expansion(x: Expansion) -> str:
    """Leading limb with 15 significant digits, then the signed second limb."""
    head = f"{x.limbs[0]:.14E}"
    if x.k == 1:
        return head
    second = x.limbs[1]
    sign = "-" if math.copysign(1.0, second) < 0 else "+"
    return f"{head} {sign} {abs(second):.14E}"


_NUM = r"(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?"
_TERM = re.compile(rf"\s*([+-]?)\s*({_NUM})\s*")


def parse_expansion(text: str, k: int) -> Expansion:
    """Parse a decimal number or a signed sum of decimals like the two-part form."""
    check_level(k)
    pos = 0
    total = Fraction(0)
    count = 0
    while pos < len(text):
        m = _TERM.match(text, pos)
        if not m or m.end() == pos or (count > 0 and not m.group(1)):
            raise ValueError(f"cannot parse expansion from {text!r}")
        value = Fraction(m.group(2))
        total += -value if m.group(1) == "-" else value
        count += 1
        pos = m.end()
    if count == 0:
        raise ValueError(f"cannot parse expansion from {text!r}")
    return Expansion._wrap(_from_fraction(total, k))


def limbs_to_text(limbs) -> str:
    """Exact, round-trippable limb rendering used by the file formats."""
    return " ".join(repr(float(v)) for v in limbs)


def limbs_from_text(text: str, k: int) -> np.ndarray:
    parts = text.split()
    if len(parts) != k:
        raise ValueError(f"expected {k} limbs, got {len(parts)}")
    return np.array([float(p) for p in parts])
