"""Newton's method on power series: block Toeplitz forward substitution."""
from __future__ import annotations

import csv
import io
import math
import time
from dataclasses import dataclass, field
from functools import partial

import numpy as np

from .expansion import Expansion, check_level
from .kernels import fast
from .linalg import (
    ComplexMD,
    LinAlgError,
    MatrixMD,
    RankDeficientError,
    SingularMatrixError,
    VectorMD,
    inv_condition_estimate,
    lift_complex,
    lu_factor,
    qr_factor,
)
from .polysys import PolySystem, assemble, eval_job, series_args, workspace
from .series import Series, SeriesMatrix, SeriesVector, ShapeError

#: iteration caps per truncation degree
MAX_ITERATIONS = {8: 8, 16: 8, 24: 12, 32: 16}


def default_max_iterations(degree: int) -> int:
    return MAX_ITERATIONS.get(degree, max(8, math.ceil(degree / 2)))


def run_sequential(jobs) -> None:
    """Reference stage runner: jobs in index order on the calling thread."""
    for job in jobs:
        job()


class SolverError(LinAlgError):
    """The leading matrix could not be factored."""

    def __init__(self, message: str, inv_condition: float | None, index: int, matrix: MatrixMD | None = None):
        super().__init__(f"{message} (estimated 1/cond = {inv_condition})")
        self.inv_condition = inv_condition
        self.index = index
        self.matrix = matrix


@dataclass(frozen=True)
class BlockToeplitzSystem:
    """A(t) dx(t) = b(t) matched power by power: a lower triangular block system."""

    A: SeriesMatrix
    b: SeriesVector

    def __post_init__(self):
        if self.A.degree != self.b.degree:
            raise ShapeError("matrix and right-hand side series differ in degree")
        if self.A.shape[0] != self.b.n:
            raise ShapeError(f"{self.A.shape} matrices do not fit vectors of length {self.b.n}")
        if self.A.k != self.b.k:
            raise ShapeError("precision mismatch")
        if self.A.shape[0] < self.A.shape[1]:
            raise ShapeError("need at least as many rows as columns")


def factor_leading(a0: MatrixMD, least_squares: bool | None = None):
    """LU when square (unless least squares is forced), Householder QR otherwise."""
    nr, nc = a0.shape
    use_qr = nr > nc if least_squares is None else least_squares
    if not use_qr and nr != nc:
        raise ShapeError("an overdetermined system must be solved in the least squares sense")
    try:
        return qr_factor(a0) if use_qr else lu_factor(a0)
    except (SingularMatrixError, RankDeficientError) as exc:
        rcond = inv_condition_estimate(a0) if nr == nc else None
        raise SolverError(str(exc), rcond, exc.index, a0) from exc


def forward_substitute(system: BlockToeplitzSystem, stage_runner=run_sequential, least_squares=None) -> SeriesVector:
    """Solve for dx_0..dx_d with a single factorization of A_0.

    After dx_j is known, every later right-hand side b_m (m > j) is updated
    by b_m - A_(m-j) dx_j.  Those updates are independent jobs handed to
    ``stage_runner``; each writes only its own b_m.
    """
    a = system.A.data
    k = system.A.k
    d1 = a.shape[0]
    factors = factor_leading(MatrixMD(a[0]), least_squares)
    rhs = system.b.data.copy()
    dx = np.empty((d1, a.shape[2], 2, k))
    for j in range(d1):
        factors.solve_data(rhs[j], dx[j])
        if j + 1 < d1:
            stage_runner([partial(fast.matvec_sub, a[m - j], dx[j], rhs[m], k) for m in range(j + 1, d1)])
    return SeriesVector(dx)


# the outer iteration --------------------------------------------------------


@dataclass(frozen=True)
class NewtonConfig:
    degree: int = 8
    tolerance: float = 1.0e-32
    max_iterations: int | None = None
    precision: int = 2
    least_squares: bool | None = None
    divergence_factor: float = 1.0e6

    def __post_init__(self):
        check_level(self.precision)
        if self.degree < 0:
            raise ValueError("degree must be non-negative")
        if not self.tolerance > 0:
            raise ValueError("tolerance must be positive")
        if self.max_iterations is not None and self.max_iterations < 1:
            raise ValueError("max_iterations must be at least 1")
        if not self.divergence_factor > 1:
            raise ValueError("divergence_factor must exceed 1")

    @property
    def iterations(self) -> int:
        if self.max_iterations is None:
            return default_max_iterations(self.degree)
        return self.max_iterations


@dataclass(frozen=True)
class IterationRecord:
    iteration: int
    update_norm: float
    wall_seconds: float
    max_update: float = math.nan


@dataclass
class NewtonTrace:
    records: list[IterationRecord] = field(default_factory=list)
    converged: bool = False
    diverged: bool = False
    solution: list[Series] = field(default_factory=list)
    wall_seconds: float = 0.0

    @property
    def iterations(self) -> int:
        return len(self.records)

    @property
    def final_update_norm(self) -> float:
        return self.records[-1].update_norm if self.records else math.nan

    @property
    def update_norms(self) -> list[float]:
        return [r.update_norm for r in self.records]

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["iteration", "update_norm", "wall_seconds"])
        for r in self.records:
            writer.writerow([r.iteration, f"{r.update_norm:.17g}", f"{r.wall_seconds:.6f}"])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", newline="") as fh:
                fh.write(text)
        return text

    def same_numbers(self, other: "NewtonTrace") -> bool:
        """Equal in everything except wall-clock times."""
        return (
            self.update_norms == other.update_norms
            and self.converged == other.converged
            and self.diverged == other.diverged
            and all(a == b for a, b in zip(self.solution, other.solution))
            and len(self.solution) == len(other.solution)
        )


def update_norm(dx: np.ndarray) -> float:
    """Largest modulus in the last coefficient vector of an update."""
    last = dx[-1]
    return float(np.max(np.hypot(last[:, 0, 0], last[:, 1, 0]))) if last.shape[0] else 0.0


def max_update(dx: np.ndarray) -> float:
    """Largest modulus over all coefficients of an update."""
    return float(np.max(np.hypot(dx[..., 0, 0], dx[..., 1, 0]))) if dx.size else 0.0


def _step(f: PolySystem, xs: np.ndarray, stage_runner, least_squares):
    vals, grads = workspace(f)
    job = eval_job(f, xs, vals, grads)
    stage_runner([partial(job, i) for i in range(f.N)])
    b, a = assemble(vals, grads)
    dx = forward_substitute(BlockToeplitzSystem(SeriesMatrix(a), SeriesVector(b)), stage_runner, least_squares).data
    out = np.empty_like(xs)
    dxt = np.ascontiguousarray(dx.transpose(1, 0, 2, 3))
    for i in range(f.n):
        fast.s_add(xs[i], dxt[i], out[i], f.k)
    return out, dx


def newton_step(f: PolySystem, x, stage_runner=run_sequential, least_squares=None):
    """One Newton step at the series vector x; returns (x + dx, |dx_d|)."""
    xs = series_args(x, f.n, f.degree, f.k)
    out, dx = _step(f, xs, stage_runner, least_squares)
    return [Series(s) for s in out], update_norm(dx)


def start_vector(x0, f: PolySystem) -> np.ndarray:
    """Constant start point -> series arguments with zero higher coefficients."""
    k, d1 = f.k, f.degree + 1
    xs = np.zeros((f.n, d1, 2, k))
    if isinstance(x0, VectorMD):
        if x0.k != k:
            raise ShapeError("start point precision differs from the system")
        values = list(x0.data)
    else:
        values = list(x0)
    if len(values) != f.n:
        raise ShapeError(f"start point has {len(values)} entries, the system has {f.n} variables")
    for i, v in enumerate(values):
        if isinstance(v, np.ndarray):
            xs[i, 0] = v
        elif isinstance(v, ComplexMD):
            xs[i, 0] = v.data
        elif isinstance(v, Expansion):
            xs[i, 0, 0] = Expansion(v, k).limbs
        else:
            xs[i, 0] = lift_complex(complex(v), k)
    return xs


def run_newton(f: PolySystem, x0, cfg: NewtonConfig, stage_runner=run_sequential) -> NewtonTrace:
    """Iterate until |dx_d| <= tolerance, the iteration cap, or blow-up.

    Convergence also needs every other coefficient of the update within the
    tolerance: symmetric systems can leave the last coefficient untouched
    for a step while lower ones still move.  Blow-up means an update norm above ``divergence_factor`` times the
    smallest nonzero one seen before; the trace is then flagged as diverged.
    """
    if (cfg.degree, cfg.precision) != (f.degree, f.k):
        raise ValueError(
            f"config (degree {cfg.degree}, k {cfg.precision}) does not match the system (degree {f.degree}, k {f.k})"
        )
    xs = start_vector(x0, f)
    trace = NewtonTrace()
    smallest = math.inf
    begin = time.perf_counter()
    for it in range(1, cfg.iterations + 1):
        t0 = time.perf_counter()
        xs, dx = _step(f, xs, stage_runner, cfg.least_squares)
        norm = update_norm(dx)
        full = max_update(dx)
        trace.records.append(IterationRecord(it, norm, time.perf_counter() - t0, full))
        if norm <= cfg.tolerance and full <= cfg.tolerance:
            trace.converged = True
            break
        if not math.isfinite(norm) or norm > cfg.divergence_factor * smallest:
            trace.diverged = True
            break
        if norm > 0.0:
            smallest = min(smallest, norm)
    trace.wall_seconds = time.perf_counter() - begin
    trace.solution = [Series(s) for s in xs]
    return trace
