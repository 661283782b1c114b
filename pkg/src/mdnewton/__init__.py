"""Multiple-double arithmetic, power series and Newton's method for polynomial systems."""
from .expansion import (
    LEVELS,
    MNEMONICS,
    Expansion,
    OpCounter,
    PrecisionLossWarning,
    counting,
    format_expansion,
    md_add,
    md_div,
    md_mul,
    md_sqrt,
    md_sub,
    parse_expansion,
    renormalize,
    two_prod,
    two_sum,
)
from .linalg import (
    ComplexMD,
    LinAlgError,
    MatrixMD,
    RankDeficientError,
    SingularMatrixError,
    VectorMD,
    inv_condition_estimate,
    lu_factor,
    lu_solve,
    norm2,
    qr_factor,
    qr_least_squares,
)
from .newton import BlockToeplitzSystem, NewtonConfig, NewtonTrace, SolverError, forward_substitute, newton_step, run_newton
from .polysys import Monomial, Polynomial, PolySystem, circle_system, eval_and_diff, random_curve_system, random_system
from .runtime import JobQueue, StageError, claim_next, measure_efficiency, parallel_newton, run_stage
from .series import Series, SeriesMatrix, SeriesVector, format_series, linearize, ps_add, ps_inverse, ps_mul, ps_sub

__version__ = "0.1.0"
