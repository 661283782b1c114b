"""Command line front end.

Exit status: 0 when the run meets its numerical checks, 1 when a check
fails or Newton does not converge, 2 for usage and configuration errors.
"""
from __future__ import annotations

import argparse
import sys
from dataclasses import dataclass, field, replace
from fractions import Fraction
from pathlib import Path

from .expansion import LEVELS, MNEMONICS, NAMES, PUBLISHED_COSTS, Expansion, format_expansion, published_total, report_costs
from .linalg import VectorMD, dumps_matrix, dumps_vector, loads, norm2, unit_modulus_vector
from .newton import NewtonConfig, SolverError, run_newton
from .polysys import PolySystem, circle_system, random_curve_system
from .runtime import bench_rows, measure_efficiency, parallel_newton, resolve_workers, write_bench_csv
from .series import format_series

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2

DEGREES = (8, 16, 24, 32)
DEFAULT_TOLERANCE = 1.0e-32

# allowed |norm - 8| in the norm experiment, per level
NORM_THRESHOLDS = {1: 1e-14, 2: 1e-30, 3: 1e-46, 4: 1e-62, 5: 1e-78, 8: 1e-126, 10: 1e-157}

COSINE = {0: Fraction(1), 2: Fraction(-1, 2), 4: Fraction(1, 24), 6: Fraction(-1, 720), 8: Fraction(1, 40320)}


class UsageError(ValueError):
    pass


@dataclass
class RunConfig:
    command: str = ""
    seed: int = 0
    N: int = 64
    n: int = 64
    terms: int = 64
    max_exponent: int = 2
    degrees: list[int] = field(default_factory=lambda: [8, 16, 32])
    precisions: list[int] = field(default_factory=lambda: list(LEVELS))
    workers: list[int] = field(default_factory=lambda: [1, 2, 4, 8])
    tolerance: float | None = None
    max_iterations: int | None = None
    repeats: int = 3
    out: str | None = None

    def validate(self) -> "RunConfig":
        if any(d not in DEGREES for d in self.degrees):
            raise UsageError(f"degree must be one of {DEGREES}")
        if any(k not in LEVELS for k in self.precisions):
            raise UsageError(f"precision must be one of {sorted(MNEMONICS, key=MNEMONICS.get)}")
        if self.n < 1 or self.N < self.n:
            raise UsageError("need --vars >= 1 and --polys >= --vars")
        if self.terms < 1 or self.terms > (self.max_exponent + 1) ** self.n:
            raise UsageError("--terms must be positive and fit the exponent space")
        if self.tolerance is not None and not self.tolerance > 0:
            raise UsageError("--tol must be positive")
        if self.max_iterations is not None and self.max_iterations < 1:
            raise UsageError("--max-iters must be at least 1")
        if self.repeats < 1:
            raise UsageError("--repeats must be at least 1")
        if not self.workers or min(self.workers) < 1:
            raise UsageError("--workers needs positive counts")
        return self


# option parsing helpers -------------------------------------------------------


def _precisions(text: str) -> list[int]:
    out = []
    for part in text.split(","):
        part = part.strip()
        if part in MNEMONICS:
            out.append(MNEMONICS[part])
        elif part.isdigit() and int(part) in LEVELS:
            out.append(int(part))
        else:
            raise UsageError(f"unknown precision {part!r}")
    return out


def _ints(text: str) -> list[int]:
    try:
        return [int(p) for p in str(text).split(",") if p.strip()]
    except ValueError:
        raise UsageError(f"expected comma-separated integers, got {text!r}") from None


def _workers(text: str) -> list[int]:
    try:
        return resolve_workers(text)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def read_config_file(path) -> dict[str, str]:
    """Plain key=value lines; '#' starts a comment."""
    values = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected key=value")
        key, value = (s.strip() for s in line.split("=", 1))
        values[key.replace("-", "_")] = value
    return values


_CONVERTERS = {
    "seed": ("seed", int),
    "polys": ("N", int),
    "vars": ("n", int),
    "terms": ("terms", int),
    "max_exponent": ("max_exponent", int),
    "degree": ("degrees", _ints),
    "precision": ("precisions", _precisions),
    "workers": ("workers", _workers),
    "tol": ("tolerance", float),
    "max_iters": ("max_iterations", int),
    "repeats": ("repeats", int),
    "out": ("out", str),
}


def build_config(args: argparse.Namespace, **defaults) -> RunConfig:
    """Defaults, then the config file, then command line flags."""
    cfg = RunConfig(command=args.command, **defaults)
    layers = []
    if getattr(args, "config", None):
        layers.append(read_config_file(args.config))
    layers.append({key: getattr(args, key) for key in _CONVERTERS if getattr(args, key, None) is not None})
    for layer in layers:
        for key, raw in layer.items():
            if key not in _CONVERTERS:
                raise UsageError(f"unknown configuration key {key!r}")
            attr, convert = _CONVERTERS[key]
            try:
                setattr(cfg, attr, convert(raw))
            except ValueError as exc:
                raise UsageError(f"bad value for {key}: {raw!r} ({exc})") from None
    cfg.validate()
    if cfg.tolerance is None and cfg.command != "circle-demo":
        cfg.tolerance = DEFAULT_TOLERANCE
    return cfg


# commands ----------------------------------------------------------------------


def norm_experiment(k: int, n: int = 64, seed: int = 0) -> Expansion:
    """2-norm of n random unit-modulus complex numbers at level k (exactly sqrt(n) ideally)."""
    return norm2(unit_modulus_vector(n, k, seed))


def cmd_norm_demo(cfg: RunConfig) -> int:
    ok = True
    for k in cfg.precisions:
        value = norm_experiment(k, seed=cfg.seed)
        err = abs(value.exact() - 8)
        passed = err <= Fraction(NORM_THRESHOLDS[k])
        ok &= passed
        print(f"{NAMES[k]:>14} : {format_expansion(value)}   |norm-8| = {float(err):.3E} {'ok' if passed else 'FAIL'}")
    return EXIT_OK if ok else EXIT_FAIL


def check_circle(solution, k: int, degree: int, atol: float = 1e-13) -> list[str]:
    """Problems with the x-series of the circle demo, empty when it matches cos."""
    x = solution[0]
    problems = []
    for j in range(min(degree, 8) + 1):
        coef = x[j]
        if j % 2:
            mag = abs(complex(coef))
            if mag > atol:
                problems.append(f"odd coefficient t^{j} has modulus {mag:.3E}")
            continue
        err = abs(Fraction(coef.re.exact()) - COSINE[j]) + abs(coef.im.exact())
        if err > Fraction(atol):
            problems.append(f"coefficient of t^{j} off by {float(err):.3E}")
    return problems


def cmd_circle_demo(cfg: RunConfig) -> int:
    k = cfg.precisions[0]
    degree = cfg.degrees[0]
    tol = cfg.tolerance
    f = circle_system(k, degree)
    trace = run_newton(f, [1.0, 0.0], NewtonConfig(degree=degree, tolerance=tol, max_iterations=cfg.max_iterations, precision=k))
    print(f"circle demo at {NAMES[k]}, degree {degree}, tolerance {tol:.1E}")
    print(f"x = {format_series(trace.solution[0])}")
    print(f"y = {format_series(trace.solution[1])}")
    print(f"iterations {trace.iterations}, last update {trace.final_update_norm:.3E}, converged {trace.converged}")
    if cfg.out:
        trace.to_csv(cfg.out)
    if not trace.converged:
        print("Newton did not converge; trace:", file=sys.stderr)
        print(trace.to_csv(), file=sys.stderr, end="")
        return EXIT_FAIL
    problems = check_circle(trace.solution, k, degree)
    for p in problems:
        print("FAIL:", p)
    return EXIT_FAIL if problems else EXIT_OK


def cmd_cost_report(cfg: RunConfig) -> int:
    print(f"{'k':>3} {'op':>4} | {'+':>5} {'-':>5} {'*':>5} {'/':>3} {'total':>6} | {'published':>9} | {'ratio':>7}")
    base = {op: c.total for op, c in report_costs(1).items()}
    totals = {}
    ok = True
    for k in cfg.precisions:
        for op, c in report_costs(k).items():
            pub = published_total(k, op)
            ratio = c.total / base[op]
            totals[k, op] = c.total
            print(f"{k:>3} {op:>4} | {c.adds:>5} {c.subs:>5} {c.muls:>5} {c.divs:>3} {c.total:>6} | {pub if pub else '-':>9} | {ratio:>7.1f}")
            if k in PUBLISHED_COSTS and not pub / 4 <= c.total <= pub * 4:
                ok = False
                print(f"FAIL: {op} at k={k} is not within a factor 4 of {pub}")
    if (10, "mul") in totals and totals[10, "mul"] < 1000 * base["mul"]:
        ok = False
        print("FAIL: deca double multiplication is less than 1000 times a double one")
    return EXIT_OK if ok else EXIT_FAIL


def cmd_bench(cfg: RunConfig) -> int:
    rows = []
    for degree in cfg.degrees:
        for k in cfg.precisions:
            f, z = random_curve_system(cfg.seed, cfg.N, cfg.n, cfg.terms, cfg.max_exponent, k, degree)
            ncfg = NewtonConfig(degree=degree, tolerance=cfg.tolerance, max_iterations=cfg.max_iterations, precision=k)
            workers = sorted(set(cfg.workers) | {1})
            results = measure_efficiency(f, ncfg, workers, x0=z, repeats=cfg.repeats)
            new = bench_rows(results, seed=cfg.seed, N=cfg.N, n=cfg.n, terms=cfg.terms, degree=degree, k=k)
            for row in new:
                print(",".join(str(v) for v in row.values()), flush=True)
            rows += new
    out = cfg.out or "bench.csv"
    write_bench_csv(out, rows)
    plot = Path(out).with_suffix(".plot.dat")
    with open(plot, "w") as fh:
        fh.write("# degree k workers efficiency\n")
        for row in rows:
            fh.write(f"{row['degree']} {row['k']} {row['workers']} {row['efficiency']}\n")
    print(f"wrote {out} and {plot}")
    return EXIT_OK


def cmd_gen(cfg: RunConfig, circle: bool) -> int:
    k, degree = cfg.precisions[0], cfg.degrees[0]
    if circle:
        f, z = circle_system(k, degree), [1.0, 0.0]
    else:
        f, z = random_curve_system(cfg.seed, cfg.N, cfg.n, cfg.terms, cfg.max_exponent, k, degree)
    out = Path(cfg.out or "system.txt")
    f.save(out)
    start = out.with_suffix(".start.txt")
    start.write_text(dumps_vector(VectorMD.from_complex(z, k)))
    print(f"wrote {out} and {start}")
    return EXIT_OK


def cmd_newton(cfg: RunConfig, system_path: str, start_path: str | None) -> int:
    try:
        f = PolySystem.load(system_path)
    except (OSError, ValueError) as exc:
        raise UsageError(f"cannot read system file: {exc}") from None
    if start_path:
        x0 = loads(Path(start_path).read_text())
        if not isinstance(x0, VectorMD):
            raise UsageError("start file must hold a vector")
    else:
        x0 = [1.0] * f.n
    ncfg = NewtonConfig(degree=f.degree, tolerance=cfg.tolerance, max_iterations=cfg.max_iterations, precision=f.k)
    try:
        trace = parallel_newton(f, x0, ncfg, cfg.workers[0])
    except SolverError as exc:
        print(f"solver failed: {exc}", file=sys.stderr)
        if exc.matrix is not None:
            dump = Path(cfg.out or "newton").with_suffix(".A0.txt")
            dump.write_text(dumps_matrix(exc.matrix))
            print(f"leading matrix written to {dump}", file=sys.stderr)
        return EXIT_FAIL
    csv_text = trace.to_csv(cfg.out)
    if not cfg.out:
        print(csv_text, end="")
    for i, s in enumerate(trace.solution):
        print(f"x{i + 1} = {format_series(s)}")
    status = "converged" if trace.converged else "diverged" if trace.diverged else "not converged"
    print(f"{status} after {trace.iterations} iterations, last update {trace.final_update_norm:.3E}")
    return EXIT_OK if trace.converged else EXIT_FAIL


# parser -----------------------------------------------------------------------


def make_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="FILE", help="key=value defaults; flags take precedence")
    common.add_argument("--seed", type=int)
    common.add_argument("--polys", type=int, help="number of polynomials N")
    common.add_argument("--vars", type=int, help="number of variables n")
    common.add_argument("--terms", type=int, help="monomials per polynomial")
    common.add_argument("--max-exponent", dest="max_exponent", type=int, help="largest exponent per variable (default 2)")
    common.add_argument("--degree", help="truncation degree(s), comma separated, from 8,16,24,32")
    common.add_argument("--precision", help="d,dd,td,qd,pd,od,xd (comma separated where a list makes sense)")
    common.add_argument("--workers", help="worker counts, e.g. 1,2,4,8 or max")
    common.add_argument("--tol", type=float, help="tolerance on the update (default 1.0E-32)")
    common.add_argument("--max-iters", dest="max_iters", type=int, help="override the iteration cap")
    common.add_argument("--repeats", type=int, help="timing repetitions, best kept (default 3)")
    common.add_argument("--out", help="output file")

    parser = argparse.ArgumentParser(prog="mdnewton", description="Multiple-double Newton's method on power series.")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("norm-demo", parents=[common], help="norm of 64 unit-modulus numbers at each precision")
    sub.add_parser("circle-demo", parents=[common], help="cosine series from the circle and a sine polynomial")
    sub.add_parser("bench", parents=[common], help="speedup and efficiency on random systems, CSV output")
    sub.add_parser("cost-report", parents=[common], help="hardware operation counts per precision")
    p = sub.add_parser("newton", parents=[common], help="run Newton on a saved system file")
    p.add_argument("system", help="system file written by 'gen'")
    p.add_argument("--start", help="start vector file (default all ones)")
    p = sub.add_parser("gen", parents=[common], help="write a random (or the circle) system and its start point")
    p.add_argument("--circle", action="store_true")
    return parser


def main(argv=None) -> int:
    parser = make_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "norm-demo":
            return cmd_norm_demo(build_config(args))
        if args.command == "circle-demo":
            cfg = build_config(args, degrees=[8], precisions=[1])
            if cfg.tolerance is None:
                # double precision cannot reach 1e-32
                cfg = replace(cfg, tolerance=1.0e-12 if cfg.precisions[0] == 1 else DEFAULT_TOLERANCE)
            return cmd_circle_demo(cfg)
        if args.command == "cost-report":
            return cmd_cost_report(build_config(args))
        if args.command == "bench":
            return cmd_bench(build_config(args))
        if args.command == "gen":
            return cmd_gen(build_config(args, degrees=[8], precisions=[2], N=8, n=8, terms=8), args.circle)
        if args.command == "newton":
            return cmd_newton(build_config(args, workers=[1]), args.system, args.start)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"{parser.prog}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
