"""Command-line front end.

Subcommands::

    solve FILE        solve a problem file and print every state
    toy-sweep         noise-free dt sweep on the navigation toy problem (CSV)
    monte-carlo       noisy Monte-Carlo on the toy problem (CSV + summary)

Exit codes: 0 success, 1 usage/parse/IO error, 2 solver error.  On failure
the first line on stderr is ``<ErrorName>: <message>``.
"""

from __future__ import annotations

import argparse
import sys
from contextlib import contextmanager
from dataclasses import dataclass

from . import __version__
from .errors import ProblemError, SolverError
from .experiments import (
    DEFAULT_DTS,
    DEFAULT_PRECISIONS,
    DEFAULT_SOLVERS,
    fmt,
    run_dt_sweep,
    run_monte_carlo,
    write_monte_carlo_csv,
    write_sweep_csv,
)
from .fileio import load_problem
from .numeric import Precision
from .solvers import SOLVERS, solve

EXIT_OK, EXIT_USAGE, EXIT_SOLVER = 0, 1, 2


class UsageError(Exception):
    pass


@dataclass(frozen=True)
class CliConfig:
    subcommand: str
    solvers: tuple[str, ...]
    precisions: tuple[str, ...]
    input: str | None = None
    out: str | None = None
    seed: int = 0
    dts: tuple[float, ...] = DEFAULT_DTS
    runs: int = 200

    def __post_init__(self):
        for s in self.solvers:
            if s not in SOLVERS:
                raise UsageError(f"unknown solver {s!r}; choose from {', '.join(SOLVERS)}")
        for p in self.precisions:
            if p not in ("single", "double"):
                raise UsageError(f"unknown precision {p!r}; choose from single, double")
        if any(not dt > 0 for dt in self.dts):
            raise UsageError("every dt must be positive")
        if self.runs < 1:
            raise UsageError("--runs must be at least 1")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _csv_list(text: str) -> tuple[str, ...]:
    return tuple(t.strip() for t in text.split(",") if t.strip())


def _float_list(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(t) for t in _csv_list(text))
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a comma-separated list of numbers: {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="fgsmooth", description="Factor-graph smoothing solvers and conditioning experiments.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="subcommand", required=True, parser_class=_Parser)

    p = sub.add_parser("solve", help="solve a problem file")
    p.add_argument("input", help="problem file")
    p.add_argument("--solver", default="scbifm", help="sqrt, batch, bifm or scbifm (default scbifm)")
    p.add_argument("--precision", default="double", help="single or double (default double)")

    for name, help_ in (("toy-sweep", "noise-free dt sweep"), ("monte-carlo", "noisy Monte-Carlo runs")):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--solver", default=",".join(DEFAULT_SOLVERS), help="comma-separated solver list")
        p.add_argument("--precision", default=",".join(DEFAULT_PRECISIONS), help="comma-separated precision list")
        p.add_argument("--dts", type=_float_list, default=DEFAULT_DTS, help="comma-separated time steps")
        p.add_argument("--out", default="-", help="CSV output path ('-' for stdout, the default)")
        p.add_argument("--seed", type=int, default=0)
        if name == "monte-carlo":
            p.add_argument("--runs", type=int, default=200)
    return parser


def parse_config(argv) -> CliConfig:
    ns = build_parser().parse_args(argv)
    return CliConfig(
        subcommand=ns.subcommand,
        solvers=_csv_list(ns.solver),
        precisions=_csv_list(ns.precision),
        input=getattr(ns, "input", None),
        out=getattr(ns, "out", None),
        seed=getattr(ns, "seed", 0),
        dts=tuple(getattr(ns, "dts", DEFAULT_DTS)),
        runs=getattr(ns, "runs", 200),
    )


@contextmanager
def _output(path: str | None, stdout):
    if path in (None, "-"):
        yield stdout
    else:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            yield fh


def cmd_solve(cfg: CliConfig, stdout) -> int:
    if len(cfg.solvers) != 1 or len(cfg.precisions) != 1:
        raise UsageError("solve takes exactly one --solver and one --precision")
    p = load_problem(cfg.input)
    sol = solve(p, cfg.solvers[0], Precision.parse(cfg.precisions[0]))
    for k, x in enumerate(sol.states()):
        stdout.write(f"x[{k}] = " + " ".join(fmt(float(v)) for v in x) + "\n")
    return EXIT_OK


def cmd_toy_sweep(cfg: CliConfig, stdout) -> int:
    result = run_dt_sweep(cfg.dts, cfg.solvers, cfg.precisions)
    with _output(cfg.out, stdout) as fh:
        write_sweep_csv(result, fh)
    return EXIT_OK


def cmd_monte_carlo(cfg: CliConfig, stdout) -> int:
    result = run_monte_carlo(cfg.runs, dts=cfg.dts, solvers=cfg.solvers, precisions=cfg.precisions, seed=cfg.seed)
    with _output(cfg.out, stdout) as fh:
        write_monte_carlo_csv(result, fh)
    stdout.write(f"# mean distance to batch/double over {cfg.runs} runs\n")
    stdout.write("# dt solver precision mean_distance\n")
    for (dt, s, p), mean in result.averages().items():
        stdout.write(f"# {fmt(dt)} {s} {p} {fmt(mean)}\n")
    return EXIT_OK


COMMANDS = {"solve": cmd_solve, "toy-sweep": cmd_toy_sweep, "monte-carlo": cmd_monte_carlo}


def main(argv=None, stdout=None, stderr=None) -> int:
    stdout = stdout or sys.stdout
    stderr = stderr or sys.stderr

    def fail(exc: BaseException, code: int) -> int:
        msg = " ".join(str(exc).split())
        stderr.write(f"{type(exc).__name__}: {msg}\n")
        return code

    try:
        cfg = parse_config(sys.argv[1:] if argv is None else argv)
        return COMMANDS[cfg.subcommand](cfg, stdout)
    except SolverError as exc:
        return fail(exc, EXIT_SOLVER)
    except (UsageError, ProblemError, OSError, ValueError) as exc:
        return fail(exc, EXIT_USAGE)


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
