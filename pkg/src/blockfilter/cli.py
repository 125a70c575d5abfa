"""Command-line harness: ``blockfilter {run,verify,partition,generate}``.

Every subcommand is driven by a :class:`RunConfig`. Values come from the
defaults, then an optional ``--config`` JSON file, then explicit flags.

Exit codes::

    0   success
    1   internal error (a bug)
    2   invalid configuration
    3   file I/O error (missing or unwritable file)
    4   malformed input file (Matrix Market, partition, vector)
    5   partition error
    6   singular diagonal block
    7   F-bar construction failure
    8   solver error (breakdown, indefiniteness)
    9   dimension mismatch
    10  filtering verification failed

Errors are reported on stderr as ``error[<category>]: <message>``.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import factor as ff
from . import fbar as fb
from . import krylov
from . import partition as pt
from . import problems
from .errors import (
    BlockFilterError,
    DimensionMismatch,
    FbarConstructionFailure,
    MatrixMarketError,
    PartitionError,
    SingularDiagonalBlock,
    SolverError,
)
from .sparse import canonical, inf_norm, mm_read, mm_write, permute_symmetric

SCHEMA_VERSION = 1
OUTPUT_DIR_ENV = "BLOCKFILTER_OUTPUT_DIR"
DEFAULT_REPORT = "blockfilter-report.json"
DEFAULT_LEVELS = 2
SCALAR_DEVIATION_TOL = 1e-12

EXIT_OK = 0
EXIT_INTERNAL = 1
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_FORMAT = 4
EXIT_PARTITION = 5
EXIT_SINGULAR = 6
EXIT_FBAR = 7
EXIT_SOLVER = 8
EXIT_DIMENSION = 9
EXIT_VERIFY = 10

COMMANDS = ("run", "verify", "partition", "generate")
SOLVERS = ("gmres", "cg", "none")
RHS_KINDS = ("random", "ones")


class ConfigError(ValueError):
    pass


class InputFormatError(ValueError):
    """A partition or vector file that cannot be parsed."""


@dataclass
class RunConfig:
    command: str = "run"
    # matrix source: exactly one of ``matrix`` (file) and ``problem`` (generator kind)
    matrix: str | None = None
    problem: str | None = None
    dims: list[int] = field(default_factory=list)
    n: int | None = None
    epsilon: float = 1.0
    convection: float = 1.0
    nnz_per_row: int = 5
    seed: int = 0
    # partition source: at most one of these; nested dissection at DEFAULT_LEVELS otherwise
    levels: int | None = None
    sizes: list[int] | None = None
    blocks: int | None = None
    scalar_blocks: bool = False
    partition_file: str | None = None
    # filtering vector: a kind from problems.FILTER_KINDS or a path to a vector file
    filter: str = "ones"
    filter_seed: int = 0
    zero_fraction: float = 0.3
    variant: str = ff.DIRECT
    strategy: str = fb.DIAGONAL_NEAREST
    solver: str = "gmres"
    tol: float = 1e-8
    max_iters: int = 1000
    restart: int = 50
    rhs: str = "random"
    rhs_seed: int = 0
    output: str | None = None
    dump_dir: str | None = None
    solution_output: str | None = None
    per_block: bool = False
    # test hook "K,J": perturb one entry of F-bar for block pair (K, J)
    corrupt_fbar: str | None = None

    def validate(self) -> None:
        if self.command not in COMMANDS:
            raise ConfigError(f"unknown command {self.command!r}")
        if (self.matrix is None) == (self.problem is None):
            raise ConfigError("exactly one of --matrix and --problem is required")
        if self.problem is not None:
            self.problem_spec()
        chosen = [
            name
            for name, val in (
                ("levels", self.levels),
                ("sizes", self.sizes),
                ("blocks", self.blocks),
                ("partition_file", self.partition_file),
            )
            if val is not None
        ]
        if self.scalar_blocks:
            chosen.append("scalar_blocks")
        if len(chosen) > 1:
            raise ConfigError(f"conflicting partition sources: {', '.join(chosen)}")
        if self.levels is not None and self.levels < 0:
            raise ConfigError("levels must be >= 0")
        if self.blocks is not None and self.blocks < 1:
            raise ConfigError("blocks must be >= 1")
        if self.variant not in ff.VARIANTS:
            raise ConfigError(f"variant must be one of {ff.VARIANTS}")
        if self.strategy not in fb.STRATEGIES:
            raise ConfigError(f"strategy must be one of {fb.STRATEGIES}")
        if self.solver not in SOLVERS:
            raise ConfigError(f"solver must be one of {SOLVERS}")
        if self.rhs not in RHS_KINDS:
            raise ConfigError(f"rhs must be one of {RHS_KINDS}")
        if not 0.0 <= self.zero_fraction <= 1.0:
            raise ConfigError("zero_fraction must lie in [0, 1]")
        try:
            self.solver_params()
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        if self.corrupt_fbar is not None:
            self.corrupt_pair()

    def problem_spec(self) -> problems.ProblemSpec:
        try:
            return problems.ProblemSpec(
                self.problem,
                tuple(int(d) for d in self.dims),
                self.n,
                float(self.epsilon),
                float(self.convection),
                int(self.nnz_per_row),
                int(self.seed),
            )
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc

    def solver_params(self) -> krylov.SolverParams:
        return krylov.SolverParams(int(self.max_iters), float(self.tol), int(self.restart), True)

    def corrupt_pair(self) -> tuple[int, int]:
        try:
            k, j = (int(x) for x in str(self.corrupt_fbar).split(","))
        except ValueError as exc:
            raise ConfigError(f"corrupt_fbar must look like 'K,J', got {self.corrupt_fbar!r}") from exc
        return k, j

    def as_dict(self) -> dict:
        return dataclasses.asdict(self)


def load_config_file(path) -> dict:
    text = Path(path).read_text()
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: expected a JSON object")
    known = {f.name for f in dataclasses.fields(RunConfig)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"{path}: unknown keys {unknown}")
    return data


# -- pipeline pieces ---------------------------------------------------------


def load_matrix(cfg: RunConfig):
    if cfg.matrix is not None:
        A = mm_read(cfg.matrix)
        info = {"source": "file", "path": cfg.matrix}
    else:
        spec = cfg.problem_spec()
        A = problems.generate(spec)
        info = {"source": "problem", "problem": spec.as_dict()}
    if A.shape[0] != A.shape[1]:
        raise DimensionMismatch(f"matrix is {A.shape[0]}x{A.shape[1]}, expected square")
    A = canonical(A)
    info.update(
        n=int(A.shape[0]),
        nnz=int(A.nnz),
        inf_norm=inf_norm(A),
        symmetric=bool(canonical(A - A.T).nnz == 0),
    )
    return A, info


def make_partition(cfg: RunConfig, A) -> pt.BlockPartition:
    n = A.shape[0]
    if cfg.partition_file is not None:
        try:
            part = pt.read_partition(cfg.partition_file)
        except PartitionError as exc:
            raise InputFormatError(str(exc)) from exc
    elif cfg.sizes is not None:
        part = pt.partition_from_sizes(cfg.sizes)
    elif cfg.blocks is not None:
        if cfg.blocks > n:
            raise ConfigError(f"cannot split {n} unknowns into {cfg.blocks} blocks")
        part = pt.partition_from_sizes(pt.even_sizes(n, cfg.blocks))
    elif cfg.scalar_blocks:
        part = pt.partition_from_sizes([1] * n)
    else:
        part = pt.nested_dissection(A, cfg.levels if cfg.levels is not None else DEFAULT_LEVELS)
    if part.n != n:
        raise DimensionMismatch(f"partition covers {part.n} unknowns, matrix has {n}")
    return part


def make_filter_vector(cfg: RunConfig, n: int) -> np.ndarray:
    if cfg.filter in problems.FILTER_KINDS:
        return problems.filtering_vector(cfg.filter, n, cfg.filter_seed, cfg.zero_fraction)
    if not Path(cfg.filter).exists():
        raise FileNotFoundError(f"filter vector file {cfg.filter!r} not found")
    try:
        return problems.filtering_vector("custom", n, path=cfg.filter)
    except DimensionMismatch:
        raise
    except ValueError as exc:
        raise InputFormatError(str(exc)) from exc


def corruption_hook(k0: int, j0: int, magnitude: float = 1.0):
    """Hook that perturbs ``F(c, c)`` with ``c = argmax |v|`` for one block pair."""

    def hook(k, j, approx, block):
        if (k, j) != (k0, j0) or approx.size == 0:
            return approx
        c = int(np.argmax(np.abs(approx.v)))
        scale = magnitude * max(float(np.abs(approx.vals).max()) if approx.nnz else 0.0, 1.0)
        rows = np.append(approx.rows, c)
        cols = np.append(approx.cols, c)
        vals = np.append(approx.vals, scale)
        return fb.FbarApprox(approx.size, rows, cols, vals, approx.strategy, approx.u, approx.v)

    return hook


def partition_stats(A, part: pt.BlockPartition) -> dict:
    report = pt.validate_partition(A, part)
    return {
        "N": part.num_blocks,
        "block_sizes": [int(s) for s in part.block_sizes],
        "depth": part.depth,
        "violations": len(report.violations),
        "notes": list(part.notes),
    }


def build(cfg: RunConfig, Ap, part, tp):
    hook = None
    if cfg.corrupt_fbar is not None:
        hook = corruption_hook(*cfg.corrupt_pair())
    if cfg.variant == ff.EXACT:
        return ff.exact_block_ldu(Ap, part)
    return ff.build_filter_factorization(Ap, part, tp, cfg.variant, cfg.strategy, fbar_hook=hook)


def build_diagnostics(F: ff.BlockFactorization) -> dict:
    return {
        "fbar_count": len(F.fbar),
        "fbar_nnz": int(sum(a.nnz for a in F.fbar.values())),
        "fbar_residual_max": F.max_fbar_residual(),
        "factor_nnz": int(F.combined.nnz),
        "lower_blocks": len(F.lower_blocks),
        "upper_blocks": len(F.upper_blocks),
    }


def filtering_section(rep: ff.FilteringReport) -> dict:
    out = {
        "residual_inf": rep.residual_inf,
        "filtering_residual_rel": rep.residual_rel,
        "tolerance": ff.FILTER_TOL,
        "passed": rep.passed,
    }
    if rep.per_block is not None:
        out["per_block"] = [
            {"block": [i, j], "residual": r, "bound": rep.block_bounds[(i, j)], "pass": r <= rep.block_bounds[(i, j)]}
            for (i, j), r in sorted(rep.per_block.items())
        ]
        out["failing_blocks"] = [list(ij) for ij in rep.failing_blocks()]
    return out


def _rhs(cfg: RunConfig, n: int) -> np.ndarray:
    if cfg.rhs == "ones":
        return np.ones(n)
    return np.random.default_rng(cfg.rhs_seed).standard_normal(n)


def _report_path(cfg: RunConfig, required: bool) -> Path | None:
    if cfg.output is not None:
        return Path(cfg.output)
    env = os.environ.get(OUTPUT_DIR_ENV)
    if env:
        return Path(env) / DEFAULT_REPORT
    return Path(DEFAULT_REPORT) if required else None


def _finite(obj):
    # strict JSON has no inf/nan; they are written as strings
    if isinstance(obj, np.generic):
        obj = obj.item()
    if isinstance(obj, float) and not np.isfinite(obj):
        return str(obj)
    if isinstance(obj, dict):
        return {k: _finite(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_finite(v) for v in obj]
    return obj


def write_report(path: Path, report: dict) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(_finite(report), indent=2, sort_keys=True, allow_nan=False) + "\n")


def strip_wall_times(obj):
    """Copy of a report with every ``wall_time`` entry removed."""
    if isinstance(obj, dict):
        return {k: strip_wall_times(v) for k, v in obj.items() if k != "wall_time"}
    if isinstance(obj, list):
        return [strip_wall_times(v) for v in obj]
    return obj


# -- subcommands -------------------------------------------------------------


def _base_report(cfg: RunConfig, matrix_info: dict) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "command": cfg.command,
        "config": cfg.as_dict(),
        "matrix": matrix_info,
    }


def _pipeline(cfg: RunConfig, per_block: bool):
    t0 = time.perf_counter()
    A, minfo = load_matrix(cfg)
    part = make_partition(cfg, A)
    Ap = permute_symmetric(A, part.permutation)
    t = make_filter_vector(cfg, A.shape[0])
    tp = part.permute_vector(t)
    t1 = time.perf_counter()
    F = build(cfg, Ap, part, tp)
    t2 = time.perf_counter()
    frep = ff.filtering_residual(F, Ap, tp, per_block=per_block)
    report = _base_report(cfg, minfo)
    report["partition"] = partition_stats(A, part)
    report["build"] = build_diagnostics(F)
    report["build"]["wall_time"] = t2 - t1
    report["filtering"] = filtering_section(frep)
    report["setup"] = {"wall_time": t1 - t0}
    if cfg.dump_dir is not None:
        ref = None
        if cfg.partition_file is not None:
            ref = cfg.partition_file
        ff.dump_factorization(F, cfg.dump_dir, ref)
    return A, part, Ap, t, tp, F, frep, report


def cmd_run(cfg: RunConfig) -> int:
    path = _report_path(cfg, required=True)
    A, part, Ap, t, tp, F, frep, report = _pipeline(cfg, cfg.per_block)
    status = EXIT_OK if frep.passed else EXIT_VERIFY
    if cfg.solver != "none":
        b = part.permute_vector(_rhs(cfg, A.shape[0]))
        params = cfg.solver_params()
        solve = krylov.gmres if cfg.solver == "gmres" else krylov.cg
        try:
            res = solve(Ap, b, F.solve, params)
            solve_section = res.as_dict()
        except SolverError as exc:
            res = exc.report
            solve_section = res.as_dict() if res is not None else {}
            solve_section["error"] = str(exc)
            _diagnose("solver", str(exc))
            status = EXIT_SOLVER
        solve_section["solver"] = cfg.solver
        solve_section["filtering_residual_rel"] = frep.residual_rel
        report["solve"] = solve_section
        if cfg.solution_output is not None and res is not None and res.solution is not None:
            problems.write_vector(cfg.solution_output, part.unpermute_vector(res.solution))
    report["status"] = status
    write_report(path, report)
    return status


def cmd_verify(cfg: RunConfig) -> int:
    A, part, Ap, t, tp, F, frep, report = _pipeline(cfg, True)
    ok = frep.passed
    print(f"{'block':>12} {'||B_ij t_j||':>14} {'bound':>12}  status")
    failing = set(frep.failing_blocks())
    for (i, j), r in sorted(frep.per_block.items()):
        mark = "FAIL" if (i, j) in failing else "ok"
        print(f"{f'({i},{j})':>12} {r:14.3e} {frep.block_bounds[(i, j)]:12.3e}  {mark}")
    print(f"global ||Mt - At||_inf / (||A|| ||t||) = {frep.residual_rel:.3e} (tolerance {ff.FILTER_TOL:.0e})")

    if np.all(part.block_sizes == 1) and cfg.variant != ff.EXACT:
        E = ff.exact_block_ldu(Ap, part)
        dev = ff.blockwise_deviation(F, E)
        nonzero_t = bool(np.all(tp != 0.0))
        report["scalar_block_deviation"] = {
            "max_relative": dev,
            "tolerance": SCALAR_DEVIATION_TOL,
            "filter_entrywise_nonzero": nonzero_t,
        }
        print(f"scalar blocks: max blockwise deviation from exact LDU = {dev:.3e}")
        if nonzero_t and not dev <= SCALAR_DEVIATION_TOL:
            ok = False
            print("scalar-block exactness check FAILED")
        elif not nonzero_t:
            print("(filter vector has zeros; exactness is not expected)")
    for ij in sorted(failing):
        print(f"block {ij} violates the filtering property", file=sys.stderr)
    status = EXIT_OK if ok else EXIT_VERIFY
    report["status"] = status
    print("PASS" if ok else "FAIL")
    path = _report_path(cfg, required=False)
    if path is not None:
        write_report(path, report)
    return status


def cmd_partition(cfg: RunConfig) -> int:
    A, _ = load_matrix(cfg)
    part = make_partition(cfg, A)
    out = Path(cfg.output) if cfg.output else None
    if out is None:
        env = os.environ.get(OUTPUT_DIR_ENV)
        out = Path(env) / "partition.txt" if env else Path("partition.txt")
    out.parent.mkdir(parents=True, exist_ok=True)
    pt.write_partition(out, part)
    stats = partition_stats(A, part)
    print(f"N={stats['N']} depth={stats['depth']} violations={stats['violations']} -> {out}")
    return EXIT_OK if stats["violations"] == 0 else EXIT_PARTITION


def cmd_generate(cfg: RunConfig) -> int:
    A, info = load_matrix(cfg)
    out = Path(cfg.output) if cfg.output else None
    if out is None:
        env = os.environ.get(OUTPUT_DIR_ENV)
        out = Path(env) / "matrix.mtx" if env else Path("matrix.mtx")
    out.parent.mkdir(parents=True, exist_ok=True)
    mm_write(out, A, json.dumps(info.get("problem", {}), sort_keys=True))
    print(f"n={info['n']} nnz={info['nnz']} -> {out}")
    return EXIT_OK


HANDLERS = {"run": cmd_run, "verify": cmd_verify, "partition": cmd_partition, "generate": cmd_generate}


def _diagnose(category: str, message: str) -> None:
    print(f"error[{category}]: {message}", file=sys.stderr)


def execute(cfg: RunConfig) -> int:
    """Run one subcommand and map failures onto the documented exit codes."""
    try:
        cfg.validate()
        return HANDLERS[cfg.command](cfg)
    except ConfigError as exc:
        _diagnose("config", str(exc))
        return EXIT_CONFIG
    except (MatrixMarketError, InputFormatError) as exc:
        _diagnose("format", str(exc))
        return EXIT_FORMAT
    except PartitionError as exc:
        _diagnose("partition", str(exc))
        return EXIT_PARTITION
    except SingularDiagonalBlock as exc:
        _diagnose("singular", str(exc))
        return EXIT_SINGULAR
    except FbarConstructionFailure as exc:
        _diagnose("fbar", str(exc))
        return EXIT_FBAR
    except SolverError as exc:
        _diagnose("solver", str(exc))
        return EXIT_SOLVER
    except DimensionMismatch as exc:
        _diagnose("dimension", str(exc))
        return EXIT_DIMENSION
    except OSError as exc:
        _diagnose("io", str(exc))
        return EXIT_IO
    except BlockFilterError as exc:
        _diagnose("internal", str(exc))
        return EXIT_INTERNAL
    except Exception as exc:  # noqa: BLE001 - last resort, still a documented code
        _diagnose("internal", f"{type(exc).__name__}: {exc}")
        return EXIT_INTERNAL


def run(config: RunConfig) -> int:
    return execute(config)


def _int_list(text: str) -> list[int]:
    try:
        return [int(x) for x in text.replace(",", " ").split()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from exc


def _add_common(p: argparse.ArgumentParser, with_build: bool, with_solver: bool) -> None:
    # every default is None so that only explicit flags override a config file
    p.add_argument("--config", help="JSON file with RunConfig fields")
    src = p.add_argument_group("matrix source")
    src.add_argument("--matrix", help="Matrix Market file")
    src.add_argument("--problem", choices=problems.KINDS)
    src.add_argument("--dims", type=_int_list, help="grid dimensions, e.g. 16,16")
    src.add_argument("--n", type=int, help="size of random problems")
    src.add_argument("--epsilon", type=float, help="anisotropy ratio")
    src.add_argument("--convection", type=float)
    src.add_argument("--nnz-per-row", type=int)
    src.add_argument("--seed", type=int)
    par = p.add_argument_group("partition source")
    par.add_argument("--levels", type=int, help=f"nested dissection levels (default {DEFAULT_LEVELS})")
    par.add_argument("--sizes", type=_int_list, help="explicit block sizes, identity ordering")
    par.add_argument("--blocks", type=int, help="number of equal contiguous blocks")
    par.add_argument("--scalar-blocks", action="store_const", const=True, help="one unknown per block")
    par.add_argument("--partition-file")
    p.add_argument("--output", help=f"output file (default directory from ${OUTPUT_DIR_ENV})")
    if with_build:
        b = p.add_argument_group("factorization")
        b.add_argument("--filter", help="ones, random_nonzero, random_with_zeros, or a vector file")
        b.add_argument("--filter-seed", type=int)
        b.add_argument("--zero-fraction", type=float)
        b.add_argument("--variant", choices=ff.VARIANTS)
        b.add_argument("--strategy", choices=fb.STRATEGIES)
        b.add_argument("--dump-dir", help="write factor blocks as Matrix Market files")
        b.add_argument("--corrupt-fbar", metavar="K,J", help="test hook: perturb F-bar of block pair (K, J)")
    if with_solver:
        s = p.add_argument_group("solver")
        s.add_argument("--solver", choices=SOLVERS)
        s.add_argument("--tol", type=float)
        s.add_argument("--max-iters", type=int)
        s.add_argument("--restart", type=int)
        s.add_argument("--rhs", choices=RHS_KINDS)
        s.add_argument("--rhs-seed", type=int)
        s.add_argument("--solution-output", help="write the solution vector (original ordering)")
        s.add_argument("--per-block", action="store_const", const=True, help="per-block filtering table in the report")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="blockfilter", description="Block filtering preconditioner harness")
    sub = parser.add_subparsers(dest="command", required=True)
    _add_common(sub.add_parser("run", help="build, verify and solve; write a JSON report"), True, True)
    _add_common(sub.add_parser("verify", help="per-block filtering check"), True, False)
    _add_common(sub.add_parser("partition", help="write the partition only"), False, False)
    _add_common(sub.add_parser("generate", help="write the matrix only"), False, False)
    return parser


def config_from_args(args: argparse.Namespace) -> RunConfig:
    values: dict = {}
    if args.config is not None:
        values.update(load_config_file(args.config))
    for f in dataclasses.fields(RunConfig):
        v = getattr(args, f.name, None)
        if v is not None:
            values[f.name] = v
    values["command"] = args.command
    return RunConfig(**values)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = config_from_args(args)
    except ConfigError as exc:
        _diagnose("config", str(exc))
        return EXIT_CONFIG
    except OSError as exc:
        _diagnose("io", str(exc))
        return EXIT_IO
    except TypeError as exc:
        _diagnose("config", str(exc))
        return EXIT_CONFIG
    return execute(cfg)


if __name__ == "__main__":
    sys.exit(main())
