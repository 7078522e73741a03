"""Command-line driver: split, apply, bench, rank-profile, solve.

Every command writes CSV (to ``--out`` or stdout) preceded by a ``#`` comment
line recording the full configuration. Random vectors are drawn uniformly
from [-1, 1] with numpy's PCG64 generator seeded by ``--seed``.

Exit status: 0 success, 1 usage error, 2 conformance or convergence failure.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import io
import sys
import time
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .compress import profile_csv, rank_profile
from .geometry import Grid
from .kernel import (Family, HorizonField, HorizonKind, KernelSpec, RadialProfile,
                     parse_key_values, polynomial_truncated, split)
from .operator import (Rule, TruncatedOperator, apply_truncated_dense,
                       assemble_truncated_dense)
from .solve import SolverError, negated, select_method, solve_dirichlet
from .tree import ConfigurationError

CONFORMANCE_TOL = 1e-10

EXIT_OK, EXIT_USAGE, EXIT_FAIL = 0, 1, 2


class UsageError(Exception):
    pass


@dataclass
class RunConfig:
    command: str = "apply"
    dimension: int = 1
    n: int = 256
    delta0: str = "0.25"
    horizon_kind: str = "constant"
    profile: str = "inverse_s"
    regularity_k: int = 3
    split_K: int = 0
    epsilon: float = 1e-8
    tol: float = 1e-10
    seed: int = 0
    output_path: str | None = None
    sweep: str | None = None
    regularities: str = "-1,0,1,2,3"
    leaf_size: int = 32
    coefficient: float = 1.0
    rhs: str = "manufactured"
    rhs_value: float = 1.0
    rhs_file: str | None = None
    matvec: str = "fast"
    max_iter: int | None = None
    timing: bool = True

    def validate(self):
        if self.dimension not in (1, 2, 3):
            raise UsageError(f"dimension must be 1, 2 or 3, got {self.dimension}")
        for n in [self.n] + self.sweep_sizes():
            if n < 2 or n & (n - 1):
                raise UsageError(f"n must be a power of 2, got {n}")
        if self.horizon_kind not in {k.value for k in HorizonKind}:
            raise UsageError(f"unknown horizon kind {self.horizon_kind!r}")
        self.delta_value(self.n)

    def sweep_sizes(self) -> list:
        if not self.sweep:
            return []
        try:
            return [int(v) for v in self.sweep.split(",") if v.strip()]
        except ValueError:
            raise UsageError(f"bad sweep {self.sweep!r}") from None

    def delta_value(self, n: int) -> float:
        if str(self.delta0).strip() == "h":
            return 1.0 / n
        try:
            v = float(self.delta0)
        except ValueError:
            raise UsageError(f"bad delta0 {self.delta0!r}") from None
        if not v > 0:
            raise UsageError(f"delta0 must be positive, got {v}")
        return v

    def horizon(self, n: int) -> HorizonField:
        return HorizonField(HorizonKind(self.horizon_kind), self.delta_value(n))

    def truncated_spec(self, n: int) -> KernelSpec:
        return KernelSpec(self.dimension, polynomial_truncated(self.split_K), self.horizon(n),
                          self.coefficient)

    def comment(self) -> str:
        items = dataclasses.asdict(self)
        items.pop("output_path")
        return "# config: " + "; ".join(f"{k}={v}" for k, v in items.items())


_FIELD_TYPES = {f.name: f.type for f in dataclasses.fields(RunConfig)}


def _coerce(key: str, value: str):
    typ = _FIELD_TYPES[key]
    if value in ("", "None") and "None" in typ:
        return None
    if typ.startswith("int"):
        return int(value)
    if typ.startswith("float"):
        return float(value)
    if typ == "bool":
        return value.strip().lower() in ("1", "true", "yes", "on")
    return value


def load_config_file(path: str) -> dict:
    with open(path) as fh:
        try:
            raw = parse_key_values(fh.read())
        except ValueError as exc:
            raise UsageError(f"{path}: {exc}") from None
    out = {}
    for key, value in raw.items():
        if key not in _FIELD_TYPES or key == "command":
            raise UsageError(f"unknown config key {key!r}")
        try:
            out[key] = _coerce(key, value)
        except ValueError:
            raise UsageError(f"bad value for {key}: {value!r}") from None
    return out


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False, argument_default=argparse.SUPPRESS)
    common.add_argument("--config", help="key=value file; flags override it")
    common.add_argument("--dim", dest="dimension", type=int)
    common.add_argument("--n", type=int, help="nodes per axis (power of 2)")
    common.add_argument("--delta0", help="horizon scale, or 'h' for the mesh width")
    common.add_argument("--horizon", dest="horizon_kind",
                        choices=[k.value for k in HorizonKind])
    common.add_argument("--profile", choices=["inverse_s", "conical_inverse_s"])
    common.add_argument("--k", dest="regularity_k", type=int)
    common.add_argument("--K", dest="split_K", type=int)
    common.add_argument("--epsilon", type=float)
    common.add_argument("--tol", type=float)
    common.add_argument("--seed", type=int)
    common.add_argument("--out", dest="output_path")
    common.add_argument("--sweep", help="comma-separated n values")
    common.add_argument("--coefficient", type=float)
    common.add_argument("--no-timing", dest="timing", action="store_false",
                        help="leave wall-time columns empty (byte-reproducible output)")

    p = _Parser(prog="fastnonlocal", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    sub.add_parser("split", parents=[common], help="matched polynomial and kappa table")
    sub.add_parser("apply", parents=[common], help="fast vs dense truncated operator")
    sub.add_parser("bench", parents=[common], help="operation-count scaling sweep")
    rp = sub.add_parser("rank-profile", parents=[common], help="HODLR storage vs regularity")
    rp.add_argument("--regularities")
    rp.add_argument("--leaf-size", dest="leaf_size", type=int)
    sv = sub.add_parser("solve", parents=[common], help="Dirichlet solve with CG/CGNR")
    sv.add_argument("--rhs", choices=["manufactured", "constant", "file"])
    sv.add_argument("--rhs-value", dest="rhs_value", type=float)
    sv.add_argument("--rhs-file", dest="rhs_file")
    sv.add_argument("--matvec", choices=["fast", "dense"])
    sv.add_argument("--max-iter", dest="max_iter", type=int)
    return p


def parse_config(argv=None) -> RunConfig:
    ns = {k: v for k, v in vars(build_parser().parse_args(argv)).items() if v is not None}
    values = {}
    if "config" in ns:
        values.update(load_config_file(ns.pop("config")))
    values.update(ns)
    return RunConfig(**values)


# ---------------------------------------------------------------------------
# output helpers


def _csv_text(cfg: RunConfig, header, rows, extra_comments=()) -> str:
    buf = io.StringIO()
    buf.write(cfg.comment() + "\n")
    for line in extra_comments:
        buf.write(f"# {line}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def _emit(cfg: RunConfig, text: str, out):
    if cfg.output_path:
        with open(cfg.output_path, "w") as fh:
            fh.write(text)
    else:
        out.write(text)


def _fmt(v) -> str:
    return repr(float(v))


# ---------------------------------------------------------------------------
# commands


def cmd_split(cfg: RunConfig, out=sys.stdout) -> int:
    profile = RadialProfile(Family(cfg.profile))
    try:
        sk = split(profile, cfg.split_K)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    poly = sk.polynomial
    coeffs = poly.exact if poly.exact is not None else [Fraction(c).limit_denominator(10 ** 12)
                                                         for c in poly.coeffs]
    lines = [f"p^{2 * cfg.split_K}(s) coefficients of s^(2j), j = 0..{cfg.split_K}"]
    lines += [f"c{j} = {c} = {float(c)!r}" for j, c in enumerate(coeffs)]
    s = np.arange(1, 102) / 100.0
    rows = [[_fmt(si), _fmt(g), _fmt(p), _fmt(k)]
            for si, g, p, k in zip(s, sk.gamma(s), sk.truncated(s), sk.kappa(s))]
    _emit(cfg, _csv_text(cfg, ["s", "gamma", "p", "kappa"], rows, lines), out)
    return EXIT_OK


BENCH_COLUMNS = ["N", "recur_calls", "step2_ops", "step3_ops", "panel_visits", "dense_ops",
                 "fast_wall_ns", "dense_wall_ns", "max_rel_err_vs_dense"]


def bench_record(cfg: RunConfig, n: int) -> dict:
    grid = Grid(cfg.dimension, n)
    spec = cfg.truncated_spec(n)
    op = TruncatedOperator(spec, grid)
    u = np.random.default_rng(cfg.seed).uniform(-1.0, 1.0, grid.N)
    t0 = time.perf_counter_ns()
    fast = op.apply(u)
    t1 = time.perf_counter_ns()
    dense = apply_truncated_dense(spec, grid, Rule.LEAF, u)
    t2 = time.perf_counter_ns()
    err = float(np.max(np.abs(fast - dense)) / max(np.max(np.abs(dense)), np.finfo(float).tiny))
    return {
        "N": grid.N,
        "recur_calls": op.recur_calls,
        "step2_ops": op.counts["step2_ops"],
        "step3_ops": op.counts["step3_ops"],
        "panel_visits": op.counts["panel_visits"],
        "dense_ops": grid.N ** 2,
        "fast_wall_ns": t1 - t0 if cfg.timing else "",
        "dense_wall_ns": t2 - t1 if cfg.timing else "",
        "max_rel_err_vs_dense": err,
    }


def _record_row(rec: dict) -> list:
    return [f"{rec[c]:.3e}" if c == "max_rel_err_vs_dense" else rec[c] for c in BENCH_COLUMNS]


def cmd_apply(cfg: RunConfig, out=sys.stdout) -> int:
    rec = bench_record(cfg, cfg.n)
    _emit(cfg, _csv_text(cfg, BENCH_COLUMNS, [_record_row(rec)]), out)
    return EXIT_OK if rec["max_rel_err_vs_dense"] <= CONFORMANCE_TOL else EXIT_FAIL


def loglog_slope(x, y) -> float:
    return float(np.polyfit(np.log(np.asarray(x, float)), np.log(np.asarray(y, float)), 1)[0])


def bench_rates(records) -> dict:
    N = [r["N"] for r in records]
    rates = {
        "recur_calls": loglog_slope(N, [r["recur_calls"] for r in records]),
        "step3_ops": loglog_slope(N, [r["step3_ops"] for r in records]),
        "step2+3_ops": loglog_slope(N, [r["step2_ops"] + r["step3_ops"] for r in records]),
        "dense_ops": loglog_slope(N, [r["dense_ops"] for r in records]),
    }
    if all(r["fast_wall_ns"] != "" for r in records):
        rates["fast_wall_ns"] = loglog_slope(N, [r["fast_wall_ns"] for r in records])
        rates["dense_wall_ns"] = loglog_slope(N, [r["dense_wall_ns"] for r in records])
    return rates


def cmd_bench(cfg: RunConfig, out=sys.stdout) -> int:
    sizes = cfg.sweep_sizes()
    if len(sizes) < 4:
        raise UsageError("bench needs --sweep with at least 4 sizes")
    records = [bench_record(cfg, n) for n in sizes]
    rates = bench_rates(records)
    text = _csv_text(cfg, BENCH_COLUMNS, [_record_row(r) for r in records])
    text += "".join(f"# rate {k} {v:.4f}\n" for k, v in rates.items())
    _emit(cfg, text, out)
    ok = all(r["max_rel_err_vs_dense"] <= CONFORMANCE_TOL for r in records)
    return EXIT_OK if ok else EXIT_FAIL


def cmd_rank_profile(cfg: RunConfig, out=sys.stdout) -> int:
    try:
        ks = [int(v) for v in cfg.regularities.split(",") if v.strip()]
    except ValueError:
        raise UsageError(f"bad regularities {cfg.regularities!r}") from None
    rows = rank_profile(ks, cfg.dimension, cfg.n, cfg.delta_value(cfg.n), cfg.epsilon,
                        cfg.leaf_size)
    _emit(cfg, cfg.comment() + "\n" + profile_csv(rows), out)
    return EXIT_OK


def manufactured_solution(grid: Grid) -> np.ndarray:
    x = grid.positions
    return np.prod(np.sin(2 * np.pi * x) * x * (1 - x), axis=1)


def cmd_solve(cfg: RunConfig, out=sys.stdout) -> int:
    grid = Grid(cfg.dimension, cfg.n)
    spec = cfg.truncated_spec(cfg.n)
    u_star = None
    if cfg.rhs == "manufactured":
        u_star = manufactured_solution(grid)
        f = -apply_truncated_dense(spec, grid, Rule.LEAF, u_star)
    elif cfg.rhs == "constant":
        f = np.full(grid.N, cfg.rhs_value)
    else:
        if not cfg.rhs_file:
            raise UsageError("--rhs file needs --rhs-file")
        f = np.loadtxt(cfg.rhs_file, delimiter=None, comments="#", ndmin=1).ravel()
        if f.shape != (grid.N,):
            raise UsageError(f"rhs file has {f.size} values, expected {grid.N}")

    method = select_method(spec)
    if cfg.matvec == "fast":
        op = TruncatedOperator(spec, grid)
        A, At = negated(op.apply), negated(op.apply_transpose)
    else:
        M = assemble_truncated_dense(spec, grid)
        A, At = negated(M.__matmul__), negated(M.T.__matmul__)
    report = solve_dirichlet(A, f, cfg.tol, cfg.max_iter, method, adjoint=At)

    info = [f"method {report.method.value}", f"iterations {report.iterations}",
            f"final_residual {report.final_residual:.3e}", f"converged {report.converged}"]
    header = ["node"] + [f"x{j}" for j in range(grid.dimension)] + ["u"]
    cols = [np.arange(grid.N)] + [grid.positions[:, j] for j in range(grid.dimension)]
    cols.append(report.solution)
    if u_star is not None:
        err = float(np.max(np.abs(report.solution - u_star)) / np.max(np.abs(u_star)))
        info.append(f"error_vs_exact {err:.3e}")
        header.append("u_exact")
        cols.append(u_star)
    rows = [[int(c[0])] + [_fmt(v) for v in c[1:]] for c in zip(*cols)]
    _emit(cfg, _csv_text(cfg, header, rows, info), out)
    return EXIT_OK if report.converged else EXIT_FAIL


COMMANDS = {
    "split": cmd_split,
    "apply": cmd_apply,
    "bench": cmd_bench,
    "rank-profile": cmd_rank_profile,
    "solve": cmd_solve,
}


def main(argv=None, out=None) -> int:
    out = out or sys.stdout
    try:
        cfg = parse_config(argv)
    except SystemExit as exc:  # argparse: usage error or --help
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    except (UsageError, OSError) as exc:
        print(f"fastnonlocal: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    try:
        cfg.validate()
        return COMMANDS[cfg.command](cfg, out)
    except (UsageError, ConfigurationError, OSError) as exc:
        print(f"fastnonlocal: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SolverError as exc:
        print(f"fastnonlocal: solver failed: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
