"""Batch command-line front end.

Subcommands ``limit``, ``game``, ``mc`` and ``profile`` each print one flat
table (CSV with ``#`` manifest lines, or JSON ``{manifest, rows}``).

Exit codes: 0 success, 2 usage, 3 numeric failure, 4 non-convergence,
5 unknown identifier.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import __version__
from .errors import DidNotConverge, NumericError, UnknownIdentifier
from .finite_sample import (
    BernoulliTrial,
    EstimatorSpec,
    GaussianLocation,
    OveridMean,
    efficiency_comparison,
    limit_value,
    worst_case_risk,
)
from .finite_sample.montecarlo import effect_grid
from .game_engine import solve_treatment_game, verify_saddle_point
from .limit_experiment import (
    LimitSpec,
    estimation_minimax_value,
    linex_optimal_shift,
    reference_value_profile,
    treatment_minimax_value,
)
from .stat_core import SpdMatrix
from .tilt import TiltedLossSpec

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC, EXIT_NONCONVERGENCE, EXIT_UNKNOWN = 0, 2, 3, 4, 5


class UsageError(Exception):
    pass


@dataclass
class RunManifest:
    command: str
    parameters: dict
    root_seed: int
    tool_version: str = __version__
    wall_time_ms: int = 0


@dataclass
class Table:
    columns: list
    rows: list = field(default_factory=list)

    def add(self, **kw):
        missing = set(self.columns) ^ set(kw)
        if missing:
            raise KeyError(f"row columns differ: {sorted(missing)}")
        self.rows.append([kw[c] for c in self.columns])


# ---------------------------------------------------------------------------
# Serialisation


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        v = float(v)
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return format(v, ".17g")
    return str(v)


def _json_value(v):
    if isinstance(v, (bool, np.bool_)):
        return bool(v)
    if isinstance(v, (int, np.integer)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        v = float(v)
        return float(format(v, ".17g")) if math.isfinite(v) else _fmt(v)
    return v


def render(manifest: RunManifest, table: Table, fmt: str) -> str:
    if fmt == "json":
        doc = {
            "manifest": asdict(manifest),
            "rows": [{c: _json_value(v) for c, v in zip(table.columns, row)} for row in table.rows],
        }
        return json.dumps(doc, indent=1, sort_keys=False) + "\n"
    lines = [
        f"# command: {manifest.command}",
        f"# parameters: {json.dumps(manifest.parameters, sort_keys=True)}",
        f"# root_seed: {manifest.root_seed}",
        f"# tool_version: {manifest.tool_version}",
        f"# wall_time_ms: {manifest.wall_time_ms}",
        ",".join(table.columns),
    ]
    lines += [",".join(_fmt(v) for v in row) for row in table.rows]
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# Flag parsing helpers


def _positive(text: str) -> float:
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None
    if not (v > 0 and math.isfinite(v)):
        raise argparse.ArgumentTypeError(f"must be positive and finite: {text!r}")
    return v


def _finite(text: str) -> float:
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None
    if not math.isfinite(v):
        raise argparse.ArgumentTypeError(f"must be finite: {text!r}")
    return v


def _count(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1: {text!r}")
    return v


def _seed(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def _range(text: str) -> tuple[float, float, int]:
    parts = text.split(":")
    if len(parts) != 3:
        raise argparse.ArgumentTypeError("expected LO:HI:STEPS")
    try:
        lo, hi, steps = float(parts[0]), float(parts[1]), int(parts[2])
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad range {text!r}") from None
    if steps < 1 or not (math.isfinite(lo) and math.isfinite(hi)) or hi < lo or (steps > 1 and hi == lo):
        raise argparse.ArgumentTypeError(f"bad range {text!r}")
    return lo, hi, steps


def _int_list(text: str) -> list[int]:
    try:
        out = [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad integer list {text!r}") from None
    if not out or min(out) < 1:
        raise argparse.ArgumentTypeError("sample sizes must be positive")
    return out


def _float_list(text: str) -> list[float]:
    try:
        return [float(t) for t in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad number list {text!r}") from None


def _linspace(r):
    lo, hi, steps = r
    return np.linspace(lo, hi, steps) if steps > 1 else np.array([lo])


def _params(args) -> dict:
    skip = {"func", "out", "format", "command"}
    out = {}
    for k, v in sorted(vars(args).items()):
        if k in skip:
            continue
        if isinstance(v, tuple):
            v = list(v)
        out[k] = v
    return out


# ---------------------------------------------------------------------------
# Commands


def _limit_loss(args, lam):
    if args.loss == "estimation":
        return TiltedLossSpec("estimation", lam, bound_c=args.bound_c)
    if args.loss == "treatment":
        return TiltedLossSpec("treatment", lam, trunc_K=args.trunc_k)
    if args.linex_m is None:
        raise UsageError("--linex-m is required for linex loss")
    return TiltedLossSpec("linex", lam, linex_M=args.linex_m)


def cmd_limit(args) -> tuple[Table, int]:
    if args.sweep_lambda is not None:
        lams = _linspace(args.sweep_lambda)
        if lams[0] <= 0:
            raise UsageError("lambda sweep must be positive")
    elif args.lam is not None:
        lams = [args.lam]
    else:
        raise UsageError("--lambda or --sweep-lambda is required")
    cols = {
        "treatment": ["lambda", "sigma", "delta_star", "v_star"],
        "estimation": ["lambda", "sigma", "v_star"],
        "linex": ["lambda", "sigma", "linex_m", "linex_shift"],
    }[args.loss]
    t = Table(cols)
    for lam in lams:
        lam = float(lam)
        loss = _limit_loss(args, lam)
        if args.loss == "treatment":
            v = treatment_minimax_value(lam, args.sigma)
            t.add(**{"lambda": lam, "sigma": args.sigma, "delta_star": v.delta_star, "v_star": v.value})
        elif args.loss == "estimation":
            v = estimation_minimax_value(args.sigma, loss)
            t.add(**{"lambda": lam, "sigma": args.sigma, "v_star": v.value})
        else:
            s = linex_optimal_shift(lam, args.linex_m, args.sigma**2)
            t.add(**{"lambda": lam, "sigma": args.sigma, "linex_m": args.linex_m, "linex_shift": s})
    return t, EXIT_OK


_GAME_COLUMNS = [
    "atom",
    "weight",
    "threshold",
    "upper_value",
    "lower_value",
    "gap",
    "iterations",
    "converged",
    "bayes_ok",
    "bayes_violation",
    "equalizer_ok",
    "equalizer_violation",
]


def cmd_game(args) -> tuple[Table, int]:
    spec = LimitSpec.scalar(args.sigma)
    budget = args.budget if args.budget is not None else 10.0 * max(args.lam, 1.0) * args.sigma
    code = EXIT_OK
    try:
        sol = solve_treatment_game(spec, args.lam, budget, max_iters=args.max_iters, tol=args.tol)
    except DidNotConverge as exc:
        sol = exc.solution
        code = EXIT_NONCONVERGENCE
        print(f"error: {exc}", file=sys.stderr)
        if sol is None:
            return Table(_GAME_COLUMNS), code
    rep = verify_saddle_point(sol.rule, sol.prior, spec, args.lam, tol=1e-6, h_budget=budget)
    t = Table(_GAME_COLUMNS)
    atoms = sol.prior.effects(spec.mu_dot)
    for a, w in zip(atoms, sol.prior.weights):
        t.add(
            atom=float(a),
            weight=float(w),
            threshold=float(sol.rule.threshold) * sol.rule.direction,
            upper_value=sol.upper_value,
            lower_value=sol.lower_value,
            gap=sol.gap,
            iterations=sol.iterations,
            converged=code == EXIT_OK,
            bayes_ok=rep.bayes_ok,
            bayes_violation=rep.bayes_violation,
            equalizer_ok=rep.equalizer_ok,
            equalizer_violation=rep.equalizer_violation,
        )
    return t, code


_MC_COLUMNS = ["rule", "n", "worst_risk", "stderr", "argmax_h", "v_star", "ratio", "diff_vs_first", "diff_stderr"]


def _mc_model(args, n):
    if args.model == "bernoulli":
        if args.theta0 is None:
            raise UsageError("--theta0 is required for the bernoulli model")
        return BernoulliTrial(args.theta0, n)
    theta0 = 0.0 if args.theta0 is None else args.theta0
    if args.model == "gaussian":
        return GaussianLocation(theta0, n, args.noise_sd)
    om = args.omega if args.omega is not None else [1.0, 0.0, 0.0, 1.0]
    if len(om) != 4:
        raise UsageError("--omega needs four comma-separated numbers (row-major 2x2)")
    try:
        omega = SpdMatrix(np.array(om).reshape(2, 2))
    except ValueError as exc:
        raise UsageError(f"--omega: {exc}") from None
    return OveridMean(theta0, n, omega)


def cmd_mc(args) -> tuple[Table, int]:
    n_list = args.n_list
    if any(b <= a for a, b in zip(n_list, n_list[1:])):
        raise UsageError("--n-list must be increasing")
    rules = [EstimatorSpec(r.strip()) for r in args.rules.split(",")] if args.rules else None
    if args.loss == "estimation":
        loss = TiltedLossSpec("estimation", args.lam, bound_c=args.bound_c, trunc_K=args.trunc_k)
    else:
        loss = TiltedLossSpec("treatment", args.lam, trunc_K=args.trunc_k)
    base = _mc_model(args, n_list[0])
    if rules is None:
        rules = [EstimatorSpec(base.efficient_rule)]
    for r in rules:
        if r.name not in base.rules:
            raise UsageError(f"rule {r.name!r} does not apply to the {args.model} model")
    if args.model == "gmm" and n_list[0] <= 2:
        raise UsageError("the gmm model needs n > 2")
    v_star = limit_value(base, loss)
    grid = effect_grid(base.sigma, args.budget_m, args.grid)
    t = Table(_MC_COLUMNS)
    for n in n_list:
        model = _mc_model(args, n)
        if len(rules) == 1:
            reports = [worst_case_risk(model, rules[0], loss, grid, args.reps, args.seed, threads=args.threads)]
            labels, diffs = [rules[0].name], [(0.0, 0.0)]
        else:
            cmp_ = efficiency_comparison(model, rules, loss, grid, None, args.reps, args.seed, threads=args.threads)
            reports, labels = list(cmp_.reports), list(cmp_.labels)
            diffs = [(0.0, 0.0)] + [
                (d.diff, d.stderr) for d in (cmp_.difference(lab, labels[0]) for lab in labels[1:])
            ]
        for lab, rep, (d, se) in zip(labels, reports, diffs):
            t.add(
                rule=lab,
                n=n,
                worst_risk=rep.value,
                stderr=rep.stderr,
                argmax_h=rep.worst_h,
                v_star=v_star,
                ratio=rep.value / v_star,
                diff_vs_first=d,
                diff_stderr=se,
            )
    return t, EXIT_OK


def cmd_profile(args) -> tuple[Table, int]:
    if args.model != "bernoulli":
        raise UsageError("profile supports --model bernoulli")
    if args.loss == "estimation":
        loss = TiltedLossSpec("estimation", args.lam, bound_c=args.bound_c)
    else:
        loss = TiltedLossSpec("treatment", args.lam)
    theta = _linspace(args.theta_grid)
    if theta[0] <= 0 or theta[-1] >= 1:
        raise UsageError("theta grid must lie inside (0, 1)")
    shift = args.mu_shift
    prof = reference_value_profile(
        theta,
        lambda t: 1.0 / (t * (1.0 - t)),
        lambda t: t - shift,
        lambda t: 1.0,
        loss,
    )
    t = Table(["row", "theta", "sigma_theta", "v_star_theta", "admissible"])
    for th, s, v, a in zip(prof.theta, prof.sigma, prof.value, prof.admissible):
        t.add(row="point", theta=float(th), sigma_theta=float(s), v_star_theta=float(v), admissible=bool(a))
    j = int(np.flatnonzero(prof.theta == prof.arg_sup)[0])
    t.add(row="sup", theta=prof.arg_sup, sigma_theta=float(prof.sigma[j]), v_star_theta=prof.sup, admissible=True)
    return t, EXIT_OK


# ---------------------------------------------------------------------------
# Parser


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="tiltminimax", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(q):
        q.add_argument("--out", default=None, help="output path (default: standard output)")
        q.add_argument("--format", choices=("csv", "json"), default="csv")

    q = sub.add_parser("limit", help="limit-experiment values and lambda sweeps")
    q.add_argument("--loss", choices=("estimation", "treatment", "linex"), required=True)
    q.add_argument("--lambda", dest="lam", type=_positive)
    q.add_argument("--sigma", type=_positive, required=True)
    q.add_argument("--bound-c", type=_positive, default=25.0)
    q.add_argument("--trunc-k", type=_positive, default=None)
    q.add_argument("--linex-m", type=_positive, default=None)
    q.add_argument("--sweep-lambda", type=_range, default=None, metavar="LO:HI:STEPS")
    common(q)
    q.set_defaults(func=cmd_limit)

    q = sub.add_parser("game", help="least-favourable prior by double oracle")
    q.add_argument("--lambda", dest="lam", type=_positive, required=True)
    q.add_argument("--sigma", type=_positive, required=True)
    q.add_argument("--budget", type=_positive, default=None)
    q.add_argument("--tol", type=_positive, default=1e-4)
    q.add_argument("--max-iters", type=_count, default=50)
    common(q)
    q.set_defaults(func=cmd_game)

    q = sub.add_parser("mc", help="Monte Carlo worst-case risk of plug-in rules")
    q.add_argument("--model", choices=("bernoulli", "gaussian", "gmm"), required=True)
    q.add_argument("--theta0", type=_finite, default=None)
    q.add_argument("--omega", type=_float_list, default=None, metavar="A,B,C,D")
    q.add_argument("--noise-sd", type=_positive, default=1.0)
    q.add_argument("--loss", choices=("estimation", "treatment"), required=True)
    q.add_argument("--lambda", dest="lam", type=_positive, required=True)
    q.add_argument("--bound-c", type=_positive, default=25.0)
    q.add_argument("--trunc-k", type=_positive, default=None)
    q.add_argument("--n-list", type=_int_list, required=True)
    q.add_argument("--reps", type=_count, default=10_000)
    q.add_argument("--budget-m", type=_positive, default=3.0)
    q.add_argument("--grid", type=_count, default=25)
    q.add_argument("--rules", default=None)
    q.add_argument("--seed", type=_seed, default=0)
    q.add_argument("--threads", type=_count, default=None)
    common(q)
    q.set_defaults(func=cmd_mc)

    q = sub.add_parser("profile", help="local minimax value across reference parameters")
    q.add_argument("--model", choices=("bernoulli",), required=True)
    q.add_argument("--loss", choices=("estimation", "treatment"), required=True)
    q.add_argument("--lambda", dest="lam", type=_positive, required=True)
    q.add_argument("--theta-grid", type=_range, required=True, metavar="LO:HI:STEPS")
    q.add_argument("--mu-shift", type=_finite, default=0.5)
    q.add_argument("--bound-c", type=_positive, default=25.0)
    common(q)
    q.set_defaults(func=cmd_profile)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)

    start = time.perf_counter()
    try:
        table, code = args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except UnknownIdentifier as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_UNKNOWN
    except DidNotConverge as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NONCONVERGENCE
    except NumericError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE

    manifest = RunManifest(
        command=args.command,
        parameters=_params(args),
        root_seed=getattr(args, "seed", 0),
        wall_time_ms=int(round(1000 * (time.perf_counter() - start))),
    )
    text = render(manifest, table, args.format)
    if args.out:
        with open(args.out, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return code


if __name__ == "__main__":
    sys.exit(main())
