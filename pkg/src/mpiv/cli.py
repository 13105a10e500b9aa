"""Command-line interface: ``mpiv {match,analyze,simulate,power-curve,delta0}``."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import secrets
import sys
from typing import Sequence

import numpy as np

from .analysis import SE_CHOICES, analyze, format_table, report_to_json
from .data import PairStructure, SampleValidationError, read_csv_rows, validate_sample
from .estimators import WeakFirstStageError
from .pairing import assign_treatment, match_pairs_greedy, match_pairs_scalar, match_report
from .regression import RankDeficientError, SingularInstrumentError
from .simulation import TESTS, DgpSpec, delta0_oracle, power_curve, run_mc
from .variance import UnbalancedPairError

SIM_COLUMNS = ("model", "n", "test", "metric", "value", "mc_se")
POWER_COLUMNS = ("model", "n", "mu1", "test", "rejection_rate", "mc_se")


class CliError(Exception):
    """User-facing failure; printed without a traceback."""


def _positive_int(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if value < 1:
        raise argparse.ArgumentTypeError(f"must be at least 1, got {value}")
    return value


def _even_units(text: str) -> int:
    value = _positive_int(text)
    if value < 4 or value % 2:
        raise argparse.ArgumentTypeError(f"sample size must be even and >= 4, got {value}")
    return value


def _alpha(text: str) -> float:
    value = float(text)
    if not 0.0 < value < 1.0:
        raise argparse.ArgumentTypeError(f"alpha must lie in (0, 1), got {value}")
    return value


def _csv_list(text: str) -> list[str]:
    return [t.strip() for t in text.split(",") if t.strip()]


def _grid(text: str) -> list[float]:
    parts = text.split(":")
    if len(parts) != 3:
        raise argparse.ArgumentTypeError("grid must look like lo:hi:steps")
    try:
        lo, hi, steps = float(parts[0]), float(parts[1]), int(parts[2])
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad grid {text!r}") from None
    if steps < 1:
        raise argparse.ArgumentTypeError("grid needs at least one step")
    return [float(v) for v in np.linspace(lo, hi, steps)]


def _resolve_seed(seed: int | None) -> int:
    if seed is None:
        env = os.environ.get("MPIV_SEED")
        seed = int(env) if env else secrets.randbits(32)
    print(f"seed: {seed}", file=sys.stderr)
    return seed


def _resolve_jobs(jobs: int | None) -> int:
    if jobs is None:
        env = os.environ.get("MPIV_JOBS")
        jobs = int(env) if env else 1
    return max(1, jobs)


def _read(path: str) -> list[dict[str, str]]:
    try:
        return read_csv_rows(path)
    except OSError as exc:
        raise CliError(f"cannot read {path}: {exc.strerror or exc}") from None
    except (csv.Error, UnicodeDecodeError) as exc:
        raise CliError(f"cannot parse {path}: {exc}") from None


def _write_rows(rows: list[dict], columns: Sequence[str], path: str | None) -> None:
    fh = open(path, "w", newline="", encoding="utf-8") if path else sys.stdout
    try:
        writer = csv.DictWriter(fh, fieldnames=list(columns), extrasaction="ignore",
                                lineterminator="\n")
        writer.writeheader()
        writer.writerows(rows)
    finally:
        if path:
            fh.close()


def _numeric_matrix(rows: list[dict[str, str]], columns: Sequence[str]) -> np.ndarray:
    problems = []
    out = np.full((len(rows), len(columns)), np.nan)
    for r, row in enumerate(rows, start=1):
        for c, name in enumerate(columns):
            raw = row.get(name)
            try:
                out[r - 1, c] = float(raw)
            except (TypeError, ValueError):
                problems.append(f"{name} not numeric at row {r}")
            else:
                if not np.isfinite(out[r - 1, c]):
                    problems.append(f"{name} not finite at row {r}")
    if problems:
        raise SampleValidationError(problems)
    return out


def _x_columns(header: Sequence[str], requested: Sequence[str] | None) -> list[str]:
    if requested:
        missing = [c for c in requested if c not in header]
        if missing:
            raise CliError(f"columns not found: {', '.join(missing)}")
        return list(requested)
    cols = [c for c in header if c.startswith("x") and c[1:].isdigit()]
    if not cols:
        raise CliError("no covariate columns x1, x2, ... found")
    return sorted(cols, key=lambda c: int(c[1:]))


def _match(x: np.ndarray, method: str) -> PairStructure:
    if method == "scalar":
        if x.shape[1] != 1:
            raise CliError(f"--method scalar needs one matching column, got {x.shape[1]}")
        return match_pairs_scalar(x[:, 0])
    return match_pairs_greedy(x)


def cmd_match(args: argparse.Namespace) -> int:
    rows = _read(args.input)
    if not rows:
        raise CliError("no data rows")
    header = list(rows[0].keys())
    cols = _x_columns(header, args.on)
    x = _numeric_matrix(rows, cols)
    if len(rows) % 2:
        raise CliError(f"row count must be even, got {len(rows)}")
    structure = _match(x, args.method)
    seed = _resolve_seed(args.seed)
    a = assign_treatment(structure, seed)
    # pair ids follow the pair-of-pairs order so the ordering survives the file
    rank = np.empty(structure.n_pairs, dtype=int)
    rank[structure.pair_order] = np.arange(1, structure.n_pairs + 1)
    pid = rank[structure.pair_ids()]
    out_rows = []
    for i, row in enumerate(rows):
        new = {k: v for k, v in row.items() if k not in ("pair_id", "a", "pair_rank")}
        new["pair_id"] = str(pid[i])
        new["pair_rank"] = str(pid[i])
        new["a"] = str(int(a[i]))
        out_rows.append(new)
    _write_rows(out_rows, list(out_rows[0].keys()), args.output)
    diag = match_report(x, structure).as_dict()
    diag["method"] = args.method
    diag["seed"] = seed
    print(json.dumps(diag, indent=2), file=sys.stderr if args.output is None else sys.stdout)
    return 0


def _drop_incomplete(rows: list[dict[str, str]], needed: Sequence[str]) -> tuple[list, list[str]]:
    bad_ids = set()
    counts: dict[str, int] = {}
    for row in rows:
        pid = row.get("pair_id")
        counts[pid] = counts.get(pid, 0) + 1
        if any(row.get(c) in (None, "") or str(row.get(c)).strip() == "" for c in needed):
            bad_ids.add(pid)
    bad_ids |= {p for p, k in counts.items() if k != 2}
    kept = [r for r in rows if r.get("pair_id") not in bad_ids]
    return kept, sorted(str(b) for b in bad_ids)


def _structure_from_rows(rows: list[dict[str, str]], sample) -> PairStructure:
    ids = [r["pair_id"] for r in rows]
    if "pair_rank" in rows[0]:
        structure = PairStructure.from_pair_ids(ids)
        ranks = _numeric_matrix(rows, ["pair_rank"])[:, 0]
        key = ranks[structure.pairs]
        if np.any(key[:, 0] != key[:, 1]):
            raise CliError("pair_rank differs within a pair")
        order = np.argsort(key[:, 0], kind="stable")
        return PairStructure(structure.pairs, order, order_source="pair_rank")
    return PairStructure.from_pair_ids(ids, sample.x if sample.x.shape[1] else None)


def _pair_labels(rows: list[dict[str, str]], structure: PairStructure) -> list[str]:
    return [rows[int(i)]["pair_id"] for i in structure.pairs[:, 0]]


def cmd_analyze(args: argparse.Namespace) -> int:
    rows = _read(args.input)
    if not rows:
        raise CliError("no data rows")
    header = list(rows[0].keys())
    if "pair_id" not in header and not args.match_on:
        raise CliError("input has no pair_id column; pass --match-on to pair in-flight")
    notes = []
    if args.drop_incomplete_pairs:
        if "pair_id" not in header:
            raise CliError("--drop-incomplete-pairs needs a pair_id column")
        needed = [c for c in header if c in ("y", "d", "a")
                  or (c[:1] in "xw" and c[1:].isdigit())]
        rows, dropped = _drop_incomplete(rows, needed)
        if dropped:
            notes.append(f"dropped {len(dropped)} incomplete pairs: {', '.join(dropped)}")
            print(notes[-1], file=sys.stderr)
        if not rows:
            raise CliError("no complete pairs left")
    sample = validate_sample(rows)
    if args.match_on:
        cols = _x_columns(header, args.match_on)
        x = _numeric_matrix(rows, cols)
        structure = _match(x, "scalar" if x.shape[1] == 1 else "greedy")
    else:
        structure = _structure_from_rows(rows, sample)
    zeta: str | list[str] = "w"
    if args.zeta:
        zeta = args.zeta
        missing = [c for c in zeta if c not in header]
        if missing:
            raise CliError(f"zeta columns not found: {', '.join(missing)}")
    try:
        report = analyze(sample, structure, se=args.se, adjust=args.adjust, zeta=zeta,
                         delta_nulls=args.delta0 or [0.0], alpha=args.alpha)
    except UnbalancedPairError as exc:
        labels = _pair_labels(rows, structure) if "pair_id" in header else None
        shown = [labels[j] if labels else str(j) for j in exc.bad_pairs]
        raise CliError("pairs without exactly one treated unit: " + ", ".join(shown)) from None
    report.notes.extend(notes)
    text = report_to_json(report)
    if args.json:
        with open(args.json, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")
        print(format_table(report))
    elif args.format == "json":
        print(text)
    else:
        print(format_table(report))
    return 0


def _spec(args: argparse.Namespace, mu1: float = 0.0) -> DgpSpec:
    try:
        return DgpSpec(args.family, args.model, mu1)
    except ValueError as exc:
        raise CliError(str(exc)) from None


def cmd_simulate(args: argparse.Namespace) -> int:
    spec = _spec(args, args.mu1)
    seed = _resolve_seed(args.seed)
    res = run_mc(spec, args.n, args.reps, args.tests, delta_null=args.delta0, alpha=args.alpha,
                 seed=seed, jobs=_resolve_jobs(args.jobs), oracle_draws=args.oracle_draws)
    _write_rows(res.rows(), SIM_COLUMNS, args.out)
    return 0


def cmd_power(args: argparse.Namespace) -> int:
    spec = _spec(args)
    seed = _resolve_seed(args.seed)
    rows = power_curve(spec, args.n, args.reps, args.grid, args.tests, seed=seed,
                       alpha=args.alpha, delta_null=args.delta0, jobs=_resolve_jobs(args.jobs),
                       oracle_draws=args.oracle_draws)
    _write_rows(rows, POWER_COLUMNS, args.out)
    return 0


def cmd_delta0(args: argparse.Namespace) -> int:
    spec = _spec(args, args.mu1)
    seed = _resolve_seed(args.seed)
    res = delta0_oracle(spec, args.draws, seed)
    print(json.dumps({"model": spec.label, "mu1": spec.mu1, "delta0": res.value,
                      "mc_se": res.mc_se, "n_draws": res.n_draws,
                      "n_compliers": res.n_compliers, "seed": seed}, indent=2))
    return 0


def _add_sim_flags(p: argparse.ArgumentParser, power: bool = False) -> None:
    p.add_argument("--family", choices=("s51", "s52"), default="s51")
    p.add_argument("--model", type=int, default=1)
    p.add_argument("--n", type=_even_units, default=200, help="total units 2n (default 200)")
    p.add_argument("--reps", type=_positive_int, default=1000)
    p.add_argument("--tests", type=_csv_list, default=["nu"],
                   help=f"comma-separated, from {','.join(TESTS)}")
    p.add_argument("--alpha", type=_alpha, default=0.05)
    p.add_argument("--delta0", type=float, default=None,
                   help="null value (default: oracle LATE at mu1=0)")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--jobs", type=_positive_int, default=None)
    p.add_argument("--oracle-draws", type=_positive_int, default=10**7)
    p.add_argument("--out", default=None, help="output CSV (default stdout)")
    if power:
        p.add_argument("--grid", type=_grid, default=_grid("-1:1:21"), help="lo:hi:steps")
    else:
        p.add_argument("--mu1", type=float, default=0.0)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mpiv",
                                     description="LATE inference in matched pairs designs.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("match", help="pair units on covariates and randomize")
    p.add_argument("input")
    p.add_argument("-o", "--output", default=None, help="output CSV (default stdout)")
    p.add_argument("--method", choices=("scalar", "greedy"), default="scalar")
    p.add_argument("--on", type=_csv_list, default=None, help="matching columns (default x*)")
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_match)

    p = sub.add_parser("analyze", help="estimate the LATE with standard errors")
    p.add_argument("input")
    p.add_argument("--se", type=_csv_list, default=["nu"],
                   help=f"comma-separated from {','.join(SE_CHOICES)} or 'all'")
    p.add_argument("--adjust", choices=("none", "linear"), default="none")
    p.add_argument("--zeta", type=_csv_list, default=None,
                   help="adjustment columns (default all w*)")
    p.add_argument("--delta0", type=float, action="append", default=None,
                   help="null value; repeat for several")
    p.add_argument("--alpha", type=_alpha, default=0.05)
    p.add_argument("--match-on", type=_csv_list, default=None,
                   help="pair in-flight on these columns instead of pair_id")
    p.add_argument("--drop-incomplete-pairs", action="store_true")
    p.add_argument("--json", default=None, help="also write the JSON report here")
    p.add_argument("--format", choices=("text", "json"), default="text")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("simulate", help="Monte Carlo rejection rates, bias and RMSE")
    _add_sim_flags(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("power-curve", help="rejection rates along a grid of mu1")
    _add_sim_flags(p, power=True)
    p.set_defaults(func=cmd_power)

    p = sub.add_parser("delta0", help="large-draw LATE for a simulation model")
    p.add_argument("--family", choices=("s51", "s52"), default="s51")
    p.add_argument("--model", type=int, default=1)
    p.add_argument("--mu1", type=float, default=0.0)
    p.add_argument("--draws", type=_positive_int, default=10**7)
    p.add_argument("--seed", type=int, default=20240101)
    p.set_defaults(func=cmd_delta0)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s")
    if getattr(args, "tests", None) is not None:
        unknown = [t for t in args.tests if t not in TESTS]
        if unknown or not args.tests:
            parser.error(f"unknown tests {unknown}; choose from {', '.join(TESTS)}")
    if getattr(args, "se", None) is not None:
        unknown = [s for s in args.se if s not in SE_CHOICES and s != "all"]
        if unknown or not args.se:
            parser.error(f"unknown --se values {unknown}")
    try:
        return args.func(args)
    except SampleValidationError as exc:
        for problem in exc.problems:
            print(f"error: {problem}", file=sys.stderr)
        return 1
    except UnbalancedPairError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (CliError, WeakFirstStageError, RankDeficientError, SingularInstrumentError,
            ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
