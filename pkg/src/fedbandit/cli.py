"""Command line entry point: ``run``, ``sweep`` and ``oracle-check``.

Exit codes: 0 success, 1 configuration error, 2 runtime error (partial
trace written), 3 invariant failure.
"""

from __future__ import annotations

import argparse
import csv
import itertools
import json
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import checks, config
from .errors import ConfigError
from .protocol import RegretTrace, RunFailed, run_experiment

CSV_SCHEMA_VERSION = 1
CSV_HEADER = ("t", "cumulative_regret", "episode", "lambda_k", "beta_k", "norm_E_k",
              "norm_e_k", "theta_error", "min_eig_Lambda", "dp_noise_norm")
SUMMARY_HEADER = ("config-id", "repetitions", "mean_final_regret", "std_final_regret",
                  "failures")

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME, EXIT_INVARIANT = 0, 1, 2, 3


def _fmt(x: float) -> str:
    return repr(float(x))


def write_trace(trace: RegretTrace, path: Path) -> None:
    """One row per simulated step; episode-level fields repeat within an episode."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\r\n")
        w.writerow(CSV_HEADER)
        for t in range(trace.steps_done):
            k = int(trace.episode[t])
            j = k - 1
            w.writerow((t + 1, _fmt(trace.cumulative[t]), k, _fmt(trace.lam[j]),
                        _fmt(trace.beta[j]), _fmt(trace.norm_E[j]), _fmt(trace.norm_e[j]),
                        _fmt(trace.theta_error[j]), _fmt(trace.min_eig[j]),
                        _fmt(trace.dp_noise[j])))


def _run_one(cfg: config.ExperimentConfig, rep: int, path: Path) -> tuple[float | None, str]:
    """Run and write one repetition; returns (final regret or None, error text)."""
    try:
        trace = run_experiment(cfg, rep)
    except RunFailed as exc:
        write_trace(exc.trace, path)
        return None, f"{type(exc.cause).__name__}: {exc.cause}"
    write_trace(trace, path)
    return trace.final_regret, ""


def _summary_stats(finals: list[float]) -> tuple[float, float]:
    if not finals:
        return float("nan"), float("nan")
    arr = np.asarray(finals)
    std = float(arr.std(ddof=1)) if arr.size > 1 else 0.0
    return float(arr.mean()), std


def _execute(jobs: list[tuple], n_jobs: int) -> list[tuple[float | None, str]]:
    if n_jobs <= 1 or len(jobs) <= 1:
        return [_run_one(*j) for j in jobs]
    with ProcessPoolExecutor(max_workers=n_jobs) as pool:
        return list(pool.map(_run_one, *zip(*jobs)))


def cmd_run(args) -> int:
    try:
        cfg = config.load(args.config, args.override)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out = Path(args.out or cfg.output.dir)
    out.mkdir(parents=True, exist_ok=True)
    jobs = [(cfg, r, out / f"{cfg.output.prefix}-rep{r:03d}.csv")
            for r in range(cfg.repetitions)]
    results = _execute(jobs, args.jobs)
    finals = [f for f, _ in results if f is not None]
    errors = [e for _, e in results if e]
    mean, std = _summary_stats(finals)
    with open(out / "summary.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\r\n")
        w.writerow(SUMMARY_HEADER)
        w.writerow((cfg.name, cfg.repetitions, _fmt(mean), _fmt(std), len(errors)))
    for e in errors:
        print(f"runtime error: {e}", file=sys.stderr)
    return EXIT_RUNTIME if errors else EXIT_OK


def _axis_text(v) -> str:
    return v if isinstance(v, str) else json.dumps(v)


def _cell_id(assign: dict) -> str:
    return ";".join(f"{k}={_axis_text(v)}" for k, v in assign.items())


def cmd_sweep(args) -> int:
    """Cross product over ``axes``; a failed cell is recorded and the sweep goes on."""
    try:
        doc = json.loads(Path(args.config).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        print(f"config error: cannot read sweep spec: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if not isinstance(doc, dict) or set(doc) - {"base", "axes"} or "base" not in doc:
        print("config error: a sweep spec has exactly the keys 'base' and 'axes'", file=sys.stderr)
        return EXIT_CONFIG
    axes = doc.get("axes") or {}
    if not axes or any(not isinstance(v, list) or not v for v in axes.values()):
        print("config error: the sweep needs at least one non-empty axis", file=sys.stderr)
        return EXIT_CONFIG
    names = list(axes)
    cells = []
    try:
        base = config.apply_overrides(config.resolve(doc["base"]), args.override)
        for combo in itertools.product(*(axes[n] for n in names)):
            assign = dict(zip(names, combo))
            sets = [f"{k}={json.dumps(v)}" for k, v in assign.items()]
            cells.append((assign, config.from_dict(config.apply_overrides(base, sets))))
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out = Path(args.out or cells[0][1].output.dir)
    out.mkdir(parents=True, exist_ok=True)
    jobs, owner = [], []
    for c, (assign, cfg) in enumerate(cells):
        cell_dir = out / f"cell{c:03d}"
        cell_dir.mkdir(exist_ok=True)
        for r in range(cfg.repetitions):
            jobs.append((cfg, r, cell_dir / f"{cfg.output.prefix}-rep{r:03d}.csv"))
            owner.append(c)
    results = _execute(jobs, args.jobs)
    failed_cells = 0
    with open(out / "summary.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\r\n")
        w.writerow((SUMMARY_HEADER[0], *names, *SUMMARY_HEADER[1:]))
        for c, (assign, cfg) in enumerate(cells):
            mine = [res for res, o in zip(results, owner) if o == c]
            finals = [f for f, _ in mine if f is not None]
            fails = sum(1 for f, _ in mine if f is None)
            failed_cells += fails > 0
            mean, std = _summary_stats(finals)
            w.writerow((_cell_id(assign), *(_axis_text(assign[n]) for n in names),
                        cfg.repetitions, _fmt(mean), _fmt(std), fails))
    if failed_cells:
        print(f"runtime error: {failed_cells} cell(s) had failing repetitions", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


def cmd_oracle_check(args) -> int:
    results = checks.run_battery(args.trials, inject_bug=args.inject_bug)
    for r in results:
        print(r.line())
    return EXIT_OK if all(r.passed for r in results) else EXIT_INVARIANT


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="fedbandit", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    for name, helptext in (("run", "run one configuration"),
                           ("sweep", "run the cross product of sweep axes")):
        s = sub.add_parser(name, help=helptext)
        s.add_argument("--config", required=True)
        s.add_argument("--override", action="append", default=[], metavar="KEY=VALUE")
        s.add_argument("--out")
        s.add_argument("--jobs", type=int, default=1)
    s = sub.add_parser("oracle-check", help="run the aggregation invariant battery")
    s.add_argument("--trials", type=int, default=200)
    s.add_argument("--inject-bug", action="store_true",
                   help="shift GM outputs by 0.1 to confirm the battery fails")
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    handler = {"run": cmd_run, "sweep": cmd_sweep, "oracle-check": cmd_oracle_check}
    return handler[args.command](args)


if __name__ == "__main__":
    sys.exit(main())
