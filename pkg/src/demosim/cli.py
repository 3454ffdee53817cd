"""``demosim`` command line: synth, simulate, align, report, validate."""

from __future__ import annotations

import argparse
import csv
import logging
import sys
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

from . import __version__
from .alignment import (
    AllocationLog,
    AlignmentProblem,
    Semantics,
    align_households,
    build_problem_population,
    load_problem,
    relative_differences,
)
from .errors import ConfigError, ConvergenceWarning, DemosimError
from .pipeline import CONFIG_KEYS, load_config, run_replicates
from .population import household_size_bins, validate_integrity
from .reporting import (
    DIMENSIONS,
    category_mismatch,
    classify_household_type,
    compare,
    emit_reports,
    fmt,
    marginal_shares,
    alignment_markdown,
    write_trace_csv,
)
from .snapshot import read_snapshot, write_snapshot
from .stochastic import RngStream
from .synthesis import (
    expand_population,
    ipu_fit,
    link_relationships,
    read_controls,
    read_sample,
    trs_integerise,
    write_fit_diagnostics,
)

EXIT_OK, EXIT_VALIDATION, EXIT_CONFIG, EXIT_CONVERGENCE, EXIT_RUNTIME = 0, 1, 2, 3, 4

FILE_FORMATS = """\
file formats:
  persons.csv          id,age,sex,marital_status,employment,education,student_status,
                       partner_id,mother_id,father_id,household_id,migrant_flag
  households.csv       id,member_count
  metrics.csv          metric,value
  occurrences.csv      year,event,count
  alignment_trace.csv  year,pass,iteration,bin,surplus,relative_difference
  replicates.csv       year,metric,n_runs,mean,sd
  sample.csv           household_id,person_id,relationship,age,sex,marital_status,
                       employment,education,student_status[,weight]
                       relationship: Reference|Spouse|Partner|Child|Parent|OtherRelated|Unrelated
  controls/person_*.csv, controls/household_*.csv
                       category columns then target; person columns from
                       age,age_band,sex,marital_status,employment,education,student_status;
                       household column household_size (labels 1..k-1 and k+)
  align problem        kind,bin,count with kind in unallocated|existing_bins|target,
                       bins 1-based, last bin open-ended; '#' lines are comments
  targets.csv          year,bin,count
  migration_schedule.csv  year,type,direction,persons,conv_rate
                       type: InterRegional|OverseasTemporary|OverseasPermanent; direction: in|out
  emigration_target.csv   year,age_band,sex,count
  migrant pool         persons.csv + households.csv + weights.csv (household_id,weight,migrant_type)
  models/<name>.csv    group,term,estimate; '# base: <Outcome>' marks a multinomial model
  rates/<name>.csv     key columns then probability

output tree:
  <out>/run_<seed>/year_<y>/{persons.csv,households.csv,metrics.csv}
  <out>/run_<seed>/{occurrences.csv,alignment_trace.csv}
  <out>/replicates.csv, <out>/reports/

exit codes: 0 ok, 1 validation failure, 2 configuration error,
            3 non-convergence with --strict, 4 runtime error
"""


def _epilog() -> str:
    width = max(len(k) for k in CONFIG_KEYS)
    keys = "\n".join(f"  {k.ljust(width)}  {v}" for k, v in CONFIG_KEYS.items())
    return f"config keys (YAML):\n{keys}\n\n{FILE_FORMATS}"


# ------------------------------------------------------------------- align


@dataclass
class AlignOutcome:
    seed: int
    before: list
    after: list
    final_bins: list
    log: AllocationLog


def solve_problem(problem: AlignmentProblem, seed: int, semantics=Semantics.PAPER) -> AlignOutcome:
    """Materialise a standalone problem and run one alignment pass."""
    pop, pending = build_problem_population(problem)
    n = problem.n_bins
    # "before" is the existing stock alone, ahead of placing anyone
    before = relative_differences(problem.existing, problem.target)
    log = align_households(pending, pop, problem.target, RngStream(seed, ("align",)), semantics)
    bins = household_size_bins(pop, n)
    return AlignOutcome(seed, before, relative_differences(bins, problem.target), bins, log)


def _write_align(outcome: AlignOutcome, problem: AlignmentProblem, d: Path) -> None:
    d.mkdir(parents=True, exist_ok=True)
    with open(d / "result.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["bin", "unallocated", "existing", "target", "final",
                    "relative_difference_before", "relative_difference_after"])
        for k in range(problem.n_bins):
            w.writerow([k + 1, problem.unallocated[k], problem.existing[k], fmt(float(problem.target[k])),
                        outcome.final_bins[k], fmt(outcome.before[k]), fmt(outcome.after[k])])
    write_trace_csv([("align", outcome.log)], d / "trace.csv")
    lines = alignment_markdown(problem.existing, problem.target, outcome.before, outcome.after)
    (d / "summary.md").write_text("\n".join(lines) + "\n", encoding="utf-8")


def cmd_align(args) -> int:
    problem = load_problem(args.problem)
    seeds = args.seed or [1]
    sem = Semantics(args.semantics or "paper")
    out = Path(args.out) if args.out else None
    for seed in seeds:
        outcome = solve_problem(problem, seed, sem)
        if out is not None:
            _write_align(outcome, problem, out / f"seed_{seed}" if len(seeds) > 1 else out)
        print(f"seed {seed}: before " + " ".join(f"{100 * x:+.2f}%" for x in outcome.before)
              + " | after " + " ".join(f"{100 * x:+.2f}%" for x in outcome.after))
    return EXIT_OK


# ------------------------------------------------------------------- synth


def cmd_synth(args) -> int:
    sample = read_sample(args.sample)
    controls = read_controls(args.controls)
    seed = (args.seed or [1])[0]
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", ConvergenceWarning)
        fit = ipu_fit(sample, controls, tol=args.tol, max_iter=args.max_iter)
    issues = [str(w.message) for w in caught if issubclass(w.category, ConvergenceWarning)]
    counts = trs_integerise(fit.weights, RngStream(seed, ("synth", "trs")))
    pop, codes = expand_population(sample, counts)
    link_relationships(pop, codes)
    out = Path(args.out)
    write_snapshot(pop, out)
    write_fit_diagnostics(fit, sample, counts, out / "diagnostics")
    print(f"{len(pop.persons)} persons in {len(pop.households)} households; "
          f"IPU {'converged' if fit.converged else 'did not converge'} after {fit.iterations} "
          f"iterations (max deviation {fit.max_deviation:.4g})")
    for msg in issues:
        print(f"warning: {msg}", file=sys.stderr)
    if issues and args.strict:
        return EXIT_CONVERGENCE
    return EXIT_OK


# ---------------------------------------------------------------- simulate


def cmd_simulate(args) -> int:
    cfg = load_config(args.config)
    if args.semantics:
        cfg.semantics = Semantics(args.semantics)
    seeds = args.seed or list(cfg.seeds)
    out = Path(args.out) if args.out else cfg.output
    if out is None:
        raise ConfigError("no output directory: pass --out or set 'output' in the config")
    rows = run_replicates(cfg, seeds, out, jobs=args.jobs)
    last = max((r[0] for r in rows), default=None)
    for year, metric, n, mean, sd in rows:
        if year == last and metric in ("persons", "households"):
            print(f"{year} {metric}: mean {fmt(mean)} sd {fmt(sd)} over {n} run(s)")
    return EXIT_OK


# ------------------------------------------------------------------ report


def _year_dirs(run_dir: Path) -> dict[int, Path]:
    return {int(p.name.split("_", 1)[1]): p for p in run_dir.glob("year_*") if p.is_dir()}


def cmd_report(args) -> int:
    observed, issues = read_snapshot(args.observed)
    if issues:
        raise ConfigError(f"observed snapshot inconsistent: {issues[0]}")
    runs = [Path(r) for r in args.runs]
    per_run_years = []
    for r in runs:
        years = _year_dirs(r)
        if not years:
            raise ConfigError(f"{r}: no year_<y> directories")
        per_run_years.append(years)
    year = args.year if args.year is not None else min(max(y) for y in per_run_years)
    finals = []
    for r, years in zip(runs, per_run_years):
        if year not in years:
            raise ConfigError(f"{r}: no snapshot for year {year}")
        finals.append(read_snapshot(years[year])[0])

    comparisons = {}
    mismatches = []
    for dim in DIMENSIONS:
        obs = marginal_shares(observed, dim)
        sims = [marginal_shares(p, dim) for p in finals]
        bad = category_mismatch(sims, obs)
        if bad:
            mismatches.append(f"{dim}: {', '.join(sorted(bad))}")
        comparisons[dim] = compare(sims, obs)
    if mismatches and not args.lenient:
        for m in mismatches:
            print(f"category mismatch in {m}", file=sys.stderr)
        return EXIT_CONFIG

    common = sorted(set.intersection(*(set(y) for y in per_run_years)))
    types = []
    for y in common:
        per_type: dict = {}
        for years in per_run_years:
            pop = read_snapshot(years[y])[0]
            counts = {t: 0 for t in ("LonePerson", "Family", "Group")}
            for hid in pop.households:
                counts[classify_household_type(hid, pop).value] += 1
            for t, c in counts.items():
                per_type.setdefault(t, []).append(c)
        for t, cs in per_type.items():
            types.append((y, t, sum(cs) / len(cs), min(cs), max(cs)))

    logs = []
    for r in runs:
        trace = r / "alignment_trace.csv"
        if trace.exists():
            logs.append(trace)
    written = emit_reports(comparisons, args.out, household_types=types)
    # the per-run traces are copied through verbatim
    merged = Path(args.out) / "reports" / "alignment_trace.csv"
    with open(merged, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["run", "year", "pass", "iteration", "bin", "surplus", "relative_difference"])
        for trace in logs:
            with open(trace, newline="", encoding="utf-8") as src:
                reader = csv.reader(src)
                next(reader, None)
                for row in reader:
                    w.writerow([trace.parent.name, *row])
    for p in written:
        print(p)
    return EXIT_OK


# ---------------------------------------------------------------- validate


def cmd_validate(args) -> int:
    d = Path(args.snapshot)
    if not (d / "persons.csv").exists():
        raise ConfigError(f"{d}: no persons.csv")
    pop, issues = read_snapshot(d)
    issues = issues + list(validate_integrity(pop))
    for msg in issues:
        print(msg)
    if issues:
        print(f"{len(issues)} violation(s)", file=sys.stderr)
        return EXIT_VALIDATION
    print(f"ok: {len(pop.persons)} persons, {len(pop.households)} households")
    return EXIT_OK


# -------------------------------------------------------------------- main


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="demosim",
        description="Seedable demographic microsimulation with household size alignment.",
        epilog=_epilog(),
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    parser.add_argument("--version", action="version", version=f"demosim {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, seeds=True):
        if seeds:
            p.add_argument("--seed", type=int, action="append", help="random seed (repeatable)")
        p.add_argument("--out", help="output directory")

    p = sub.add_parser("synth", help="build a baseline population from a sample and controls")
    p.add_argument("--sample", required=True, help="sample.csv")
    p.add_argument("--controls", required=True, help="directory of control CSVs")
    p.add_argument("--tol", type=float, default=0.01, help="IPU relative tolerance (default 0.01)")
    p.add_argument("--max-iter", type=int, default=500, help="IPU iteration cap (default 500)")
    p.add_argument("--strict", action="store_true", help="exit 3 if IPU does not converge")
    common(p)
    p.set_defaults(func=cmd_synth, out_required=True)

    p = sub.add_parser("simulate", help="run the simulation for one or more seeds")
    p.add_argument("--config", required=True, help="YAML run config")
    p.add_argument("--jobs", type=int, default=1, help="parallel replicate processes")
    p.add_argument("--semantics", choices=[s.value for s in Semantics], help="override the config")
    common(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("align", help="solve a standalone household size alignment problem")
    p.add_argument("problem", help="kind,bin,count CSV")
    p.add_argument("--semantics", choices=[s.value for s in Semantics], default="paper")
    common(p)
    p.set_defaults(func=cmd_align)

    p = sub.add_parser("report", help="compare run snapshots with an observed snapshot")
    p.add_argument("runs", nargs="+", help="run_<seed> directories")
    p.add_argument("--observed", required=True, help="observed snapshot directory")
    p.add_argument("--year", type=int, help="year to compare (default: last common year)")
    p.add_argument("--lenient", action="store_true", help="allow category sets to differ")
    common(p, seeds=False)
    p.set_defaults(func=cmd_report, out_required=True)

    p = sub.add_parser("validate", help="check a snapshot's integrity")
    p.add_argument("snapshot", help="directory with persons.csv and households.csv")
    p.set_defaults(func=cmd_validate)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "out_required", False) and not args.out:
        parser.error(f"{args.command} requires --out")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DemosimError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
