"""Run configuration, the annual cycle, whole runs and replicate sets."""

from __future__ import annotations

import csv
import dataclasses
import logging
import statistics
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Optional

import yaml

from .alignment import Semantics, align_households, relative_differences
from .errors import ConfigError
from .events import EVENTS, EventContext, EventParams
from .migration import (
    MigrantPool,
    MigrationSchedule,
    emigrate,
    immigrate,
    load_emigration_targets,
)
from .population import Population, household_size_bins, validate_integrity
from .snapshot import read_snapshot, write_snapshot
from .stochastic import ModelRegistry, RngStream

logger = logging.getLogger(__name__)

DEFAULT_ORDER = (
    "ageing", "birth", "death", "marriage", "divorce", "cohabitation",
    "breakup", "leavehome", "emigration", "immigration",
)
APPSIM_ORDER = (
    "ageing", "birth", "death", "divorce", "breakup", "marriage",
    "cohabitation", "leavehome", "emigration", "immigration",
)
ALL_EVENTS = DEFAULT_ORDER + ("socioeconomic",)
# events that can push households onto the allocation queue
DISPLACING = frozenset({"divorce", "breakup", "leavehome", "immigration"})

# key -> description; rendered by ``demosim --help``
CONFIG_KEYS = {
    "baseline": "directory holding the base-year persons.csv and households.csv (required)",
    "start_year": "calendar year of the baseline snapshot (default 2016)",
    "n_cycles": "number of one-year cycles to run (default 10)",
    "seeds": "list of integer seeds used when none are given on the command line (default [1])",
    "n_bins": "household size bins; the last bin is open-ended (default 6)",
    "targets": "CSV year,bin,count of household size targets; a year without rows reuses the "
               "latest earlier year; if unset, each year targets the size distribution at the start of the cycle",
    "models_dir": "directory of coefficient CSVs (default: shipped placeholder set)",
    "rates_dir": "directory of rate CSVs (default: shipped placeholder set)",
    "preset": "'default' (formation before dissolution) or 'appsim' (dissolution first)",
    "enabled_events": "events that run; defaults to the ten demographic events "
                      "(add 'socioeconomic' for the education/employment update)",
    "event_order": "explicit order; must be a permutation of enabled_events",
    "semantics": "top-bin join semantics for alignment: 'paper' or 'consistent'",
    "drain": "'per_cycle' (one alignment pass after the last displacing event) or 'per_event'",
    "migration.schedule": "CSV year,type,direction,persons,conv_rate",
    "migration.pool": "directory with persons.csv, households.csv and weights.csv of template migrant households",
    "migration.emigration_targets": "CSV year,age_band,sex,count",
    "migration.emigration_weighting": "'size' (households drawn in proportion to size) or 'equal'",
    "params.<name>": "event parameters: " + ", ".join(f.name for f in dataclasses.fields(EventParams)),
    "check_integrity": "run the full integrity scan after every cycle (default true)",
    "output": "output directory (overridden by --out)",
}
_TOP_KEYS = {k.split(".")[0] for k in CONFIG_KEYS}
_MIGRATION_KEYS = {k.split(".")[1] for k in CONFIG_KEYS if k.startswith("migration.")}


def _data_dir(name: str) -> Path:
    return Path(str(resources.files("demosim") / "data" / name))


@dataclass
class RunConfig:
    baseline: Optional[Path] = None
    start_year: int = 2016
    n_cycles: int = 10
    seeds: tuple = (1,)
    n_bins: int = 6
    targets: dict = field(default_factory=dict)  # year -> list of counts
    models_dir: Path = field(default_factory=lambda: _data_dir("models"))
    rates_dir: Path = field(default_factory=lambda: _data_dir("rates"))
    preset: str = "default"
    enabled_events: tuple = DEFAULT_ORDER
    event_order: tuple = DEFAULT_ORDER
    semantics: Semantics = Semantics.PAPER
    drain: str = "per_cycle"
    migration_schedule: Optional[Path] = None
    migration_pool: Optional[Path] = None
    emigration_targets: Optional[Path] = None
    emigration_weighting: str = "size"
    params: EventParams = field(default_factory=EventParams)
    check_integrity: bool = True
    output: Optional[Path] = None

    def target_for(self, year: int) -> Optional[list]:
        years = [y for y in self.targets if y <= year]
        return list(self.targets[max(years)]) if years else None


def load_targets(path, n_bins: int) -> dict[int, list]:
    out: dict[int, list] = {}
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            for r in csv.DictReader(fh):
                b = int(r["bin"])
                if not 1 <= b <= n_bins:
                    raise ConfigError(f"{path}: bin {b} outside 1..{n_bins}")
                c = float(r["count"])
                if c < 0:
                    raise ConfigError(f"{path}: negative target")
                out.setdefault(int(r["year"]), [0.0] * n_bins)[b - 1] = c
    except (OSError, ValueError, KeyError) as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return out


def _path(base: Path, value, key: str, must_exist: bool = True) -> Path:
    p = Path(value)
    if not p.is_absolute():
        p = base / p
    if must_exist and not p.exists():
        raise ConfigError(f"{key}: {p} does not exist")
    return p


def config_from_dict(raw: dict, base_dir=".") -> RunConfig:
    """Validate a parsed config mapping; relative paths resolve against ``base_dir``."""
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError("config must be a mapping")
    base = Path(base_dir)
    unknown = sorted(set(raw) - _TOP_KEYS)
    if unknown:
        raise ConfigError(f"unknown config key(s): {', '.join(unknown)}")
    cfg = RunConfig()
    try:
        if "baseline" in raw:
            cfg.baseline = _path(base, raw["baseline"], "baseline")
        cfg.start_year = int(raw.get("start_year", cfg.start_year))
        cfg.n_cycles = int(raw.get("n_cycles", cfg.n_cycles))
        seeds = raw.get("seeds", list(cfg.seeds))
        cfg.seeds = tuple(int(s) for s in (seeds if isinstance(seeds, list) else [seeds]))
        cfg.n_bins = int(raw.get("n_bins", cfg.n_bins))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad scalar in config: {exc}") from exc
    if cfg.n_cycles < 0:
        raise ConfigError("n_cycles must be >= 0")
    if cfg.n_bins < 2:
        raise ConfigError("n_bins must be >= 2")
    if not cfg.seeds:
        raise ConfigError("at least one seed is required")
    if "targets" in raw:
        cfg.targets = load_targets(_path(base, raw["targets"], "targets"), cfg.n_bins)
    if "models_dir" in raw:
        cfg.models_dir = _path(base, raw["models_dir"], "models_dir")
    if "rates_dir" in raw:
        cfg.rates_dir = _path(base, raw["rates_dir"], "rates_dir")

    cfg.preset = str(raw.get("preset", "default"))
    if cfg.preset not in ("default", "appsim"):
        raise ConfigError(f"preset must be 'default' or 'appsim', got {cfg.preset!r}")
    preset_order = APPSIM_ORDER if cfg.preset == "appsim" else DEFAULT_ORDER
    enabled = tuple(raw.get("enabled_events", preset_order))
    for name in enabled:
        if name not in ALL_EVENTS:
            raise ConfigError(f"unknown event {name!r}")
    if len(set(enabled)) != len(enabled):
        raise ConfigError("enabled_events lists an event twice")
    if "event_order" in raw:
        order = tuple(raw["event_order"])
    else:
        full = preset_order + ("socioeconomic",)
        order = tuple(e for e in full if e in enabled)
    if sorted(order) != sorted(enabled):
        missing = sorted(set(enabled) - set(order))
        extra = sorted(set(order) - set(enabled))
        raise ConfigError(
            f"event_order must be a permutation of enabled_events (missing {missing}, not enabled {extra})"
        )
    if len(set(order)) != len(order):
        raise ConfigError("event_order lists an event twice")
    cfg.enabled_events, cfg.event_order = enabled, order

    try:
        cfg.semantics = Semantics(raw.get("semantics", "paper"))
    except ValueError:
        raise ConfigError("semantics must be 'paper' or 'consistent'") from None
    cfg.drain = str(raw.get("drain", "per_cycle"))
    if cfg.drain not in ("per_cycle", "per_event"):
        raise ConfigError("drain must be 'per_cycle' or 'per_event'")

    mig = raw.get("migration") or {}
    if not isinstance(mig, dict):
        raise ConfigError("migration must be a mapping")
    bad = sorted(set(mig) - _MIGRATION_KEYS)
    if bad:
        raise ConfigError(f"unknown config key(s): {', '.join('migration.' + k for k in bad)}")
    if "schedule" in mig:
        cfg.migration_schedule = _path(base, mig["schedule"], "migration.schedule")
    if "pool" in mig:
        cfg.migration_pool = _path(base, mig["pool"], "migration.pool")
    if "emigration_targets" in mig:
        cfg.emigration_targets = _path(base, mig["emigration_targets"], "migration.emigration_targets")
    cfg.emigration_weighting = str(mig.get("emigration_weighting", "size"))
    if cfg.emigration_weighting not in ("size", "equal"):
        raise ConfigError("migration.emigration_weighting must be 'size' or 'equal'")
    if "immigration" in enabled and cfg.migration_schedule is not None and cfg.migration_pool is None:
        raise ConfigError("migration.schedule needs migration.pool")

    params = raw.get("params") or {}
    if not isinstance(params, dict):
        raise ConfigError("params must be a mapping")
    known = {f.name for f in dataclasses.fields(EventParams)}
    bad = sorted(set(params) - known)
    if bad:
        raise ConfigError(f"unknown config key(s): {', '.join('params.' + k for k in bad)}")
    try:
        cfg.params = EventParams(**params)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc
    cfg.check_integrity = bool(raw.get("check_integrity", True))
    if "output" in raw:
        cfg.output = _path(base, raw["output"], "output", must_exist=False)
    return cfg


def load_config(path) -> RunConfig:
    p = Path(path)
    try:
        raw = yaml.safe_load(p.read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(f"cannot read config {p}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse config {p}: {exc}") from exc
    return config_from_dict(raw, p.parent)


# ------------------------------------------------------------------ state


@dataclass
class Inputs:
    """Read-only per-run inputs shared by every cycle."""

    models: ModelRegistry
    schedule: Optional[MigrationSchedule] = None
    pool: Optional[MigrantPool] = None
    emigration: dict = field(default_factory=dict)

    @classmethod
    def load(cls, cfg: RunConfig) -> "Inputs":
        inp = cls(ModelRegistry.load(cfg.models_dir, cfg.rates_dir))
        if cfg.migration_schedule is not None:
            inp.schedule = MigrationSchedule.load(cfg.migration_schedule)
        if cfg.migration_pool is not None:
            inp.pool = MigrantPool.load(cfg.migration_pool)
        if cfg.emigration_targets is not None:
            inp.emigration = load_emigration_targets(cfg.emigration_targets)
        return inp


@dataclass
class SimulationState:
    pop: Population
    year: int
    seed: int
    occurrences: list = field(default_factory=list)  # (year, event, count)
    alignment: list = field(default_factory=list)  # (year, pass, AllocationLog)
    metrics: dict = field(default_factory=dict)  # year -> {metric: value}
    integrity: dict = field(default_factory=dict)  # year -> list of violations
    diagnostics: dict = field(default_factory=dict)  # last cycle's event diagnostics


def _drain(ctx: EventContext, state: SimulationState, cfg: RunConfig, target, label) -> None:
    queue = [h for h in dict.fromkeys(ctx.queue) if h in ctx.pop.households]
    ctx.queue.clear()
    if not queue:
        return
    log = align_households(queue, ctx.pop, target, ctx.stream("alignment", label), cfg.semantics)
    state.alignment.append((ctx.year, label, log))


def year_metrics(pop: Population, n_bins: int, target) -> dict:
    bins = household_size_bins(pop, n_bins)
    m = {"persons": len(pop.persons), "households": len(pop.households)}
    for k, b in enumerate(bins, start=1):
        m[f"households_size_{k}"] = b
    if target is not None:
        for k, rd in enumerate(relative_differences(bins, target), start=1):
            m[f"size_{k}_relative_difference"] = rd
    return m


def run_cycle(state: SimulationState, cfg: RunConfig, inputs: Inputs) -> SimulationState:
    """Simulate one year; the state moves from ``year`` to ``year + 1``."""
    year = state.year + 1
    pop = state.pop
    target = cfg.target_for(year)
    if target is None:
        target = [float(b) for b in household_size_bins(pop, cfg.n_bins)]
    rng = RngStream(state.seed, ("cycle", year))
    ctx = EventContext(pop, inputs.models, rng, year, cfg.params)

    displacing = [e for e in cfg.event_order if e in DISPLACING]
    last_displacing = displacing[-1] if displacing else None
    for name in cfg.event_order:
        if name == "immigration":
            n = immigrate(ctx, inputs.schedule, inputs.pool) if inputs.schedule and inputs.pool else 0
        elif name == "emigration":
            cells = inputs.emigration.get(year, {})
            n = emigrate(ctx, cells, weighting=cfg.emigration_weighting) if cells else 0
        else:
            n = EVENTS[name](ctx)
        ctx.count(name, n)
        if cfg.drain == "per_event" or name == last_displacing:
            _drain(ctx, state, cfg, target, name)
    _drain(ctx, state, cfg, target, "end")

    state.year = year
    for name in sorted(ctx.occurrences):
        state.occurrences.append((year, name, ctx.occurrences[name]))
    m = year_metrics(pop, cfg.n_bins, target)
    for _, shortfall in ctx.diagnostics.get("emigration_undershoot", []):
        m["emigration_undershoot"] = shortfall
    if cfg.check_integrity:
        report = validate_integrity(pop)
        state.integrity[year] = list(report)
        m["integrity_violations"] = len(report)
    m["pending_households"] = len(pop.pending)
    state.metrics[year] = m
    state.diagnostics = ctx.diagnostics
    return state


# ----------------------------------------------------------------- output


def _fmt(v) -> str:
    if isinstance(v, float):
        return f"{v:.6g}"
    return str(v)


def write_metrics(metrics: dict, path: Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["metric", "value"])
        for k in sorted(metrics):
            w.writerow([k, _fmt(metrics[k])])


def write_run_logs(state: SimulationState, run_dir: Path) -> None:
    with open(run_dir / "occurrences.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["year", "event", "count"])
        w.writerows(state.occurrences)
    with open(run_dir / "alignment_trace.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["year", "pass", "iteration", "bin", "surplus", "relative_difference"])
        for year, label, log in state.alignment:
            for it, b, d, rel in log.trace_rows():
                w.writerow([year, label, it, b, _fmt(float(d)), _fmt(rel)])


def run_simulation(cfg: RunConfig, seed: int, out=None, baseline: Optional[Population] = None) -> SimulationState:
    """Run ``cfg.n_cycles`` years from the baseline; write the tree under
    ``out/run_<seed>`` when ``out`` is given."""
    if baseline is None:
        if cfg.baseline is None:
            raise ConfigError("config has no baseline")
        baseline, issues = read_snapshot(cfg.baseline)
        if issues:
            raise ConfigError(f"baseline snapshot is inconsistent: {issues[0]}")
    inputs = Inputs.load(cfg)
    state = SimulationState(baseline.copy(), cfg.start_year, seed)
    state.metrics[cfg.start_year] = year_metrics(state.pop, cfg.n_bins, cfg.target_for(cfg.start_year))
    run_dir = Path(out) / f"run_{seed}" if out is not None else None

    def snapshot() -> None:
        if run_dir is None:
            return
        ydir = run_dir / f"year_{state.year}"
        write_snapshot(state.pop, ydir)
        write_metrics(state.metrics[state.year], ydir / "metrics.csv")

    snapshot()
    for _ in range(cfg.n_cycles):
        run_cycle(state, cfg, inputs)
        snapshot()
    if run_dir is not None:
        write_run_logs(state, run_dir)
    return state


def _run_one(args) -> dict:
    cfg, seed, out = args
    return run_simulation(cfg, seed, out).metrics


def aggregate(per_seed: dict) -> list[tuple]:
    """Rows ``(year, metric, n, mean, sd)``; sd is the sample SD (0 for one run).

    Values are summed in sorted order so the result does not depend on
    the order the seeds were run in.
    """
    values: dict[tuple, list] = {}
    for seed in sorted(per_seed):
        for year, m in per_seed[seed].items():
            for k, v in m.items():
                values.setdefault((year, k), []).append(float(v))
    rows = []
    for (year, k) in sorted(values):
        vs = sorted(values[(year, k)])
        sd = statistics.stdev(vs) if len(vs) > 1 else 0.0
        rows.append((year, k, len(vs), statistics.fmean(vs), sd))
    return rows


def run_replicates(cfg: RunConfig, seeds, out=None, jobs: int = 1) -> list[tuple]:
    """Independent runs, one per seed, aggregated into mean and SD per metric."""
    seeds = list(seeds)
    if not seeds:
        raise ConfigError("at least one seed is required")
    if len(set(seeds)) != len(seeds):
        raise ConfigError("seeds must be distinct")
    work = [(cfg, s, out) for s in seeds]
    if jobs > 1 and len(seeds) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            results = list(ex.map(_run_one, work))
    else:
        results = [_run_one(w) for w in work]
    rows = aggregate(dict(zip(seeds, results)))
    if out is not None:
        Path(out).mkdir(parents=True, exist_ok=True)
        with open(Path(out) / "replicates.csv", "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["year", "metric", "n_runs", "mean", "sd"])
            for year, k, n, mean, sd in rows:
                w.writerow([year, k, n, _fmt(mean), _fmt(sd)])
    return rows
