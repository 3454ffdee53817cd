"""Validation metrics over snapshots: marginal shares, run-vs-observed
comparisons, RMSE and household types, plus CSV/markdown emitters."""

from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from .errors import ConfigError
from .population import (
    AGE_BANDS,
    Education,
    Employment,
    HouseholdId,
    MaritalStatus,
    Population,
    Sex,
    age_band,
)

DIMENSIONS = (
    "age_band", "sex", "marital_status", "education", "employment",
    "household_size", "household_type",
)
HOUSEHOLD_TYPE_NOTE = (
    "Household type is our own rule: one member is LonePerson; any partner or "
    "parent-child link between members is Family; anything else is Group."
)


class HouseholdType(str, enum.Enum):
    LONE_PERSON = "LonePerson"
    FAMILY = "Family"
    GROUP = "Group"


@dataclass
class MarginalTable:
    dimension: str
    counts: dict = field(default_factory=dict)  # category -> count

    @property
    def total(self) -> int:
        return sum(self.counts.values())

    @property
    def shares(self) -> dict:
        t = self.total
        return {k: (v / t if t else 0.0) for k, v in self.counts.items()}


@dataclass(frozen=True)
class ComparisonRow:
    dimension: str
    category: str
    observed: float
    simulated: float  # mean over runs
    low: float
    high: float

    @property
    def difference(self) -> float:
        return self.simulated - self.observed


def classify_household_type(hid: HouseholdId, pop: Population) -> HouseholdType:
    members = pop.households[hid].members
    if len(members) == 1:
        return HouseholdType.LONE_PERSON
    for pid in members:
        p = pop.persons[pid]
        if p.partner in members or p.mother in members or p.father in members:
            return HouseholdType.FAMILY
    return HouseholdType.GROUP


def _categories(dimension: str, n_bins: int) -> list[str]:
    if dimension == "age_band":
        return list(AGE_BANDS)
    enums = {"sex": Sex, "marital_status": MaritalStatus, "education": Education, "employment": Employment}
    if dimension in enums:
        return [m.value for m in enums[dimension]]
    if dimension == "household_size":
        return [str(k) for k in range(1, n_bins)] + [f"{n_bins}+"]
    return [t.value for t in HouseholdType]


def marginal_shares(pop: Population, dimension: str, n_bins: int = 6) -> MarginalTable:
    """Counts over every category of ``dimension`` (zero rows included)."""
    if dimension not in DIMENSIONS:
        raise ConfigError(f"unknown dimension {dimension!r}; expected one of {', '.join(DIMENSIONS)}")
    table = MarginalTable(dimension, {c: 0 for c in _categories(dimension, n_bins)})
    if dimension == "household_size":
        for hh in pop.households.values():
            label = str(hh.size) if hh.size < n_bins else f"{n_bins}+"
            table.counts[label] += 1
    elif dimension == "household_type":
        for hid in pop.households:
            table.counts[classify_household_type(hid, pop).value] += 1
    else:
        for p in pop.persons.values():
            value = age_band(p.age) if dimension == "age_band" else getattr(p, dimension).value
            table.counts[value] += 1
    return table


def category_mismatch(sim_tables: Sequence[MarginalTable], observed: MarginalTable) -> set:
    """Categories present on one side only (non-zero counts only)."""
    obs = {k for k, v in observed.counts.items() if v}
    sim = {k for t in sim_tables for k, v in t.counts.items() if v}
    return obs ^ sim


def compare(sim_tables: Sequence[MarginalTable], observed: MarginalTable) -> list[ComparisonRow]:
    """Mean and min-max range of simulated shares against observed shares.

    Categories missing from a table count as share 0.
    """
    obs = observed.shares
    sims = [t.shares for t in sim_tables]
    cats = list(dict.fromkeys(list(obs) + [k for s in sims for k in s]))
    rows = []
    for c in cats:
        values = [s.get(c, 0.0) for s in sims]
        if values:
            mean, low, high = math.fsum(values) / len(values), min(values), max(values)
        else:
            mean = low = high = 0.0
        rows.append(ComparisonRow(observed.dimension, c, obs.get(c, 0.0), mean, low, high))
    return rows


def rmse(sim: Sequence[float], obs: Sequence[float]) -> float:
    if len(sim) != len(obs):
        raise ConfigError(f"series lengths differ: {len(sim)} vs {len(obs)}")
    if not sim:
        raise ConfigError("rmse needs at least one point")
    # hypot scales internally, so tiny differences do not square to zero
    return math.hypot(*(s - o for s, o in zip(sim, obs))) / math.sqrt(len(sim))


# ----------------------------------------------------------------- output


def fmt(x) -> str:
    if isinstance(x, float):
        return f"{x:.6g}"
    return str(x)


def _pct(x: float) -> str:
    return f"{100 * x:.2f}%"


def alignment_markdown(existing: Sequence[float], target: Sequence[float],
                       before: Sequence[float], after: Sequence[float]) -> list[str]:
    """A before/after table for one alignment problem."""
    n = len(target)
    header = ["", *[str(k) if k < n else f"{k}+" for k in range(1, n + 1)]]
    lines = [
        "| " + " | ".join(header) + " |",
        "|" + "---|" * len(header),
        "| Existing | " + " | ".join(fmt(float(x)) for x in existing) + " |",
        "| Target | " + " | ".join(fmt(float(x)) for x in target) + " |",
        "| Relative difference before | " + " | ".join(_pct(x) for x in before) + " |",
        "| Relative difference after | " + " | ".join(_pct(x) for x in after) + " |",
    ]
    return lines


def write_comparison_csv(rows: Iterable[ComparisonRow], path: Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["dimension", "category", "observed", "simulated_mean", "range_min", "range_max", "difference"])
        for r in rows:
            w.writerow([r.dimension, r.category, fmt(r.observed), fmt(r.simulated),
                        fmt(r.low), fmt(r.high), fmt(r.difference)])


def write_trace_csv(logs: Sequence, path: Path) -> None:
    """``logs`` holds ``(label, AllocationLog)`` pairs."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["pass", "iteration", "bin", "surplus", "relative_difference"])
        for label, log in logs:
            for it, b, d, rel in log.trace_rows():
                w.writerow([label, it, b, fmt(float(d)), fmt(rel)])


def emit_reports(comparisons: dict, out_dir, alignment: Sequence = (),
                 household_types: Sequence = (), alignment_tables: Sequence = ()) -> list[Path]:
    """Write ``<out_dir>/reports/``.

    ``comparisons`` maps a dimension to its ComparisonRow list;
    ``alignment`` holds ``(label, AllocationLog)`` pairs;
    ``household_types`` holds ``(year, type, mean, low, high)`` rows;
    ``alignment_tables`` holds ``(title, existing, target, before, after)``.
    Output bytes depend only on the arguments.
    """
    d = Path(out_dir) / "reports"
    d.mkdir(parents=True, exist_ok=True)
    written = []
    path = d / "comparison.csv"
    write_comparison_csv([r for dim in sorted(comparisons) for r in comparisons[dim]], path)
    written.append(path)

    path = d / "alignment_trace.csv"
    write_trace_csv(alignment, path)
    written.append(path)

    path = d / "household_types.csv"
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["year", "household_type", "mean", "range_min", "range_max"])
        for row in household_types:
            w.writerow([fmt(v) for v in row])
    written.append(path)

    lines = ["# Validation summary", ""]
    for title, existing, target, before, after in alignment_tables:
        lines += [f"## {title}", ""] + alignment_markdown(existing, target, before, after) + [""]
    for dim in sorted(comparisons):
        rows = comparisons[dim]
        lines += [f"## {dim}", "",
                  "| Category | Observed (%) | Simulated (%) | Range min-max (%) | Difference |",
                  "|---|---|---|---|---|"]
        for r in rows:
            lines.append(
                f"| {r.category} | {fmt(100 * r.observed)} | {fmt(100 * r.simulated)} | "
                f"{fmt(100 * r.low)} - {fmt(100 * r.high)} | {fmt(100 * r.difference)} |"
            )
        if rows:
            lines.append("")
            lines.append(f"RMSE of shares: {fmt(rmse([r.simulated for r in rows], [r.observed for r in rows]))}")
        lines.append("")
    if "household_type" in comparisons or household_types:
        lines += [f"Note: {HOUSEHOLD_TYPE_NOTE}", ""]
    lines.append("Range is the min-max over runs.")
    path = d / "summary.md"
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    written.append(path)
    return written
