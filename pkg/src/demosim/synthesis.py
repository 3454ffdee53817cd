"""Baseline population synthesis: IPU reweighting, TRS integerisation,
expansion and kinship linking."""

from __future__ import annotations

import csv
import logging
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ConfigError, ConvergenceWarning, IntegrityError
from .population import (
    Education,
    Employment,
    MaritalStatus,
    PersonId,
    Population,
    RelationshipType,
    Sex,
    StudentStatus,
    age_band,
)
from .stochastic import RngStream, systematic_pps

logger = logging.getLogger(__name__)

WEIGHT_FLOOR = 1e-9

REFERENCE = "Reference"
SPOUSE = "Spouse"
PARTNER = "Partner"
CHILD = "Child"
RELATIONSHIP_CODES = (REFERENCE, SPOUSE, PARTNER, CHILD, "Parent", "OtherRelated", "Unrelated")

SAMPLE_COLUMNS = (
    "household_id", "person_id", "relationship", "age", "sex", "marital_status",
    "employment", "education", "student_status",
)
PERSON_ATTRIBUTES = ("age", "age_band", "sex", "marital_status", "employment", "education", "student_status")
HOUSEHOLD_ATTRIBUTES = ("household_size",)


@dataclass(frozen=True)
class SampleHousehold:
    id: int
    persons: tuple  # dicts with relationship plus person attributes
    weight: float = 1.0

    @property
    def size(self) -> int:
        return len(self.persons)


@dataclass
class ReferenceSample:
    households: list = field(default_factory=list)

    @property
    def weights(self) -> np.ndarray:
        return np.array([h.weight for h in self.households], dtype=float)


@dataclass(frozen=True)
class Control:
    """One cross-tabulation: ``targets`` maps category tuples to counts.

    ``columns`` may be empty, in which case the single key ``()`` is the
    total number of persons (or households).
    """

    name: str
    level: str  # "person" or "household"
    columns: tuple
    targets: dict

    def __post_init__(self) -> None:
        if self.level not in ("person", "household"):
            raise ConfigError(f"control {self.name}: level must be person or household")
        allowed = PERSON_ATTRIBUTES if self.level == "person" else HOUSEHOLD_ATTRIBUTES
        for c in self.columns:
            if c not in allowed:
                raise ConfigError(f"control {self.name}: unknown {self.level} attribute {c!r}")
        for key, t in self.targets.items():
            if len(key) != len(self.columns):
                raise ConfigError(f"control {self.name}: category {key} has wrong arity")
            if t < 0 or not math.isfinite(t):
                raise ConfigError(f"control {self.name}: bad target {t} for {key}")


@dataclass
class IPUResult:
    weights: np.ndarray
    iterations: int
    converged: bool
    max_deviation: float
    history: list  # max deviation after each iteration, index 0 = before any
    deviations: list  # (control, category, target, fitted, deviation)
    unsupported: list  # (control, category) with positive target but no contributor


# ------------------------------------------------------------------ inputs


def _person_value(row: dict, attr: str) -> str:
    if attr == "age_band":
        return age_band(row["age"])
    v = row[attr]
    return str(getattr(v, "value", v))


def _size_label(size: int, labels) -> str:
    tops = [int(s[:-1]) for s in labels if s.endswith("+")]
    if tops and size >= min(tops):
        return f"{min(tops)}+"
    return str(size)


def _contributions(sample: ReferenceSample, control: Control) -> tuple[list, np.ndarray]:
    keys = sorted(control.targets)
    index = {k: i for i, k in enumerate(keys)}
    a = np.zeros((len(keys), len(sample.households)))
    size_labels = [k[0] for k in keys] if control.columns else []
    for j, hh in enumerate(sample.households):
        if control.level == "household":
            key = tuple(_size_label(hh.size, size_labels) for _ in control.columns)
            rows = [key]
        else:
            rows = [tuple(_person_value(p, c) for c in control.columns) for p in hh.persons]
        for key in rows:
            if key not in index:
                raise ConfigError(f"control {control.name}: sample category {key} has no target")
            a[index[key], j] += 1.0
    return keys, a


def read_sample(path) -> ReferenceSample:
    """``sample.csv``: one row per person.  An optional ``weight`` column
    gives the household's initial weight (default 1)."""
    households: dict[int, list] = {}
    weights: dict[int, float] = {}
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.DictReader(fh)
            missing = [c for c in SAMPLE_COLUMNS if c not in (reader.fieldnames or ())]
            if missing:
                raise ConfigError(f"{path}: missing columns {missing}")
            for r in reader:
                hid = int(r["household_id"])
                if r["relationship"] not in RELATIONSHIP_CODES:
                    raise ConfigError(f"{path}: unknown relationship code {r['relationship']!r}")
                households.setdefault(hid, []).append({
                    "person_id": int(r["person_id"]),
                    "relationship": r["relationship"],
                    "age": int(r["age"]),
                    "sex": Sex(r["sex"]),
                    "marital_status": MaritalStatus(r["marital_status"]),
                    "employment": Employment(r["employment"]),
                    "education": Education(r["education"]),
                    "student_status": StudentStatus(r["student_status"]),
                })
                if r.get("weight"):
                    weights[hid] = float(r["weight"])
    except (OSError, ValueError) as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return ReferenceSample([
        SampleHousehold(hid, tuple(rows), weights.get(hid, 1.0)) for hid, rows in sorted(households.items())
    ])


def read_controls(directory) -> list[Control]:
    """Every ``person_*.csv`` and ``household_*.csv`` under ``directory``.

    Each file has category columns followed by ``target``.
    """
    d = Path(directory)
    out = []
    for path in sorted(d.glob("person_*.csv")) + sorted(d.glob("household_*.csv")):
        level = path.name.split("_", 1)[0]
        try:
            with open(path, newline="", encoding="utf-8") as fh:
                reader = csv.DictReader(fh)
                fields = list(reader.fieldnames or ())
                if "target" not in fields:
                    raise ConfigError(f"{path}: no target column")
                cols = tuple(c for c in fields if c != "target")
                targets = {tuple(r[c] for c in cols): float(r["target"]) for r in reader}
        except (OSError, ValueError) as exc:
            raise ConfigError(f"{path}: {exc}") from exc
        out.append(Control(path.stem, level, cols, targets))
    if not out:
        raise ConfigError(f"{d}: no control files found")
    return out


# --------------------------------------------------------------------- IPU


def _deviation(fitted: float, target: float) -> float:
    if target > 0:
        return abs(fitted - target) / target
    return abs(fitted)


def ipu_fit(
    sample: ReferenceSample,
    controls: Sequence[Control],
    tol: float = 0.01,
    max_iter: int = 500,
    household_first: bool = False,
) -> IPUResult:
    """Iterative proportional updating of household weights.

    Each pass visits every category of every control (person-level
    controls first, household-level last unless ``household_first``) and
    multiplies the weights of contributing households by
    ``target / weighted count``.  Deviation is relative to the target, or
    the absolute fitted count for zero targets; the fit stops once the
    largest deviation is below ``tol``.
    """
    if tol <= 0 or max_iter < 0:
        raise ConfigError("tol must be positive and max_iter non-negative")
    ordered = sorted(controls, key=lambda c: (c.level == "person") if household_first else (c.level == "household"))
    rows = []  # (control name, category, target, contribution vector)
    for c in ordered:
        keys, a = _contributions(sample, c)
        rows += [(c.name, k, c.targets[k], a[i]) for i, k in enumerate(keys)]
    w = sample.weights.copy()
    if np.any(w < 0) or not np.all(np.isfinite(w)):
        raise ConfigError("initial weights must be finite and non-negative")

    unsupported = [(name, k) for name, k, t, a in rows if t > 0 and not a.any()]
    for name, k in unsupported:
        warnings.warn(f"IPU: control {name} category {k} has no contributing household", ConvergenceWarning)

    def max_dev() -> float:
        return max((_deviation(float(a @ w), t) for _, _, t, a in rows), default=0.0)

    history = [max_dev()]
    it = 0
    while history[-1] >= tol and it < max_iter:
        it += 1
        for name, k, t, a in rows:
            fitted = float(a @ w)
            if fitted <= 0:
                continue  # unsupported category, skipped this pass
            mask = a > 0
            w[mask] *= t / fitted
            np.maximum(w, WEIGHT_FLOOR, out=w)
        history.append(max_dev())
    converged = history[-1] < tol
    if not converged:
        warnings.warn(
            f"IPU did not converge in {it} iterations (max deviation {history[-1]:.4g})",
            ConvergenceWarning,
        )
    deviations = [(name, k, t, float(a @ w), _deviation(float(a @ w), t)) for name, k, t, a in rows]
    return IPUResult(w, it, converged, history[-1], history, deviations, unsupported)


# --------------------------------------------------------------------- TRS


def round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def trs_integerise(weights: Sequence[float], rng: RngStream) -> list[int]:
    """Truncate, replicate, sample.

    The shortfall ``round(sum(w)) - sum(floor(w))`` is distributed as +1
    to distinct households drawn with inclusion probability proportional
    to their fractional remainders, which keeps every household's
    expected count equal to its weight.
    """
    w = [float(x) for x in weights]
    if any(x < 0 or not math.isfinite(x) for x in w):
        raise ConfigError("weights must be finite and non-negative")
    counts = [int(math.floor(x)) for x in w]
    remainders = [x - c for x, c in zip(w, counts)]
    n = round_half_up(math.fsum(w)) - sum(counts)
    positive = sum(1 for r in remainders if r > 0)
    n = max(0, min(n, positive))
    for i in systematic_pps(remainders, n, rng) if n else ():
        counts[i] += 1
    return counts


# --------------------------------------------------------------- expansion


def expand_population(sample: ReferenceSample, counts: Sequence[int]) -> tuple[Population, dict]:
    """Clone each sample household ``counts[i]`` times.

    Returns the population and a map from new person id to the sample
    relationship code, which :func:`link_relationships` consumes.
    """
    if len(counts) != len(sample.households):
        raise ConfigError("one count per sample household is required")
    pop = Population()
    codes: dict[PersonId, str] = {}
    for hh, n in zip(sample.households, counts):
        if n < 0:
            raise ConfigError("counts must be non-negative")
        for _ in range(n):
            ids = []
            for row in hh.persons:
                pid = pop.create_person(
                    age=row["age"], sex=row["sex"], marital_status=row["marital_status"],
                    employment=row["employment"], education=row["education"],
                    student_status=row["student_status"],
                )
                codes[pid] = row["relationship"]
                ids.append(pid)
            pop.create_household(ids)
    return pop, codes


def link_relationships(pop: Population, codes: dict) -> Population:
    """Partner and parent links from relationship-to-reference codes.

    Only the reference person, their spouse or partner and their children
    are linked.  Households without exactly one reference person, and
    every other code, are left unlinked.
    """
    for hid in sorted(pop.households):
        members = sorted(pop.households[hid].members)
        by_code: dict[str, list] = {}
        for pid in members:
            by_code.setdefault(codes.get(pid, ""), []).append(pid)
        refs = by_code.get(REFERENCE, [])
        mates = by_code.get(SPOUSE, []) + by_code.get(PARTNER, [])
        if len(mates) > 1:
            raise IntegrityError(f"household {hid} has {len(mates)} spouses/partners of the reference person")
        if len(refs) != 1:
            continue
        ref = refs[0]
        parents = [ref]
        if mates:
            mate = mates[0]
            kind = RelationshipType.MARRIED if codes[mate] == SPOUSE else RelationshipType.COHABITING
            pop.link_partners(ref, mate, kind)
            parents.append(mate)
        mother = next((p for p in parents if pop.persons[p].sex is Sex.FEMALE), None)
        father = next((p for p in parents if pop.persons[p].sex is Sex.MALE), None)
        for child in by_code.get(CHILD, []):
            c = pop.persons[child]
            links = {}
            if mother is not None and pop.persons[mother].age > c.age:
                links["mother"] = mother
            if father is not None and pop.persons[father].age > c.age:
                links["father"] = father
            if links:
                pop.update_person(child, **links)
    return pop


# ------------------------------------------------------------------ output


def write_fit_diagnostics(result: IPUResult, sample: ReferenceSample, counts, directory) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    with open(d / "weights.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["household_id", "weight", "count"])
        for hh, weight, n in zip(sample.households, result.weights, counts):
            w.writerow([hh.id, f"{weight:.6g}", n])
    with open(d / "ipu_diagnostics.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["control", "category", "target", "fitted", "deviation", "supported"])
        unsupported = set(result.unsupported)
        for name, key, t, fitted, dev in result.deviations:
            w.writerow([name, "|".join(key), f"{t:.6g}", f"{fitted:.6g}", f"{dev:.6g}",
                        int((name, key) not in unsupported)])
