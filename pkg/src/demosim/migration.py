"""Immigration from a weighted pool of template households and
whole-household emigration against an age-band x sex target."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError
from .events import EventContext
from .population import HouseholdId, MigrantType, Population, RelationshipType, age_band
from .snapshot import read_person_rows, relationship_from
from .stochastic import RngStream, weighted_sample

logger = logging.getLogger(__name__)

MIGRANT_TYPES = tuple(MigrantType)


@dataclass(frozen=True)
class MigrantTemplate:
    key: int  # household id in the pool files
    persons: tuple  # typed person rows as read from persons.csv
    weight: float
    migrant_type: MigrantType

    @property
    def size(self) -> int:
        return len(self.persons)


@dataclass
class MigrantPool:
    templates: list = field(default_factory=list)

    def of_type(self, migrant_type: MigrantType) -> list[MigrantTemplate]:
        return [t for t in self.templates if t.migrant_type is migrant_type]

    @classmethod
    def load(cls, directory) -> "MigrantPool":
        """``persons.csv`` (snapshot format) plus ``weights.csv``
        (household_id, weight, migrant_type)."""
        d = Path(directory)
        by_household: dict[int, list] = {}
        for row in read_person_rows(d / "persons.csv"):
            by_household.setdefault(row["household_id"], []).append(row)
        templates = []
        try:
            with open(d / "weights.csv", newline="", encoding="utf-8") as fh:
                for row in csv.DictReader(fh):
                    hid = int(row["household_id"])
                    if hid not in by_household:
                        raise ConfigError(f"weights.csv: household {hid} has no persons")
                    w = float(row["weight"])
                    if w < 0 or not math.isfinite(w):
                        raise ConfigError(f"weights.csv: bad weight {w} for household {hid}")
                    templates.append(
                        MigrantTemplate(hid, tuple(by_household[hid]), w, MigrantType(row["migrant_type"]))
                    )
        except (OSError, ValueError, KeyError) as exc:
            raise ConfigError(f"{d / 'weights.csv'}: {exc}") from exc
        return cls(templates)


@dataclass
class MigrationSchedule:
    rows: dict = field(default_factory=dict)  # (year, type, direction) -> (persons, conv_rate)

    def get(self, year: int, migrant_type: MigrantType, direction: str) -> tuple[float, float]:
        return self.rows.get((year, migrant_type, direction), (0.0, 1.0))

    @classmethod
    def load(cls, path) -> "MigrationSchedule":
        rows = {}
        try:
            with open(path, newline="", encoding="utf-8") as fh:
                for r in csv.DictReader(fh):
                    direction = r["direction"].strip()
                    if direction not in ("in", "out"):
                        raise ConfigError(f"{path}: direction must be in/out, got {direction!r}")
                    rate = float(r["conv_rate"])
                    if rate <= 0:
                        raise ConfigError(f"{path}: conversion rates must be positive")
                    key = (int(r["year"]), MigrantType(r["type"]), direction)
                    rows[key] = (float(r["persons"]), rate)
        except (OSError, ValueError, KeyError) as exc:
            raise ConfigError(f"{path}: {exc}") from exc
        return cls(rows)


def load_emigration_targets(path) -> dict[int, dict[tuple[str, str], int]]:
    """``year, age_band, sex, count`` -> ``{year: {(band, sex): count}}``."""
    out: dict[int, dict] = {}
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            for r in csv.DictReader(fh):
                count = int(r["count"])
                if count < 0:
                    raise ConfigError(f"{path}: negative emigration target")
                out.setdefault(int(r["year"]), {})[(r["age_band"], r["sex"])] = count
    except (OSError, ValueError, KeyError) as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return out


def round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def sample_immigrant_households(
    pool: MigrantPool | list,
    persons_target: float,
    conv_rate: float,
    rng: RngStream,
    migrant_type: MigrantType | None = None,
) -> list[MigrantTemplate]:
    """Draw ``round(persons_target * conv_rate)`` templates with replacement,
    proportional to their calibrated weights."""
    if persons_target < 0:
        raise ConfigError("persons_target must be non-negative")
    templates = pool if isinstance(pool, list) else (
        pool.of_type(migrant_type) if migrant_type is not None else pool.templates
    )
    n = round_half_up(persons_target * conv_rate)
    if n == 0:
        return []
    if not templates or not any(t.weight > 0 for t in templates):
        raise ConfigError(f"no weighted migrant templates for {migrant_type}")
    return weighted_sample(templates, [t.weight for t in templates], n, rng=rng)


def instantiate(pop: Population, template: MigrantTemplate, migrant_type: MigrantType | None = None) -> HouseholdId:
    """Create fresh persons mirroring a template household and its internal links."""
    flag = migrant_type or template.migrant_type
    new_ids = {}
    rows = sorted(template.persons, key=lambda r: r["id"])
    # parents first where possible so the age check sees them
    for row in sorted(rows, key=lambda r: -r["age"]):
        new_ids[row["id"]] = pop.create_person(
            age=row["age"], sex=row["sex"], marital_status=row["marital_status"],
            employment=row["employment"], education=row["education"],
            student_status=row["student_status"], migrant_flag=flag,
        )
    hid = pop.create_household([new_ids[r["id"]] for r in rows])
    for row in rows:
        links = {}
        for key in ("mother", "father"):
            ref = row[f"{key}_id"]
            if ref in new_ids:
                links[key] = new_ids[ref]
        if links:
            pop.update_person(new_ids[row["id"]], **links)
    for row in rows:
        mate = row["partner_id"]
        if mate in new_ids and row["id"] < mate:
            kind = relationship_from(row)
            if kind is RelationshipType.NONE:
                continue
            pop.link_partners(new_ids[row["id"]], new_ids[mate], kind)
    return hid


def immigrate(ctx: EventContext, schedule: MigrationSchedule, pool: MigrantPool) -> int:
    """Queue this year's migrant households, one migrant type at a time."""
    added = 0
    for mtype in MIGRANT_TYPES:
        persons, rate = schedule.get(ctx.year, mtype, "in")
        templates = sample_immigrant_households(
            pool, persons, rate, ctx.stream("immigration", mtype.value), mtype
        )
        for t in templates:
            hid = instantiate(ctx.pop, t, mtype)
            ctx.pop.mark_pending(hid)
            ctx.queue.append(hid)
            added += t.size
        ctx.count(f"immigration_{mtype.value}", sum(t.size for t in templates))
    return added


def _composition(pop: Population, hid: HouseholdId) -> dict[tuple[str, str], int]:
    comp: dict = {}
    for pid in pop.households[hid].members:
        p = pop.persons[pid]
        cell = (age_band(p.age), p.sex.value)
        comp[cell] = comp.get(cell, 0) + 1
    return comp


def emigrate(ctx: EventContext, target: dict, rng: RngStream | None = None, weighting: str = "size") -> int:
    """Remove whole households until no more fit under the remaining target.

    ``weighting="size"`` draws a person uniformly and takes their household
    (households selected in proportion to size); ``"equal"`` draws
    households uniformly.  A draw is rejected if removing the household
    would push any (age band, sex) cell below zero.  The loop stops after
    ``50 * remaining`` consecutive rejections.
    """
    if weighting not in ("size", "equal"):
        raise ConfigError("emigration weighting must be 'size' or 'equal'")
    pop = ctx.pop
    rng = rng or ctx.stream("emigration")
    remaining = {k: int(v) for k, v in target.items() if v > 0}
    removed = 0

    def candidates() -> list:
        if weighting == "equal":
            return sorted(h for h in pop.households if h not in pop.pending)
        return sorted(pid for pid, p in pop.persons.items() if p.household not in pop.pending)

    pool = candidates()
    rejections = 0
    while pool and sum(remaining.values()) > 0:
        pick = pool[rng.randint(len(pool))]
        hid = pick if weighting == "equal" else pop.persons[pick].household
        comp = _composition(pop, hid)
        if all(remaining.get(cell, 0) >= n for cell, n in comp.items()):
            for cell, n in comp.items():
                remaining[cell] -= n
            removed += len(pop.remove_household(hid))
            pool = candidates()
            rejections = 0
            continue
        rejections += 1
        if rejections >= 50 * sum(remaining.values()):
            break
    shortfall = sum(remaining.values())
    ctx.diagnostics.setdefault("emigration_undershoot", []).append((ctx.year, shortfall))
    if shortfall:
        logger.info("emigration %s: %d target persons not removed", ctx.year, shortfall)
    return removed
