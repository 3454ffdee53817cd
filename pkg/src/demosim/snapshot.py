"""Population snapshots as ``persons.csv`` + ``households.csv``.

``persons.csv`` columns, in order::

    id, age, sex, marital_status, employment, education, student_status,
    partner_id, mother_id, father_id, household_id, migrant_flag

Absent optional values are empty strings.  ``households.csv`` has
``id, member_count``; membership itself is derived from ``persons.csv``.
The partnership kind is not stored: a partnered person whose marital
status is Married is in a Married relationship, otherwise Cohabiting.
"""

from __future__ import annotations

import csv
from pathlib import Path

from .errors import ConfigError
from .population import (
    Education,
    Employment,
    Household,
    HouseholdId,
    MaritalStatus,
    MigrantType,
    Person,
    PersonId,
    Population,
    RelationshipType,
    Sex,
    StudentStatus,
)

PERSON_COLUMNS = (
    "id", "age", "sex", "marital_status", "employment", "education", "student_status",
    "partner_id", "mother_id", "father_id", "household_id", "migrant_flag",
)
HOUSEHOLD_COLUMNS = ("id", "member_count")


def _opt(value):
    return "" if value is None else getattr(value, "value", value)


def person_row(p: Person) -> list:
    return [
        p.id, p.age, p.sex.value, p.marital_status.value, p.employment.value,
        p.education.value, p.student_status.value, _opt(p.partner), _opt(p.mother),
        _opt(p.father), _opt(p.household), _opt(p.migrant_flag),
    ]


def write_snapshot(pop: Population, directory) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    with open(d / "persons.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(PERSON_COLUMNS)
        for pid in sorted(pop.persons):
            w.writerow(person_row(pop.persons[pid]))
    with open(d / "households.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(HOUSEHOLD_COLUMNS)
        for hid in sorted(pop.households):
            w.writerow([hid, pop.households[hid].size])


def _int_or_none(text: str):
    text = text.strip()
    return int(text) if text else None


def read_person_rows(path) -> list[dict]:
    """Typed person records keyed by the ``persons.csv`` column names."""
    out = []
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.DictReader(fh)
            if tuple(reader.fieldnames or ()) != PERSON_COLUMNS:
                raise ConfigError(f"{path}: columns must be exactly {','.join(PERSON_COLUMNS)}")
            for row in reader:
                out.append({
                    "id": int(row["id"]),
                    "age": int(row["age"]),
                    "sex": Sex(row["sex"]),
                    "marital_status": MaritalStatus(row["marital_status"]),
                    "employment": Employment(row["employment"]),
                    "education": Education(row["education"]),
                    "student_status": StudentStatus(row["student_status"]),
                    "partner_id": _int_or_none(row["partner_id"]),
                    "mother_id": _int_or_none(row["mother_id"]),
                    "father_id": _int_or_none(row["father_id"]),
                    "household_id": _int_or_none(row["household_id"]),
                    "migrant_flag": MigrantType(row["migrant_flag"]) if row["migrant_flag"] else None,
                })
    except (OSError, ValueError, KeyError) as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return out


def read_household_counts(path) -> dict[int, int]:
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.DictReader(fh)
            if tuple(reader.fieldnames or ()) != HOUSEHOLD_COLUMNS:
                raise ConfigError(f"{path}: columns must be exactly {','.join(HOUSEHOLD_COLUMNS)}")
            return {int(r["id"]): int(r["member_count"]) for r in reader}
    except (OSError, ValueError) as exc:
        raise ConfigError(f"{path}: {exc}") from exc


def relationship_from(row: dict) -> RelationshipType:
    if row["partner_id"] is None:
        return RelationshipType.NONE
    if row["marital_status"] is MaritalStatus.MARRIED:
        return RelationshipType.MARRIED
    return RelationshipType.COHABITING


def read_snapshot(directory) -> tuple[Population, list[str]]:
    """Load a snapshot without checking it.

    Returns the population and a list of file-level problems (member counts
    that disagree with ``persons.csv``); registry-level problems are left
    for :func:`~demosim.population.validate_integrity` to find.
    """
    d = Path(directory)
    rows = read_person_rows(d / "persons.csv")
    counts = read_household_counts(d / "households.csv")
    pop = Population()
    for hid in counts:
        pop.households[HouseholdId(hid)] = Household(HouseholdId(hid))
    for row in rows:
        p = Person(
            id=PersonId(row["id"]), age=row["age"], sex=row["sex"],
            marital_status=row["marital_status"], employment=row["employment"],
            education=row["education"], student_status=row["student_status"],
            partner=row["partner_id"], mother=row["mother_id"], father=row["father_id"],
            household=row["household_id"], relationship_type=relationship_from(row),
            migrant_flag=row["migrant_flag"],
        )
        pop.persons[p.id] = p
        if p.household in pop.households:
            pop.households[p.household].members[p.id] = None
    issues = []
    for hid, hh in list(pop.households.items()):
        if hh.size != counts[hid]:
            issues.append(f"household {hid}: member_count {counts[hid]} but {hh.size} persons")
        if not hh.members:
            issues.append(f"household {hid} has no members")
    pop.rebuild_indices()
    return pop, issues
