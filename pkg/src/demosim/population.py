"""Entity registry for persons and households.

All mutations go through :class:`Population` methods so that the
person/household back-references, partner symmetry and the lookup
indices stay consistent.  :func:`validate_integrity` rescans everything
from scratch and reports (never raises) what is broken.
"""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, field, fields, replace
from typing import Iterable, Iterator, NewType, Optional

from .errors import IntegrityError

logger = logging.getLogger(__name__)

PersonId = NewType("PersonId", int)
HouseholdId = NewType("HouseholdId", int)


class Sex(str, enum.Enum):
    MALE = "Male"
    FEMALE = "Female"


class MaritalStatus(str, enum.Enum):
    NOT_APPLICABLE = "NotApplicable"
    NEVER_MARRIED = "NeverMarried"
    MARRIED = "Married"
    SEPARATED = "Separated"
    DIVORCED = "Divorced"
    WIDOWED = "Widowed"


class Employment(str, enum.Enum):
    NOT_APPLICABLE = "NotApplicable"
    EMPLOYED = "Employed"
    UNEMPLOYED = "Unemployed"
    NOT_IN_LABOUR_FORCE = "NotInLabourForce"


class Education(str, enum.Enum):
    NOT_APPLICABLE = "NotApplicable"
    YEAR12_OR_BELOW = "Year12OrBelow"
    CERTIFICATE = "Certificate"
    ADVANCED_DIPLOMA = "AdvancedDiplomaDiploma"
    BACHELOR = "Bachelor"
    GRADUATE_DIPLOMA = "GraduateDiplomaCertificate"
    POSTGRADUATE = "Postgraduate"


DEGREE_LEVELS = frozenset(
    {Education.BACHELOR, Education.GRADUATE_DIPLOMA, Education.POSTGRADUATE}
)


class StudentStatus(str, enum.Enum):
    NOT_APPLICABLE = "NotApplicable"
    PART_TIME = "PartTime"
    FULL_TIME = "FullTime"


class RelationshipType(str, enum.Enum):
    NONE = "None"
    COHABITING = "Cohabiting"
    MARRIED = "Married"


class MigrantType(str, enum.Enum):
    INTER_REGIONAL = "InterRegional"
    OVERSEAS_TEMPORARY = "OverseasTemporary"
    OVERSEAS_PERMANENT = "OverseasPermanent"


AGE_BANDS = tuple(f"{lo}-{lo + 4}" for lo in range(0, 85, 5)) + ("85+",)


def age_band(age: int) -> str:
    """Five-year age group label, top group open-ended at 85."""
    return AGE_BANDS[min(age // 5, len(AGE_BANDS) - 1)]


@dataclass(slots=True)
class Person:
    id: PersonId
    age: int
    sex: Sex
    marital_status: MaritalStatus = MaritalStatus.NOT_APPLICABLE
    employment: Employment = Employment.NOT_APPLICABLE
    education: Education = Education.NOT_APPLICABLE
    student_status: StudentStatus = StudentStatus.NOT_APPLICABLE
    partner: Optional[PersonId] = None
    mother: Optional[PersonId] = None
    father: Optional[PersonId] = None
    household: Optional[HouseholdId] = None
    relationship_type: RelationshipType = RelationshipType.NONE
    migrant_flag: Optional[MigrantType] = None


@dataclass(slots=True)
class Household:
    id: HouseholdId
    # dict used as an insertion-ordered set
    members: dict = field(default_factory=dict)

    @property
    def size(self) -> int:
        return len(self.members)

    def member_ids(self) -> list:
        return list(self.members)


PERSON_FIELDS = tuple(f.name for f in fields(Person) if f.name != "id")
_INDEXED = ("age_band", "sex", "marital_status")


@dataclass
class IntegrityReport:
    violations: list = field(default_factory=list)

    def __bool__(self) -> bool:
        return not self.violations

    @property
    def ok(self) -> bool:
        return not self.violations

    def __len__(self) -> int:
        return len(self.violations)

    def __iter__(self) -> Iterator[str]:
        return iter(self.violations)


class Population:
    """Id-indexed persons and households plus secondary indices.

    Households listed in :attr:`pending` have been created by an event
    but not yet placed by the alignment procedure; they are excluded from
    household-size bins until confirmed or merged.
    """

    def __init__(self) -> None:
        self.persons: dict[PersonId, Person] = {}
        self.households: dict[HouseholdId, Household] = {}
        self.pending: dict[HouseholdId, None] = {}
        self._next_pid = 1
        self._next_hid = 1
        self._index: dict[str, dict[object, set]] = {k: {} for k in _INDEXED}
        self._hh_by_size: dict[int, set] = {}
        self._children: dict[PersonId, set] = {}

    # ------------------------------------------------------------------ lookup

    def __len__(self) -> int:
        return len(self.persons)

    def person(self, pid: PersonId) -> Person:
        try:
            return self.persons[pid]
        except KeyError:
            raise IntegrityError(f"unknown person {pid}") from None

    def household(self, hid: HouseholdId) -> Household:
        try:
            return self.households[hid]
        except KeyError:
            raise IntegrityError(f"unknown household {hid}") from None

    def household_of(self, pid: PersonId) -> Household:
        return self.household(self.person(pid).household)

    def established_households(self) -> list[HouseholdId]:
        return [h for h in self.households if h not in self.pending]

    def persons_where(self, **criteria) -> set:
        """Ids matching every ``age_band=``/``sex=``/``marital_status=`` key."""
        result = None
        for key, value in criteria.items():
            if key not in self._index:
                raise KeyError(f"{key} is not indexed")
            ids = self._index[key].get(value, set())
            result = set(ids) if result is None else result & ids
        return set(self.persons) if result is None else result

    def households_of_size(self, size: int) -> set:
        return set(self._hh_by_size.get(size, ()))

    def children_of(self, pid: PersonId) -> list[PersonId]:
        return sorted(self._children.get(pid, ()))

    # --------------------------------------------------------- index plumbing

    def _index_add(self, p: Person) -> None:
        for key, value in self._index_keys(p):
            self._index[key].setdefault(value, set()).add(p.id)
        for parent in (p.mother, p.father):
            if parent is not None:
                self._children.setdefault(parent, set()).add(p.id)

    def _index_remove(self, p: Person) -> None:
        for key, value in self._index_keys(p):
            bucket = self._index[key].get(value)
            if bucket is not None:
                bucket.discard(p.id)
                if not bucket:
                    del self._index[key][value]
        for parent in (p.mother, p.father):
            if parent is not None and parent in self._children:
                self._children[parent].discard(p.id)
                if not self._children[parent]:
                    del self._children[parent]

    @staticmethod
    def _index_keys(p: Person):
        return (
            ("age_band", age_band(p.age)),
            ("sex", p.sex),
            ("marital_status", p.marital_status),
        )

    def _size_index_move(self, hid: HouseholdId, old: int, new: int) -> None:
        if old:
            bucket = self._hh_by_size.get(old)
            if bucket is not None:
                bucket.discard(hid)
                if not bucket:
                    del self._hh_by_size[old]
        if new:
            self._hh_by_size.setdefault(new, set()).add(hid)

    def _attach(self, pid: PersonId, hid: HouseholdId) -> None:
        hh = self.households[hid]
        old = hh.size
        hh.members[pid] = None
        self.persons[pid].household = hid
        self._size_index_move(hid, old, hh.size)

    def _detach(self, pid: PersonId) -> None:
        """Take ``pid`` out of its household, deleting the household if emptied."""
        p = self.persons[pid]
        hid = p.household
        if hid is None:
            return
        hh = self.households[hid]
        old = hh.size
        del hh.members[pid]
        p.household = None
        self._size_index_move(hid, old, hh.size)
        if not hh.members:
            del self.households[hid]
            self.pending.pop(hid, None)

    # -------------------------------------------------------------- mutations

    def create_person(self, *, household: Optional[HouseholdId] = None, **attrs) -> PersonId:
        """Register a person; ``household=None`` leaves them transiently unhoused."""
        unknown = set(attrs) - set(PERSON_FIELDS)
        if unknown:
            raise IntegrityError(f"unknown person attributes: {sorted(unknown)}")
        if household is not None and household not in self.households:
            raise IntegrityError(f"household {household} does not exist")
        for key in ("partner", "mother", "father"):
            ref = attrs.get(key)
            if ref is not None and ref not in self.persons:
                raise IntegrityError(f"{key} {ref} does not exist")
        if attrs.get("partner") is not None:
            raise IntegrityError("partners must be linked with link_partners")
        if attrs.get("age", 0) < 0:
            raise IntegrityError("age must be non-negative")
        pid = PersonId(self._next_pid)
        self._next_pid += 1
        p = Person(id=pid, **attrs)
        for key in ("mother", "father"):
            ref = getattr(p, key)
            if ref is not None and self.persons[ref].age <= p.age:
                logger.warning("person %s: %s %s is not older", pid, key, ref)
        self.persons[pid] = p
        self._index_add(p)
        if household is not None:
            self._attach(pid, household)
        return pid

    def update_person(self, pid: PersonId, **changes) -> None:
        """Set plain attributes while keeping the indices in step."""
        p = self.person(pid)
        forbidden = {"partner", "household", "relationship_type"} & set(changes)
        if forbidden:
            raise IntegrityError(f"use the dedicated primitives for {sorted(forbidden)}")
        unknown = set(changes) - set(PERSON_FIELDS)
        if unknown:
            raise IntegrityError(f"unknown person attributes: {sorted(unknown)}")
        for key in ("mother", "father"):
            ref = changes.get(key)
            if ref is not None and ref not in self.persons:
                raise IntegrityError(f"{key} {ref} does not exist")
        self._index_remove(p)
        for key, value in changes.items():
            setattr(p, key, value)
        self._index_add(p)

    def create_household(self, members: Iterable[PersonId]) -> HouseholdId:
        """Create a household, moving each member out of wherever they live."""
        members = list(dict.fromkeys(members))
        if not members:
            raise IntegrityError("a household needs at least one member")
        for pid in members:
            self.person(pid)
        hid = HouseholdId(self._next_hid)
        self._next_hid += 1
        self.households[hid] = Household(hid)
        for pid in members:
            self._detach(pid)
            self._attach(pid, hid)
        return hid

    def merge_households(self, src: HouseholdId, dst: HouseholdId) -> HouseholdId:
        if src == dst:
            raise IntegrityError("cannot merge a household into itself")
        self.household(src)
        self.household(dst)
        for pid in list(self.households[src].members):
            self._detach(pid)
            self._attach(pid, dst)
        return dst

    def move_person(self, pid: PersonId, to: HouseholdId) -> None:
        p = self.person(pid)
        self.household(to)
        if p.household == to:
            return
        self._detach(pid)
        self._attach(pid, to)

    def link_partners(self, a: PersonId, b: PersonId, kind: RelationshipType) -> None:
        kind = RelationshipType(kind)
        if kind is RelationshipType.NONE:
            raise IntegrityError("link kind must be Cohabiting or Married")
        if a == b:
            raise IntegrityError("a person cannot partner themselves")
        pa, pb = self.person(a), self.person(b)
        for p in (pa, pb):
            if p.partner is not None and p.partner not in (a, b):
                raise IntegrityError(f"person {p.id} already has partner {p.partner}")
        if (pa.partner is None) != (pb.partner is None):
            raise IntegrityError(f"asymmetric partner link between {a} and {b}")
        pa.partner, pb.partner = b, a
        pa.relationship_type = pb.relationship_type = kind
        if kind is RelationshipType.MARRIED:
            self.update_person(a, marital_status=MaritalStatus.MARRIED)
            self.update_person(b, marital_status=MaritalStatus.MARRIED)

    def unlink_partners(self, a: PersonId, b: PersonId) -> None:
        pa, pb = self.person(a), self.person(b)
        if pa.partner != b or pb.partner != a:
            raise IntegrityError(f"{a} and {b} are not mutual partners")
        pa.partner = pb.partner = None
        pa.relationship_type = pb.relationship_type = RelationshipType.NONE

    def _forget(self, p: Person) -> None:
        """Drop a person and clear references that other persons hold to them."""
        if p.partner is not None and p.partner in self.persons:
            other = self.persons[p.partner]
            if other.partner == p.id:
                other.partner = None
                other.relationship_type = RelationshipType.NONE
        for child in list(self._children.get(p.id, ())):
            c = self.persons[child]
            self._index_remove(c)
            if c.mother == p.id:
                c.mother = None
            if c.father == p.id:
                c.father = None
            self._index_add(c)
        self._index_remove(p)
        del self.persons[p.id]

    def remove_person(self, pid: PersonId) -> Person:
        """Delete one person (death); partner and parent links to them are cleared."""
        p = self.person(pid)
        self._detach(pid)
        self._forget(p)
        return p

    def remove_household(self, hid: HouseholdId) -> list[Person]:
        hh = self.household(hid)
        removed = [self.persons[pid] for pid in hh.members]
        for p in removed:
            self._detach(p.id)
        for p in removed:
            self._forget(p)
        return removed

    def mark_pending(self, hid: HouseholdId) -> None:
        self.household(hid)
        self.pending[hid] = None

    def confirm(self, hid: HouseholdId) -> None:
        self.pending.pop(hid, None)

    def rebuild_indices(self) -> None:
        """Recompute every secondary index and id counter from the raw maps."""
        self._index = {k: {} for k in _INDEXED}
        self._children = {}
        self._hh_by_size = {}
        for p in self.persons.values():
            self._index_add(p)
        for hid, hh in self.households.items():
            if hh.members:
                self._hh_by_size.setdefault(hh.size, set()).add(hid)
        self._next_pid = max(self.persons, default=0) + 1
        self._next_hid = max(self.households, default=0) + 1

    def copy(self) -> "Population":
        """Deep copy, used by tests that compare before/after states."""
        new = Population()
        new.persons = {pid: replace(p) for pid, p in self.persons.items()}
        new.households = {
            hid: Household(hid, dict(h.members)) for hid, h in self.households.items()
        }
        new.pending = dict(self.pending)
        new._next_pid, new._next_hid = self._next_pid, self._next_hid
        new._index = {k: {v: set(s) for v, s in d.items()} for k, d in self._index.items()}
        new._hh_by_size = {k: set(v) for k, v in self._hh_by_size.items()}
        new._children = {k: set(v) for k, v in self._children.items()}
        return new


def household_size_bins(pop: Population, n_bins: int = 6) -> list[int]:
    """Count established households by size; the last bin is ``n_bins`` or more.

    ``bins[k - 1]`` holds households of size ``k``.
    """
    if n_bins < 1:
        raise ValueError("n_bins must be >= 1")
    bins = [0] * n_bins
    for hid, hh in pop.households.items():
        if hid in pop.pending:
            continue
        bins[min(hh.size, n_bins) - 1] += 1
    return bins


def validate_integrity(pop: Population) -> IntegrityReport:
    """Rescan the registry and list every violated invariant."""
    out: list[str] = []
    persons, households = pop.persons, pop.households
    for pid, p in persons.items():
        if p.id != pid:
            out.append(f"person key {pid} holds id {p.id}")
        if p.age < 0:
            out.append(f"person {pid} has negative age {p.age}")
        if p.household is None:
            out.append(f"person {pid} is unhoused")
        elif p.household not in households:
            out.append(f"person {pid} points at missing household {p.household}")
        elif pid not in households[p.household].members:
            out.append(f"person {pid} not listed by household {p.household}")
        if p.partner is not None:
            q = persons.get(p.partner)
            if q is None:
                out.append(f"person {pid} has dangling partner {p.partner}")
            elif q.partner != pid:
                out.append(f"asymmetric partner link {pid} -> {p.partner}")
            elif pid < q.id:
                if p.household != q.household:
                    out.append(f"partners {pid} and {q.id} live apart")
                if p.relationship_type != q.relationship_type:
                    out.append(f"partners {pid} and {q.id} disagree on relationship type")
            if p.relationship_type is RelationshipType.NONE:
                out.append(f"person {pid} partnered with relationship type None")
        elif p.relationship_type is not RelationshipType.NONE:
            out.append(f"person {pid} has relationship type without partner")
        if p.marital_status is MaritalStatus.MARRIED and p.relationship_type is not RelationshipType.MARRIED:
            out.append(f"person {pid} is Married without a Married relationship")
        for key in ("mother", "father"):
            ref = getattr(p, key)
            if ref is not None and ref not in persons:
                out.append(f"person {pid} has dangling {key} {ref}")
    for hid, hh in households.items():
        if hh.id != hid:
            out.append(f"household key {hid} holds id {hh.id}")
        if not hh.members:
            out.append(f"household {hid} is empty")
        for pid in hh.members:
            if pid not in persons:
                out.append(f"household {hid} lists missing person {pid}")
            elif persons[pid].household != hid:
                out.append(f"household {hid} lists person {pid} who lives in {persons[pid].household}")
    for hid in pop.pending:
        if hid not in households:
            out.append(f"pending household {hid} does not exist")

    expected: dict[str, dict] = {k: {} for k in _INDEXED}
    children: dict = {}
    for p in persons.values():
        for key, value in Population._index_keys(p):
            expected[key].setdefault(value, set()).add(p.id)
        for parent in (p.mother, p.father):
            if parent is not None:
                children.setdefault(parent, set()).add(p.id)
    for key in _INDEXED:
        if expected[key] != pop._index[key]:
            out.append(f"index {key} disagrees with a full rescan")
    if children != pop._children:
        out.append("children index disagrees with a full rescan")
    by_size: dict = {}
    for hid, hh in households.items():
        if hh.members:
            by_size.setdefault(hh.size, set()).add(hid)
    if by_size != pop._hh_by_size:
        out.append("household size index disagrees with a full rescan")
    return IntegrityReport(out)
