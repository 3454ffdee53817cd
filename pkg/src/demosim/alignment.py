"""Greedy household-size alignment.

Unallocated households (leavers, people moving out after a dissolution,
immigrant families) are placed one at a time, in random order.  For each
one every possible placement is scored by the sample standard deviation
of the relative bin surpluses ``D[k] / T[k]`` that it would produce, and
the best feasible placement is applied:

* ``NEW`` (option 0): the household stays on its own, adding one
  household to bin ``min(size, n)``;
* join bin ``s`` (options ``1..n``): it merges into a uniformly chosen
  existing household whose (capped) size is ``s``; the host leaves bin
  ``s`` and re-enters bin ``min(size + s, n)``.

``D = B - T`` throughout, i.e. positive entries are surpluses.
"""

from __future__ import annotations

import enum
import statistics
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

from . import kernels
from .errors import DomainError
from .population import HouseholdId, Population, household_size_bins
from .stochastic import RngStream

NEW_HOUSEHOLD = 0
ZERO_TARGET_PENALTY = 1e6


class Semantics(str, enum.Enum):
    """How joining a household already in the open-ended top bin is scored.

    ``PAPER`` scores it as one more top-bin household; ``CONSISTENT``
    scores it as no change, which is what the move actually does to the
    bins.  The applied bookkeeping is the same under both.
    """

    PAPER = "paper"
    CONSISTENT = "consistent"


@dataclass(frozen=True)
class RankResult:
    options: tuple  # best first; 0 = new household, s = join bin s
    scores: tuple  # aligned with ``options``

    @property
    def best(self) -> int:
        return self.options[0]


def _as_semantics(semantics) -> Semantics:
    try:
        return Semantics(getattr(semantics, "value", semantics))
    except ValueError:
        raise DomainError(f"unknown semantics {semantics!r}") from None


def score(D: Sequence[float], T: Sequence[float]) -> float:
    """Sample standard deviation (n - 1 denominator) of ``D[k] / T[k]``.

    A zero target contributes 0 when its surplus is 0 and
    ``|D[k]| * 1e6`` otherwise.
    """
    if len(D) != len(T):
        raise DomainError("D and T differ in length")
    if len(D) < 2:
        raise DomainError("score needs at least two bins")
    return kernels.relative_sd(D, T)


def _tie_key(s: float) -> float:
    # scores equal up to summation order must tie, so compare at 12 digits
    return float(f"{s:.12e}")


def _sorted_result(scores: Sequence[float]) -> RankResult:
    order = sorted(range(len(scores)), key=lambda i: (_tie_key(scores[i]), i))
    return RankResult(tuple(order), tuple(scores[i] for i in order))


def rank_best_size(h_size: int, D, T, semantics=Semantics.PAPER) -> RankResult:
    """Rank the ``n + 1`` placements of a household of ``h_size`` persons."""
    sem = _as_semantics(semantics)
    if h_size < 1:
        raise DomainError("household size must be >= 1")
    if len(D) != len(T):
        raise DomainError("D and T differ in length")
    if len(D) < 2:
        raise DomainError("ranking needs at least two bins")
    scores = kernels.rank_scores(int(h_size), D, T, sem is Semantics.PAPER)
    return _sorted_result(scores)


def _oracle_ratio(d, t):
    if t == 0:
        return 0 if d == 0 else abs(d) * ZERO_TARGET_PENALTY
    return d / t


def brute_force_rank(h_size: int, D, T, semantics=Semantics.PAPER) -> RankResult:
    """Reference ranking: rebuild every hypothetical bin vector and rescore it.

    Each option is expressed as a list of (bin, delta) edits applied to a
    fresh copy of ``D``; the spread is computed with :func:`statistics.stdev`.
    """
    sem = _as_semantics(semantics)
    n = len(D)
    if h_size < 1:
        raise DomainError("household size must be >= 1")
    if n < 2 or len(T) != n:
        raise DomainError("ranking needs two or more bins of matching length")
    own_bin = min(h_size, n)
    edits = {NEW_HOUSEHOLD: [(own_bin, +1)]}
    for host_bin in range(1, n + 1):
        if host_bin == n:
            edits[host_bin] = [(n, +1)] if sem is Semantics.PAPER else []
        else:
            edits[host_bin] = [(host_bin, -1), (min(own_bin + host_bin, n), +1)]
    scores = []
    for option in range(n + 1):
        hypothetical = [float(d) for d in D]
        for b, delta in edits[option]:
            hypothetical[b - 1] += delta
        ratios = [_oracle_ratio(d, t) for d, t in zip(hypothetical, T)]
        scores.append(statistics.stdev(ratios))
    return _sorted_result(scores)


# ----------------------------------------------------------- the procedure


class _HostPool:
    """Per-bin sets of candidate host households with O(1) uniform draws."""

    def __init__(self, n: int) -> None:
        self.n = n
        self._items: list[list] = [[] for _ in range(n + 1)]
        self._pos: list[dict] = [{} for _ in range(n + 1)]

    def add(self, hid, size: int) -> None:
        b = min(size, self.n)
        self._pos[b][hid] = len(self._items[b])
        self._items[b].append(hid)

    def discard(self, hid, size: int) -> None:
        b = min(size, self.n)
        i = self._pos[b].pop(hid, None)
        if i is None:
            return
        last = self._items[b].pop()
        if last != hid:
            self._items[b][i] = last
            self._pos[b][last] = i

    def count(self, b: int) -> int:
        return len(self._items[b])

    def members(self, b: int) -> list:
        return self._items[b]

    def draw(self, b: int, rng: RngStream):
        return self._items[b][rng.randint(len(self._items[b]))]


@dataclass
class AllocationRecord:
    iteration: int
    household: HouseholdId
    size: int
    option: int  # 0 = new household, s = joined bin s
    host: Optional[HouseholdId]
    fallbacks: tuple  # options skipped for lack of a host
    d_before: tuple
    d_after: tuple


@dataclass
class AllocationLog:
    target: tuple
    initial: tuple  # D before the first allocation
    records: list = field(default_factory=list)
    semantics: str = Semantics.PAPER.value

    @property
    def final(self) -> tuple:
        return self.records[-1].d_after if self.records else self.initial

    def replay(self) -> tuple:
        """Re-derive the final D from the initial D and the logged moves."""
        n = len(self.initial)
        d = list(self.initial)
        for r in self.records:
            own = min(r.size, n)
            if r.option == NEW_HOUSEHOLD:
                d[own - 1] += 1
            else:
                # a host drawn from bin s < n has exactly s members; from the
                # top bin the merged household stays in bin n
                d[r.option - 1] -= 1
                d[min(own + r.option, n) - 1] += 1
        return tuple(d)

    def trace_rows(self):
        """Long-format rows ``(iteration, bin, surplus, relative_difference)``."""
        states = [self.initial] + [r.d_after for r in self.records]
        for it, d in enumerate(states):
            for b, (dk, tk) in enumerate(zip(d, self.target), start=1):
                rel = dk / tk if tk else 0.0
                yield it, b, dk, rel


def surplus(pop: Population, T: Sequence[float]) -> list[float]:
    bins = household_size_bins(pop, len(T))
    return [b - t for b, t in zip(bins, T)]


def align_households(
    unallocated: Sequence[HouseholdId],
    pop: Population,
    T: Sequence[float],
    rng: RngStream,
    semantics=Semantics.PAPER,
    host_filter: Optional[Callable[[Population, HouseholdId, HouseholdId], bool]] = None,
    on_step: Optional[Callable[[Population, list, AllocationRecord], None]] = None,
) -> AllocationLog:
    """Place every unallocated household as a new household or by merging.

    ``unallocated`` households must already exist in ``pop`` (usually
    flagged pending).  They are confirmed or merged in place; the log
    records every decision and the surplus vector after it.
    """
    sem = _as_semantics(semantics)
    T = [float(t) for t in T]
    n = len(T)
    if n < 2:
        raise DomainError("alignment needs at least two size bins")
    if any(t < 0 for t in T):
        raise DomainError("targets must be non-negative")
    queue = [h for h in dict.fromkeys(unallocated) if h in pop.households]
    for h in queue:
        pop.mark_pending(h)

    hosts = _HostPool(n)
    for hid in sorted(pop.households):
        if hid not in pop.pending:
            hosts.add(hid, pop.households[hid].size)
    D = surplus(pop, T)
    log = AllocationLog(tuple(T), tuple(D), semantics=sem.value)

    order = rng.permutation(queue)
    for it, hid in enumerate(order, start=1):
        size = pop.households[hid].size
        x = min(size, n)
        before = tuple(D)
        ranking = rank_best_size(size, D, T, sem)
        fallbacks = []
        host = None
        chosen = NEW_HOUSEHOLD
        for option in ranking.options:
            if option == NEW_HOUSEHOLD:
                chosen = option
                break
            if host_filter is None:
                if hosts.count(option) == 0:
                    fallbacks.append(option)
                    continue
                host = hosts.draw(option, rng)
            else:
                candidates = [k for k in hosts.members(option) if host_filter(pop, hid, k)]
                if not candidates:
                    fallbacks.append(option)
                    continue
                candidates.sort()
                host = candidates[rng.randint(len(candidates))]
            chosen = option
            break

        if chosen == NEW_HOUSEHOLD:
            pop.confirm(hid)
            hosts.add(hid, size)
            D[x - 1] += 1
        else:
            host_size = pop.households[host].size
            hosts.discard(host, host_size)
            pop.merge_households(hid, host)
            j = min(size + host_size, n)
            D[chosen - 1] -= 1
            D[j - 1] += 1
            hosts.add(host, pop.households[host].size)
        rec = AllocationRecord(it, hid, size, chosen, host, tuple(fallbacks), before, tuple(D))
        log.records.append(rec)
        if on_step is not None:
            on_step(pop, D, rec)
    return log


# ------------------------------------------------- standalone problem files


@dataclass
class AlignmentProblem:
    """Counts by size bin: households to place, existing stock and target."""

    unallocated: list
    existing: list
    target: list

    @property
    def n_bins(self) -> int:
        return len(self.target)


PROBLEM_KINDS = ("unallocated", "existing_bins", "target")


def load_problem(path) -> AlignmentProblem:
    """Read a ``kind,bin,count`` CSV; bins are 1-based and the last is open-ended."""
    import csv

    from .errors import ConfigError

    rows: dict[str, dict[int, float]] = {k: {} for k in PROBLEM_KINDS}
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.DictReader(line for line in fh if not line.startswith("#"))
            if reader.fieldnames is None or set(reader.fieldnames) != {"kind", "bin", "count"}:
                raise ConfigError(f"{path}: expected columns kind,bin,count")
            for row in reader:
                kind = row["kind"].strip()
                if kind not in rows:
                    raise ConfigError(f"{path}: unknown kind {kind!r}")
                b = int(row["bin"])
                if b < 1:
                    raise ConfigError(f"{path}: bins start at 1")
                rows[kind][b] = float(row["count"])
    except (OSError, ValueError) as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    n = max((max(r) for r in rows.values() if r), default=0)
    if n < 2:
        raise ConfigError(f"{path}: need at least two bins")
    vec = {k: [rows[k].get(b, 0.0) for b in range(1, n + 1)] for k in PROBLEM_KINDS}
    for k in ("unallocated", "existing_bins"):
        if any(v < 0 or v != int(v) for v in vec[k]):
            raise ConfigError(f"{path}: {k} counts must be non-negative integers")
    if any(v < 0 for v in vec["target"]):
        raise ConfigError(f"{path}: targets must be non-negative")
    return AlignmentProblem(
        [int(v) for v in vec["unallocated"]],
        [int(v) for v in vec["existing_bins"]],
        vec["target"],
    )


def build_problem_population(problem: AlignmentProblem) -> tuple[Population, list]:
    """Materialise a problem: existing households of size ``k`` per bin and
    pending unallocated ones.  Top-bin households get exactly ``n`` members."""
    from .population import Sex

    pop = Population()
    sexes = (Sex.FEMALE, Sex.MALE)

    def make(size: int):
        pids = [pop.create_person(age=30, sex=sexes[i % 2]) for i in range(size)]
        return pop.create_household(pids)

    for b, count in enumerate(problem.existing, start=1):
        for _ in range(count):
            make(b)
    pending = []
    for b, count in enumerate(problem.unallocated, start=1):
        for _ in range(count):
            hid = make(b)
            pop.mark_pending(hid)
            pending.append(hid)
    return pop, pending


def relative_differences(bins: Sequence[float], target: Sequence[float]) -> list[float]:
    return [(b - t) / t if t else 0.0 for b, t in zip(bins, target)]
