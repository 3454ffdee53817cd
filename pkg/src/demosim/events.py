"""Annual life-course events.

Each event picks its eligible agents deterministically (sorted by id),
draws outcomes from its own labelled random substream and, where people
are displaced (dissolutions, leaving home), pushes the new one-person
households onto ``ctx.queue`` for the alignment step.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Optional

from . import kernels
from .errors import ConfigError, ModelError
from .population import (
    DEGREE_LEVELS,
    Education,
    Employment,
    HouseholdId,
    MaritalStatus,
    PersonId,
    Population,
    RelationshipType,
    Sex,
    age_band,
)
from .stochastic import (
    ModelRegistry,
    RngStream,
    bernoulli,
    categorical,
    logistic_prob,
    multinomial_probs,
    rate_lookup,
    weighted_sample,
)

logger = logging.getLogger(__name__)

PREVIOUSLY_MARRIED = frozenset(
    {MaritalStatus.SEPARATED, MaritalStatus.DIVORCED, MaritalStatus.WIDOWED}
)
FERTILITY_BANDS = ((15, 19), (20, 24), (25, 29), (30, 34), (35, 39), (40, 44), (45, 49))


@dataclass
class EventParams:
    fertility_min_age: int = 18
    fertility_max_age: int = 49
    union_min_age: int = 18
    leavehome_min_age: int = 18
    leavehome_max_age: int = 40
    socioeconomic_min_age: int = 16
    orphan_age: int = 15
    dependant_max_age: int = 17
    choice_set_size: int = 30
    partner_lambda: float = 0.2
    partner_mu: float = 2.0
    custody_to_mother_p: float = 0.85
    dissolution_sex: str = "female"

    def __post_init__(self) -> None:
        if self.dissolution_sex not in ("female", "male"):
            raise ConfigError("dissolution_sex must be 'female' or 'male'")
        if not 0.0 <= self.custody_to_mother_p <= 1.0:
            raise ConfigError("custody_to_mother_p must be a probability")
        if self.partner_lambda <= 0:
            raise ConfigError("partner_lambda must be positive")
        if self.choice_set_size < 1:
            raise ConfigError("choice_set_size must be >= 1")


@dataclass
class EventContext:
    pop: Population
    models: ModelRegistry
    rng: RngStream  # already labelled with the cycle
    year: int
    params: EventParams = field(default_factory=EventParams)
    queue: list = field(default_factory=list)
    occurrences: dict = field(default_factory=dict)
    diagnostics: dict = field(default_factory=dict)

    def stream(self, event: str, phase: str = "main") -> RngStream:
        return self.rng.substream(event, phase)

    def count(self, name: str, n: int) -> None:
        self.occurrences[name] = self.occurrences.get(name, 0) + n

    def enqueue_alone(self, pid: PersonId) -> HouseholdId:
        """Detach ``pid`` into a pending one-person household awaiting alignment."""
        hid = self.pop.create_household([pid])
        self.pop.mark_pending(hid)
        self.queue.append(hid)
        return hid


# ------------------------------------------------------------- covariates


def coresident_children(pop: Population, pid: PersonId) -> list[PersonId]:
    hh = pop.persons[pid].household
    return [c for c in pop.children_of(pid) if pop.persons[c].household == hh]


def person_covariates(pop: Population, pid: PersonId) -> dict[str, float]:
    """Every covariate any shipped model may ask for, for one person."""
    p = pop.persons[pid]
    kids = [pop.persons[c] for c in pop.children_of(pid)]
    n_kids = len(kids)
    cov = {
        "intercept": 1.0,
        "age": float(p.age),
        "age2": float(p.age * p.age),
        "employed": float(p.employment is Employment.EMPLOYED),
        "holds_degree": float(p.education in DEGREE_LEVELS),
        "has_one_child": float(n_kids == 1),
        "has_two_plus_children": float(n_kids >= 2),
        "has_children": float(n_kids > 0),
        "age_youngest_child": float(min(k.age for k in kids)) if kids else 0.0,
    }
    parity = "no_child" if n_kids == 0 else "one_child" if n_kids == 1 else "two_plus_children"
    for lo, hi in FERTILITY_BANDS:
        for par in ("no_child", "one_child", "two_plus_children"):
            cov[f"age{lo}_{hi}_{par}"] = float(lo <= p.age <= hi and par == parity)
    return cov


def _sex_label(sex: Sex) -> str:
    return "male" if sex is Sex.MALE else "female"


def _couple(pop: Population, a: PersonId) -> tuple[PersonId, PersonId]:
    """(male, female) ordering of a couple; lower id first when same-sex."""
    b = pop.persons[a].partner
    pa, pb = pop.persons[a], pop.persons[b]
    if pa.sex is Sex.MALE and pb.sex is Sex.FEMALE:
        return a, b
    if pb.sex is Sex.MALE and pa.sex is Sex.FEMALE:
        return b, a
    return (a, b) if a < b else (b, a)


def _couples(pop: Population, kind: RelationshipType) -> list[tuple[PersonId, PersonId]]:
    seen = set()
    out = []
    for pid in sorted(pop.persons):
        p = pop.persons[pid]
        if p.partner is None or p.relationship_type is not kind or pid in seen:
            continue
        seen.update((pid, p.partner))
        out.append(_couple(pop, pid))
    return out


# ----------------------------------------------------------------- ageing


def ageing(ctx: EventContext) -> int:
    """Everyone gets one year older; NotApplicable marital status becomes
    NeverMarried at the adult threshold (``orphan_age``, 15)."""
    pop = ctx.pop
    for pid in sorted(pop.persons):
        p = pop.persons[pid]
        changes = {"age": p.age + 1}
        if p.marital_status is MaritalStatus.NOT_APPLICABLE and p.age + 1 >= ctx.params.orphan_age:
            changes["marital_status"] = MaritalStatus.NEVER_MARRIED
        pop.update_person(pid, **changes)
    return len(pop.persons)


# ------------------------------------------------------------------ birth


def fertility_group(pop: Population, pid: PersonId) -> str:
    rel = pop.persons[pid].relationship_type
    if rel is RelationshipType.MARRIED:
        return "married"
    if rel is RelationshipType.COHABITING:
        return "cohabiting"
    return "single"


def _distribution(ctx: EventContext, table: str, column: str) -> dict[str, float]:
    t = ctx.models.rate(table)
    if t.key_columns != (column,):
        raise ModelError(f"rate table {table} must be keyed by {column!r}")
    return {k[0]: v for k, v in t.values.items()}


def birth(ctx: EventContext) -> int:
    pop, prm = ctx.pop, ctx.params
    rng = ctx.stream("birth", "fertility")
    mothers = []
    for pid in sorted(pop.persons):
        p = pop.persons[pid]
        if p.sex is not Sex.FEMALE or not prm.fertility_min_age <= p.age <= prm.fertility_max_age:
            continue
        model = ctx.models.model("fertility", fertility_group(pop, pid))
        if bernoulli(logistic_prob(model, person_covariates(pop, pid)), rng):
            mothers.append(pid)
    if not mothers:
        return 0
    multiplicity = _distribution(ctx, "birth_multiplicity", "multiplicity")
    sex_ratio = _distribution(ctx, "newborn_sex", "sex")
    rng_mult = ctx.stream("birth", "multiplicity")
    rng_sex = ctx.stream("birth", "sex")
    born = 0
    for mid in mothers:
        mother = pop.persons[mid]
        n_babies = int(categorical(multiplicity, rng_mult))
        for _ in range(n_babies):
            sex = Sex(categorical(sex_ratio, rng_sex))
            pop.create_person(
                age=0,
                sex=sex,
                mother=mid,
                father=mother.partner,
                household=mother.household,
            )
            born += 1
    ctx.count("birth_events", len(mothers))
    return born


# ------------------------------------------------------------------ death


def death(ctx: EventContext) -> int:
    pop = ctx.pop
    rng = ctx.stream("death")
    table = ctx.models.rate("mortality")
    dying = []
    for pid in sorted(pop.persons):
        p = pop.persons[pid]
        q = rate_lookup(table, (age_band(p.age), p.sex.value))
        if bernoulli(q, rng):
            dying.append(pid)
    touched = set()
    for pid in dying:
        if pid not in pop.persons:
            continue
        p = pop.persons[pid]
        if p.partner is not None:
            partner = p.partner
            was_married = p.relationship_type is RelationshipType.MARRIED
            pop.unlink_partners(pid, partner)
            if was_married:
                pop.update_person(partner, marital_status=MaritalStatus.WIDOWED)
        touched.add(p.household)
        pop.remove_person(pid)
    orphans = 0
    for hid in sorted(h for h in touched if h in pop.households):
        members = pop.households[hid].members
        if all(pop.persons[m].age < ctx.params.orphan_age for m in members):
            orphans += len(pop.remove_household(hid))
    ctx.count("orphan_removal", orphans)
    return len(dying)


# ------------------------------------------------------- partner market


def partner_score(age_a: float, age_b: float, lam: float, mu: float) -> float:
    """``exp(-lam * |age_a - age_b - mu|)``; ``a`` is the male partner."""
    return kernels.partner_weights(age_a, [age_b], lam, mu, True)[0]


@dataclass
class MatchMarket:
    males: list
    females: list
    ages: dict  # pid -> age
    choice_set_size: int = 30
    lam: float = 0.2
    mu: float = 2.0
    eligible: dict = field(default_factory=dict)  # sex label -> {pid: entry probability}
    trimmed: int = 0


def balance_pools(market: MatchMarket, transition_probs: dict, population: Optional[Population], rng: RngStream) -> None:
    """Top up the smaller pool from eligible non-entrants, weighted by their
    entry probabilities; trim the larger pool if there are too few."""
    nm, nf = len(market.males), len(market.females)
    if nm == nf:
        return
    short, long_ = (market.males, market.females) if nm < nf else (market.females, market.males)
    need = abs(nm - nf)
    in_pool = set(short)
    cands = sorted(pid for pid, p in transition_probs.items() if pid not in in_pool and p > 0)
    if cands:
        take = min(need, len(cands))
        short.extend(
            weighted_sample(cands, [transition_probs[c] for c in cands], take, True, rng)
        )
        need -= take
    if need:
        drop = set(rng.permutation(range(len(long_)))[:need])
        kept = [pid for i, pid in enumerate(long_) if i not in drop]
        long_[:] = kept
        market.trimmed += need
        logger.info("partner market short of eligibles; trimmed %d seekers", need)


def _floyd_sample(n: int, k: int, rng: RngStream) -> list[int]:
    chosen: dict[int, None] = {}
    for j in range(n - k, n):
        t = rng.randint(j + 1)
        chosen[j if t in chosen else t] = None
    return sorted(chosen)


def run_market(market: MatchMarket, rng: RngStream) -> list[tuple[PersonId, PersonId]]:
    """Pair seekers until one side runs out; returns ``(male, female)`` pairs."""
    pools = {True: list(market.males), False: list(market.females)}
    pos = {True: {p: i for i, p in enumerate(pools[True])}, False: {p: i for i, p in enumerate(pools[False])}}

    def remove(is_male: bool, pid) -> None:
        items, index = pools[is_male], pos[is_male]
        i = index.pop(pid)
        last = items.pop()
        if last != pid:
            items[i] = last
            index[last] = i

    male_set = set(market.males)
    seekers = rng.permutation(list(market.males) + list(market.females))
    pairs = []
    for seeker in seekers:
        is_male = seeker in male_set
        if seeker not in pos[is_male]:
            continue
        other = pools[not is_male]
        if not other:
            break
        k = min(market.choice_set_size, len(other))
        cands = [other[i] for i in _floyd_sample(len(other), k, rng)]
        weights = kernels.partner_weights(
            market.ages[seeker], [market.ages[c] for c in cands], market.lam, market.mu, is_male
        )
        if sum(weights) > 0:
            pick = weighted_sample(cands, weights, 1, rng=rng)[0]
        else:
            pick = rng.choice(cands)
        remove(is_male, seeker)
        remove(not is_male, pick)
        pairs.append((seeker, pick) if is_male else (pick, seeker))
    market.males[:] = pools[True]
    market.females[:] = pools[False]
    return pairs


def _union_group(p) -> str:
    status = "never_married" if p.marital_status is MaritalStatus.NEVER_MARRIED else "previously_married"
    return f"{status}_{_sex_label(p.sex)}"


def _dependants(pop: Population, pid: PersonId, max_age: int) -> list[PersonId]:
    return [
        c for c in coresident_children(pop, pid)
        if pop.persons[c].partner is None and pop.persons[c].age <= max_age
    ]


def form_union(pop: Population, male: PersonId, female: PersonId, kind: RelationshipType, dependant_max_age: int) -> HouseholdId:
    """Couple plus their co-resident dependent children move into a new household."""
    members = [male, female]
    members += _dependants(pop, male, dependant_max_age)
    members += _dependants(pop, female, dependant_max_age)
    hid = pop.create_household(members)
    pop.link_partners(male, female, kind)
    return hid


def union_market(ctx: EventContext, sub_model: str, kind: RelationshipType) -> int:
    pop, prm = ctx.pop, ctx.params
    rng = ctx.stream(sub_model, "entry")
    probs: dict[str, dict] = {"male": {}, "female": {}}
    pools: dict[str, list] = {"male": [], "female": []}
    for pid in sorted(pop.persons):
        p = pop.persons[pid]
        if p.partner is not None or p.age < prm.union_min_age:
            continue
        if p.marital_status is not MaritalStatus.NEVER_MARRIED and p.marital_status not in PREVIOUSLY_MARRIED:
            continue
        prob = logistic_prob(ctx.models.model(sub_model, _union_group(p)), person_covariates(pop, pid))
        sex = _sex_label(p.sex)
        probs[sex][pid] = prob
        if bernoulli(prob, rng):
            pools[sex].append(pid)
    market = MatchMarket(
        pools["male"], pools["female"],
        ages={},
        choice_set_size=prm.choice_set_size, lam=prm.partner_lambda, mu=prm.partner_mu,
        eligible=probs,
    )
    short = "male" if len(market.males) < len(market.females) else "female"
    balance_pools(market, probs[short], pop, ctx.stream(sub_model, "balance"))
    market.ages = {pid: pop.persons[pid].age for pid in market.males + market.females}
    pairs = run_market(market, ctx.stream(sub_model, "match"))
    ctx.diagnostics.setdefault("market_leftover", []).append(
        (sub_model, len(market.males), len(market.females))
    )
    for male, female in pairs:
        form_union(pop, male, female, kind, prm.dependant_max_age)
    return len(pairs)


# ---------------------------------------------------- marriage/cohabitation


def marriage(ctx: EventContext) -> int:
    pop = ctx.pop
    rng = ctx.stream("marriage", "direct")
    direct = 0
    for male, female in _couples(pop, RelationshipType.COHABITING):
        m = pop.persons[male]
        group = "never_married_male" if m.marital_status is MaritalStatus.NEVER_MARRIED else "previously_married_male"
        p = logistic_prob(ctx.models.model("marriage", group), person_covariates(pop, male))
        if bernoulli(p, rng):
            pop.link_partners(male, female, RelationshipType.MARRIED)
            direct += 1
    indirect = union_market(ctx, "marriage", RelationshipType.MARRIED)
    ctx.count("direct_marriage", direct)
    ctx.count("indirect_marriage", indirect)
    return direct + indirect


def cohabitation(ctx: EventContext) -> int:
    return union_market(ctx, "cohabitation", RelationshipType.COHABITING)


# ------------------------------------------------------ divorce / break-up


def _dissolve(ctx: EventContext, kind: RelationshipType, sub_model: str) -> int:
    pop, prm = ctx.pop, ctx.params
    rng = ctx.stream(sub_model, "decision")
    rng_custody = ctx.stream(sub_model, "custody")
    couples = _couples(pop, kind)
    # couples, not persons: someone divorced earlier in the cycle may
    # legitimately be in a new cohabiting couple by the time breakup runs
    ctx.diagnostics.setdefault(f"{sub_model}_eligible", set()).update(couples)
    n = 0
    for male, female in couples:
        trigger = female if prm.dissolution_sex == "female" else male
        kids = sorted(set(coresident_children(pop, male)) | set(coresident_children(pop, female)))
        cov = person_covariates(pop, trigger)
        cov["has_children"] = float(bool(kids))
        p = logistic_prob(ctx.models.model(sub_model, prm.dissolution_sex), cov)
        if not bernoulli(p, rng):
            continue
        if kids:
            leaver = male if bernoulli(prm.custody_to_mother_p, rng_custody) else female
        else:
            leaver = male
        pop.unlink_partners(male, female)
        if kind is RelationshipType.MARRIED:
            pop.update_person(male, marital_status=MaritalStatus.DIVORCED)
            pop.update_person(female, marital_status=MaritalStatus.DIVORCED)
        ctx.enqueue_alone(leaver)
        n += 1
    return n


def divorce(ctx: EventContext) -> int:
    return _dissolve(ctx, RelationshipType.MARRIED, "divorce")


def breakup(ctx: EventContext) -> int:
    return _dissolve(ctx, RelationshipType.COHABITING, "breakup")


# ----------------------------------------------------- leaving home


def lives_with_parent(pop: Population, pid: PersonId) -> bool:
    p = pop.persons[pid]
    for parent in (p.mother, p.father):
        if parent is not None and pop.persons[parent].household == p.household:
            return True
    return False


def leave_parental_home(ctx: EventContext) -> int:
    pop, prm = ctx.pop, ctx.params
    rng = ctx.stream("leavehome")
    leavers = []
    for pid in sorted(pop.persons):
        p = pop.persons[pid]
        if p.partner is not None or p.marital_status is not MaritalStatus.NEVER_MARRIED:
            continue
        if not prm.leavehome_min_age <= p.age <= prm.leavehome_max_age:
            continue
        if not lives_with_parent(pop, pid):
            continue
        model = ctx.models.model("leavehome", _sex_label(p.sex))
        if bernoulli(logistic_prob(model, person_covariates(pop, pid)), rng):
            leavers.append(pid)
    for pid in leavers:
        ctx.enqueue_alone(pid)
    return len(leavers)


# -------------------------------------------------- socioeconomic update


def _lagged(state, enum_cls) -> dict[str, float]:
    cov = {"intercept": 1.0}
    for member in enum_cls:
        cov[f"lag_{member.value}"] = float(state is member)
    return cov


def update_socioeconomic(ctx: EventContext) -> int:
    """Redraw education, then employment, from lagged-state multinomial models."""
    pop = ctx.pop
    edu_model = ctx.models.multinomial_model("education")
    emp_model = ctx.models.multinomial_model("employment")
    rng_edu = ctx.stream("socioeconomic", "education")
    rng_emp = ctx.stream("socioeconomic", "employment")
    changed = 0
    for pid in sorted(pop.persons):
        p = pop.persons[pid]
        if p.age < ctx.params.socioeconomic_min_age:
            continue
        edu = Education(categorical(multinomial_probs(edu_model, _lagged(p.education, Education)), rng_edu))
        emp = Employment(categorical(multinomial_probs(emp_model, _lagged(p.employment, Employment)), rng_emp))
        if edu is not p.education or emp is not p.employment:
            changed += 1
            pop.update_person(pid, education=edu, employment=emp)
    return changed


EVENTS: dict[str, Callable[[EventContext], int]] = {
    "ageing": ageing,
    "birth": birth,
    "death": death,
    "marriage": marriage,
    "divorce": divorce,
    "cohabitation": cohabitation,
    "breakup": breakup,
    "leavehome": leave_parental_home,
    "socioeconomic": update_socioeconomic,
}
