from __future__ import annotations

import contextlib
import copy
from importlib import resources
from pathlib import Path

import pytest

from demosim.population import MaritalStatus, Population, RelationshipType, Sex
from demosim.stochastic import LogisticModel, ModelRegistry, RateTable

DATA = Path(str(resources.files("demosim") / "data"))
TOY = DATA / "toy"


@pytest.fixture(scope="session")
def data_dir() -> Path:
    return DATA


@pytest.fixture(scope="session")
def toy_dir() -> Path:
    return TOY


@pytest.fixture(scope="session")
def models() -> ModelRegistry:
    return ModelRegistry.load(DATA / "models", DATA / "rates")


def add_family(pop: Population, n_children: int = 2, married: bool = True, father_age: int = 40,
               mother_age: int = 38):
    """Couple plus children in one household; returns (household, father, mother, children)."""
    status = MaritalStatus.MARRIED if married else MaritalStatus.NEVER_MARRIED
    dad = pop.create_person(age=father_age, sex=Sex.MALE, marital_status=status)
    mum = pop.create_person(age=mother_age, sex=Sex.FEMALE, marital_status=status)
    kids = [
        pop.create_person(age=5 + 2 * i, sex=Sex.FEMALE if i % 2 else Sex.MALE, mother=mum, father=dad)
        for i in range(n_children)
    ]
    hid = pop.create_household([dad, mum, *kids])
    kind = RelationshipType.MARRIED if married else RelationshipType.COHABITING
    pop.link_partners(dad, mum, kind)
    return hid, dad, mum, kids


def add_single(pop: Population, age: int = 30, sex: Sex = Sex.MALE, **attrs):
    pid = pop.create_person(age=age, sex=sex, **attrs)
    return pop.create_household([pid]), pid


@pytest.fixture
def family_pop() -> Population:
    pop = Population()
    add_family(pop)
    add_family(pop, n_children=0, married=False, father_age=28, mother_age=27)
    add_single(pop, 70, Sex.FEMALE, marital_status=MaritalStatus.WIDOWED)
    return pop


def ipu_toy(with_households: bool = True):
    """Two-household IPU toy: A = {adult}, B = {adult, child}.

    Targets are adults 3, children 1 and, if requested, households 2.
    Adults are aged 30 and the child 5, so age band separates them.
    """
    from demosim.population import Education, Employment, StudentStatus
    from demosim.synthesis import Control, ReferenceSample, SampleHousehold

    def person(rel, age):
        return {
            "relationship": rel, "age": age, "sex": Sex.MALE,
            "marital_status": MaritalStatus.NEVER_MARRIED if age >= 15 else MaritalStatus.NOT_APPLICABLE,
            "employment": Employment.EMPLOYED if age >= 15 else Employment.NOT_APPLICABLE,
            "education": Education.BACHELOR if age >= 15 else Education.NOT_APPLICABLE,
            "student_status": StudentStatus.NOT_APPLICABLE,
        }

    sample = ReferenceSample([
        SampleHousehold(1, (person("Reference", 30),)),
        SampleHousehold(2, (person("Reference", 30), person("Child", 5))),
    ])
    controls = [Control("adults_children", "person", ("age_band",), {("30-34",): 3.0, ("5-9",): 1.0})]
    if with_households:
        controls.append(Control("households", "household", (), {(): 2.0}))
    return sample, controls


ALWAYS, NEVER = 50.0, -50.0  # linear predictors that saturate the logistic


def forced(models, **settings):
    """Copy of ``models`` where each named sub-model has a constant linear predictor."""
    reg = copy.deepcopy(models)
    for name, intercept in settings.items():
        if name == "mortality":
            t = reg.rates["mortality"]
            reg.rates["mortality"] = RateTable(t.key_columns, {k: intercept for k in t.values}, t.name)
            continue
        reg.logistic[name] = {
            g: LogisticModel.from_dict({"intercept": intercept}, g) for g in reg.logistic[name]
        }
    return reg


# ------------------------------------------------------------ acceptance

ACCEPTANCE: dict = {}  # criterion number -> (passed, detail)


@contextlib.contextmanager
def criterion(number: int, title: str):
    """Record one pass/fail line for an acceptance criterion.

    The body fills ``notes`` and sets ``notes["ok"]``; an exception counts
    as a failure and propagates.
    """
    notes: dict = {"ok": False, "detail": ""}
    try:
        yield notes
    except BaseException as exc:
        notes["ok"] = False
        notes["detail"] = notes["detail"] or f"{type(exc).__name__}: {exc}"
        raise
    finally:
        ACCEPTANCE[number] = (notes["ok"], f"{title}: {notes['detail']}")
    assert notes["ok"], notes["detail"]


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:2d} {'PASS' if ok else 'FAIL'}  {detail}")
