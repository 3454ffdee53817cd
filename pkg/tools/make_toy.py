"""Regenerate the shipped toy fixture under src/demosim/data/toy.

The reference sample is drawn from fixed household archetypes.  Controls
are the weighted marginals of the sample under a hidden weight vector,
so the IPU problem is feasible by construction.  The baseline snapshot
is the synthesised population itself.

    python3 tools/make_toy.py
"""

from __future__ import annotations

import csv
import shutil
from pathlib import Path

from demosim.population import AGE_BANDS, MigrantType, age_band
from demosim.snapshot import write_snapshot
from demosim.stochastic import RngStream
from demosim.synthesis import (
    expand_population,
    ipu_fit,
    link_relationships,
    read_controls,
    read_sample,
    trs_integerise,
)

ROOT = Path(__file__).resolve().parents[1] / "src" / "demosim" / "data"
TOY = ROOT / "toy"
N_SAMPLE_HOUSEHOLDS = 80
SEED = 2016

EDU = ["Year12OrBelow", "Certificate", "AdvancedDiplomaDiploma", "Bachelor"]
WORK = ["Employed", "Employed", "Employed", "Unemployed", "NotInLabourForce"]


def adult(rng, rel, age, sex, marital):
    return {
        "relationship": rel, "age": age, "sex": sex, "marital_status": marital,
        "employment": "NotInLabourForce" if age >= 67 else rng.choice(WORK),
        "education": rng.choice(EDU),
        "student_status": "FullTime" if age < 22 else "NotApplicable",
    }


def child(rng, age):
    return {
        "relationship": "Child", "age": age, "sex": rng.choice(["Male", "Female"]),
        "marital_status": "NotApplicable" if age < 15 else "NeverMarried",
        "employment": "NotApplicable" if age < 15 else rng.choice(WORK),
        "education": "NotApplicable" if age < 15 else "Year12OrBelow",
        "student_status": "FullTime" if 5 <= age < 22 else "NotApplicable",
    }


def household(rng, kind):
    a = 20 + rng.randint(50)
    if kind == "lone":
        return [adult(rng, "Reference", a + rng.randint(20), rng.choice(["Male", "Female"]),
                      rng.choice(["NeverMarried", "Divorced", "Widowed"]))]
    if kind in ("married", "cohab", "family", "cohab_family"):
        spouse = "Spouse" if kind in ("married", "family") else "Partner"
        marital = "Married" if spouse == "Spouse" else "NeverMarried"
        ref_age = 25 + rng.randint(30) if "family" in kind else a
        rows = [adult(rng, "Reference", ref_age, "Male", marital),
                adult(rng, spouse, max(18, ref_age - rng.randint(5)), "Female", marital)]
        if "family" in kind:
            for _ in range(1 + rng.randint(4)):
                rows.append(child(rng, rng.randint(min(18, ref_age - 19))))
        return rows
    if kind == "lone_parent":
        ref_age = 25 + rng.randint(25)
        rows = [adult(rng, "Reference", ref_age, "Female", rng.choice(["Divorced", "NeverMarried"]))]
        for _ in range(1 + rng.randint(3)):
            rows.append(child(rng, rng.randint(min(18, ref_age - 19))))
        return rows
    if kind == "group":
        return [adult(rng, "Reference" if i == 0 else "Unrelated", 19 + rng.randint(12),
                      rng.choice(["Male", "Female"]), "NeverMarried") for i in range(2 + rng.randint(3))]
    if kind == "multigen":
        ref_age = 35 + rng.randint(15)
        rows = [adult(rng, "Reference", ref_age, "Male", "Married"),
                adult(rng, "Spouse", ref_age - 2, "Female", "Married"),
                child(rng, 3 + rng.randint(10)),
                adult(rng, "Parent", ref_age + 27, "Female", "Widowed")]
        return rows
    raise ValueError(kind)


KINDS = ["lone"] * 5 + ["married"] * 3 + ["cohab"] * 2 + ["family"] * 5 + ["cohab_family"] \
    + ["lone_parent"] * 2 + ["group"] + ["multigen"]


def write_sample(rng) -> list[list[dict]]:
    households = [household(rng, rng.choice(KINDS)) for _ in range(N_SAMPLE_HOUSEHOLDS)]
    with open(TOY / "sample.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["household_id", "person_id", "relationship", "age", "sex", "marital_status",
                    "employment", "education", "student_status", "weight"])
        pid = 1
        for hid, rows in enumerate(households, start=1):
            for r in rows:
                w.writerow([hid, pid, r["relationship"], r["age"], r["sex"], r["marital_status"],
                            r["employment"], r["education"], r["student_status"], 1])
                pid += 1
    return households


def write_controls(rng, households) -> None:
    hidden = [2.0 + 6.0 * rng.random() for _ in households]
    ctl = TOY / "controls"
    if ctl.exists():
        shutil.rmtree(ctl)
    ctl.mkdir()
    specs = {
        "person_age_sex_marital": ("marital_status",),
        "person_age_sex_employment": ("employment",),
        "person_age_sex_student": ("student_status",),
    }
    for name, extra in specs.items():
        cells: dict = {}
        for w, rows in zip(hidden, households):
            for r in rows:
                key = (age_band(r["age"]), r["sex"]) + tuple(r[c] for c in extra)
                cells[key] = cells.get(key, 0.0) + w
        with open(ctl / f"{name}.csv", "w", newline="", encoding="utf-8") as fh:
            out = csv.writer(fh, lineterminator="\n")
            out.writerow(["age_band", "sex", *extra, "target"])
            for key in sorted(cells, key=lambda k: (AGE_BANDS.index(k[0]),) + k[1:]):
                out.writerow([*key, f"{cells[key]:.4f}"])
    sizes: dict = {}
    for w, rows in zip(hidden, households):
        label = str(len(rows)) if len(rows) < 6 else "6+"
        sizes[label] = sizes.get(label, 0.0) + w
    with open(ctl / "household_size.csv", "w", newline="", encoding="utf-8") as fh:
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(["household_size", "target"])
        for label in sorted(sizes):
            out.writerow([label, f"{sizes[label]:.4f}"])


def write_baseline(rng):
    sample = read_sample(TOY / "sample.csv")
    fit = ipu_fit(sample, read_controls(TOY / "controls"))
    counts = trs_integerise(fit.weights, rng)
    pop, codes = expand_population(sample, counts)
    link_relationships(pop, codes)
    write_snapshot(pop, TOY / "baseline")
    return pop


def write_migrants(rng) -> None:
    pool = TOY / "migrants"
    households = [household(rng, rng.choice(KINDS)) for _ in range(24)]
    sample_path = pool / "sample.csv"
    pool.mkdir(exist_ok=True)
    with open(sample_path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["household_id", "person_id", "relationship", "age", "sex", "marital_status",
                    "employment", "education", "student_status"])
        pid = 1
        for hid, rows in enumerate(households, start=1):
            for r in rows:
                w.writerow([hid, pid, r["relationship"], r["age"], r["sex"], r["marital_status"],
                            r["employment"], r["education"], r["student_status"]])
                pid += 1
    sample = read_sample(sample_path)
    pop, codes = expand_population(sample, [1] * len(households))
    link_relationships(pop, codes)
    write_snapshot(pop, pool)
    sample_path.unlink()
    types = list(MigrantType)
    with open(pool / "weights.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["household_id", "weight", "migrant_type"])
        for hid in sorted(pop.households):
            w.writerow([hid, f"{0.5 + 2 * rng.random():.3f}", types[(hid - 1) % 3].value])


def write_schedules(pop) -> None:
    with open(TOY / "migration_schedule.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["year", "type", "direction", "persons", "conv_rate"])
        for year in range(2017, 2027):
            w.writerow([year, "InterRegional", "in", 12, 0.4])
            w.writerow([year, "OverseasTemporary", "in", 8, 0.5])
            w.writerow([year, "OverseasPermanent", "in", 10, 0.35])
    with open(TOY / "emigration_target.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["year", "age_band", "sex", "count"])
        for year in range(2017, 2027):
            for band in ("20-24", "25-29", "30-34", "35-39"):
                for sex in ("Male", "Female"):
                    w.writerow([year, band, sex, 2])
            for band in ("0-4", "5-9"):
                for sex in ("Male", "Female"):
                    w.writerow([year, band, sex, 1])
    from demosim.population import household_size_bins

    bins = household_size_bins(pop, 6)
    with open(TOY / "targets.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["year", "bin", "count"])
        for year, growth in ((2016, 1.0), (2021, 1.04), (2026, 1.08)):
            for b, c in enumerate(bins, start=1):
                w.writerow([year, b, round(c * growth)])


def main() -> None:
    TOY.mkdir(parents=True, exist_ok=True)
    rng = RngStream(SEED, ("toy",))
    households = write_sample(rng.substream("sample"))
    write_controls(rng.substream("controls"), households)
    pop = write_baseline(rng.substream("trs"))
    write_migrants(rng.substream("migrants"))
    write_schedules(pop)
    print(f"baseline: {len(pop.persons)} persons in {len(pop.households)} households")


if __name__ == "__main__":
    main()
