"""Compiled kernels against the pure-Python fallback.

    python3 benchmarks/bench_kernels.py [--repeat 5]

Times each kernel on identical inputs, then one end-to-end alignment
pass and one toy simulation year under each backend (separate
processes, switched with DEMOSIM_PURE_PYTHON).
"""

from __future__ import annotations

import argparse
import os
import subprocess
import sys
import timeit

from demosim import _fallback
from demosim.stochastic import RngStream

try:
    from demosim import _kernels
except ImportError:
    _kernels = None


def _inputs(n_bins: int, n: int, seed: int = 1):
    rng = RngStream(seed, ("bench",))
    return [
        ([rng.randint(1001) - 500 for _ in range(n_bins)], [1 + rng.randint(10_000) for _ in range(n_bins)],
         1 + rng.randint(n_bins + 2))
        for _ in range(n)
    ]


def bench_rank(mod, cases, literal=True):
    for D, T, h in cases:
        mod.rank_scores(h, D, T, literal)


def bench_partner(mod, ages):
    for a in ages[:200]:
        mod.partner_weights(a, ages, 0.2, 2.0, True)


_DATA = "from importlib import resources; from pathlib import Path; D = Path(str(resources.files('demosim') / 'data'))"

# name -> (imports, per-repeat setup, timed statement)
END_TO_END = {
    "align pass (reference problem)": (
        f"{_DATA}; from demosim.alignment import *; from demosim.stochastic import RngStream;"
        "p = load_problem(D / 'reference_problem.csv')",
        "pop, pending = build_problem_population(p)",
        "align_households(pending, pop, p.target, RngStream(1), Semantics.PAPER)",
    ),
    "toy run (2 cycles)": (
        f"{_DATA}; import dataclasses; from demosim.pipeline import load_config, run_simulation;"
        "cfg = dataclasses.replace(load_config(D / 'toy' / 'config.yaml'), n_cycles=2)",
        "pass",
        "run_simulation(cfg, 1)",
    ),
}


def end_to_end(pure: bool, repeat: int) -> dict:
    env = dict(os.environ, DEMOSIM_PURE_PYTHON="1" if pure else "0")
    out = {}
    for name, (imports, setup, stmt) in END_TO_END.items():
        code = (f"import timeit; from demosim.kernels import BACKEND\n{imports}\n"
                f"print(BACKEND, min(timeit.repeat({stmt!r}, setup={setup!r}, globals=globals(), "
                f"number=1, repeat={repeat})))")
        res = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
        backend, secs = res.stdout.split()
        out[name] = (backend, float(secs))
    return out


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    if _kernels is None:
        sys.exit("compiled extension not built: pip install -e . --no-build-isolation")

    cases = {n: _inputs(n, 2000) for n in (4, 6, 8)}
    ages = [18 + (i * 7) % 60 for i in range(2000)]
    rows = []
    for n, cs in cases.items():
        for label, mod in (("python", _fallback), ("cython", _kernels)):
            t = min(timeit.repeat(lambda: bench_rank(mod, cs), number=1, repeat=args.repeat))
            rows.append((f"rank_scores n={n} x2000", label, t))
    for label, mod in (("python", _fallback), ("cython", _kernels)):
        t = min(timeit.repeat(lambda: bench_partner(mod, ages), number=1, repeat=args.repeat))
        rows.append(("partner_weights 200 x 2000", label, t))
    for pure in (True, False):
        for name, (backend, t) in end_to_end(pure, args.repeat).items():
            rows.append((name, backend, t))

    print(f"{'benchmark':36} {'backend':8} {'seconds':>9}  speed-up")
    base = {}
    for name, label, t in rows:
        if label == "python":
            base[name] = t
        ratio = f"{base[name] / t:6.1f}x" if label == "cython" and name in base else ""
        print(f"{name:36} {label:8} {t:9.4f}  {ratio}")


if __name__ == "__main__":
    main()
