"""Seedable random streams, samplers and regression-model evaluators.

Random numbers come from numpy's PCG64 bit generator, whose raw 64-bit
output stream is stable across platforms and numpy releases.  Every
higher-level draw here is built directly on those raw words (not on
``Generator`` convenience methods, whose algorithms may change), so a
``(seed, label)`` pair always replays bit-identically.
"""

from __future__ import annotations

import bisect
import csv
import hashlib
import itertools
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .errors import DomainError, ModelError

_MASK64 = (1 << 64) - 1
_TWO_M53 = 2.0 ** -53

LINEAR_CLAMP = 500.0
INTERCEPT = "intercept"


def _label_words(label: tuple) -> list[int]:
    digest = hashlib.sha256("\x1f".join(map(str, label)).encode("utf-8")).digest()
    return [int.from_bytes(digest[i:i + 4], "little") for i in range(0, 16, 4)]


class RngStream:
    """A labelled random stream.

    ``RngStream(seed).substream(year, "birth", "fertility")`` yields a stream
    that depends only on the seed and the label, so adding or reordering
    events never shifts the draws of another event.
    """

    __slots__ = ("seed", "label", "_bitgen")

    def __init__(self, seed: int, label: tuple = ()) -> None:
        self.seed = int(seed) & _MASK64
        self.label = tuple(label)
        entropy = [self.seed & 0xFFFFFFFF, self.seed >> 32, *_label_words(self.label)]
        self._bitgen = np.random.PCG64(np.random.SeedSequence(entropy))

    def substream(self, *label) -> "RngStream":
        return RngStream(self.seed, self.label + tuple(label))

    def random(self) -> float:
        """Uniform double in [0, 1) with 53 random bits."""
        return (int(self._bitgen.random_raw()) >> 11) * _TWO_M53

    def randoms(self, n: int) -> np.ndarray:
        raw = self._bitgen.random_raw(n)
        return (raw >> np.uint64(11)).astype(np.float64) * _TWO_M53

    def randint(self, n: int) -> int:
        """Uniform integer in ``range(n)``."""
        if n <= 0:
            raise DomainError("randint needs n >= 1")
        return min(int(self.random() * n), n - 1)

    def shuffle(self, seq: list) -> None:
        for i in range(len(seq) - 1, 0, -1):
            j = self.randint(i + 1)
            seq[i], seq[j] = seq[j], seq[i]

    def permutation(self, items) -> list:
        out = list(items)
        self.shuffle(out)
        return out

    def choice(self, seq: Sequence):
        if not seq:
            raise DomainError("cannot choose from an empty sequence")
        return seq[self.randint(len(seq))]


# ---------------------------------------------------------------- samplers


def bernoulli(p: float, rng: RngStream) -> bool:
    if not 0.0 <= p <= 1.0:
        raise DomainError(f"probability {p!r} outside [0, 1]")
    return rng.random() < p


def _check_weights(items: Sequence, weights: Sequence[float]) -> list[float]:
    if len(items) != len(weights):
        raise DomainError("items and weights differ in length")
    w = [float(x) for x in weights]
    if any(not math.isfinite(x) or x < 0 for x in w):
        raise DomainError("weights must be finite and non-negative")
    if not any(x > 0 for x in w):
        raise DomainError("at least one weight must be positive")
    return w


def weighted_sample(
    items: Sequence,
    weights: Sequence[float],
    k: int = 1,
    without_replacement: bool = False,
    rng: RngStream | None = None,
) -> list:
    """Draw ``k`` items with probability proportional to ``weights``.

    Without replacement the draws are sequential: each pick is removed and
    the remaining weights renormalised.
    """
    if rng is None:
        raise DomainError("an RngStream is required")
    w = _check_weights(items, weights)
    if k < 0:
        raise DomainError("k must be non-negative")
    if not without_replacement:
        cum = list(itertools.accumulate(w))
        total = cum[-1]
        out = []
        for _ in range(k):
            i = bisect.bisect_right(cum, rng.random() * total)
            out.append(items[min(i, len(items) - 1)])
        return out

    if k > len(items):
        raise DomainError(f"cannot draw {k} of {len(items)} items without replacement")
    if k > sum(1 for x in w if x > 0):
        raise DomainError(f"only {sum(1 for x in w if x > 0)} items have positive weight")
    pool = list(range(len(items)))
    out = []
    for _ in range(k):
        total = math.fsum(w[i] for i in pool)
        target = rng.random() * total
        acc = 0.0
        pick = None
        for pos, i in enumerate(pool):
            if w[i] <= 0:
                continue
            acc += w[i]
            pick = pos
            if acc > target:
                break
        out.append(items[pool.pop(pick)])
    return out


def inclusion_probabilities(weights: Sequence[float], k: int) -> list[float]:
    """First-order inclusion probabilities proportional to weight, capped at 1."""
    w = [float(x) for x in weights]
    pi = [0.0] * len(w)
    free = [i for i, x in enumerate(w) if x > 0]
    remaining = k
    while True:
        total = math.fsum(w[i] for i in free)
        capped = [i for i in free if remaining * w[i] >= total]
        if not capped or not remaining:
            for i in free:
                pi[i] = remaining * w[i] / total if total > 0 else 0.0
            return pi
        for i in capped:
            pi[i] = 1.0
        remaining -= len(capped)
        free = [i for i in free if i not in set(capped)]


def systematic_pps(weights: Sequence[float], k: int, rng: RngStream) -> list[int]:
    """Select ``k`` distinct indices with inclusion probability proportional to weight.

    Systematic sampling over a randomly permuted unit order, so each index
    is included with exactly the probability from
    :func:`inclusion_probabilities`.
    """
    if k < 0:
        raise DomainError("k must be non-negative")
    if k > sum(1 for x in weights if x > 0):
        raise DomainError("k exceeds the number of positive weights")
    if k == 0:
        return []
    _check_weights(weights, weights)
    pi = inclusion_probabilities(weights, k)
    order = rng.permutation(range(len(pi)))
    start = rng.random()
    chosen = []
    acc = 0.0
    nxt = start
    for i in order:
        acc += pi[i]
        if acc > nxt:
            chosen.append(i)
            nxt += 1.0
        if len(chosen) == k:
            break
    # float round-off can leave the final point marginally above the total
    if len(chosen) < k:
        for i in order:
            if i not in chosen and pi[i] > 0:
                chosen.append(i)
                if len(chosen) == k:
                    break
    return sorted(chosen)


def categorical(probs: Mapping[object, float], rng: RngStream):
    """Draw one key of ``probs`` (inverse-CDF in mapping order)."""
    keys = list(probs)
    return weighted_sample(keys, [probs[k] for k in keys], 1, rng=rng)[0]


# ------------------------------------------------------------------ models


@dataclass(frozen=True)
class LogisticModel:
    terms: tuple  # ((name, coefficient), ...)
    name: str = ""

    @classmethod
    def from_dict(cls, terms: Mapping[str, float], name: str = "") -> "LogisticModel":
        return cls(tuple((k, float(v)) for k, v in terms.items()), name)

    def linear_predictor(self, cov: Mapping[str, float]) -> float:
        x = 0.0
        for term, coef in self.terms:
            if term == INTERCEPT and term not in cov:
                value = 1.0
            else:
                try:
                    value = cov[term]
                except KeyError:
                    raise ModelError(f"model {self.name or '?'} needs covariate {term!r}") from None
            x += coef * float(value)
        return x


def _clamp(x: float) -> float:
    return max(-LINEAR_CLAMP, min(LINEAR_CLAMP, x))


def logistic_prob(m: LogisticModel, cov: Mapping[str, float]) -> float:
    """``1 / (1 + exp(-x))`` with the linear predictor clamped to +/-500."""
    x = _clamp(m.linear_predictor(cov))
    if x >= 0:
        return 1.0 / (1.0 + math.exp(-x))
    e = math.exp(x)
    return e / (1.0 + e)


@dataclass(frozen=True)
class MultinomialModel:
    base: str
    outcomes: tuple  # ((outcome, LogisticModel), ...) for non-base outcomes
    name: str = ""

    @property
    def categories(self) -> list[str]:
        return [self.base] + [o for o, _ in self.outcomes]


def multinomial_probs(m: MultinomialModel, cov: Mapping[str, float]) -> dict[str, float]:
    """Softmax over per-outcome predictors, base predictor fixed at 0."""
    preds = [0.0] + [_clamp(lm.linear_predictor(cov)) for _, lm in m.outcomes]
    top = max(preds)
    exps = [math.exp(x - top) for x in preds]
    total = math.fsum(exps)
    return {c: e / total for c, e in zip(m.categories, exps)}


@dataclass(frozen=True)
class RateTable:
    key_columns: tuple
    values: dict = field(hash=False)
    name: str = ""

    def __post_init__(self) -> None:
        for key, p in self.values.items():
            if not 0.0 <= p <= 1.0:
                raise ModelError(f"rate {key} = {p} in {self.name} is not a probability")


def rate_lookup(t: RateTable, keys) -> float:
    if isinstance(keys, Mapping):
        try:
            keys = tuple(keys[c] for c in t.key_columns)
        except KeyError as exc:
            raise ModelError(f"rate table {t.name} needs key {exc.args[0]!r}") from None
    elif not isinstance(keys, tuple):
        keys = (keys,)
    keys = tuple(str(getattr(k, "value", k)) for k in keys)
    try:
        return t.values[keys]
    except KeyError:
        raise ModelError(f"rate table {t.name} has no entry for {keys}") from None


# ----------------------------------------------------------------- loaders


def _read_rows(path: Path) -> tuple[list[dict], dict[str, str]]:
    directives: dict[str, str] = {}
    lines = []
    with open(path, newline="", encoding="utf-8") as fh:
        for line in fh:
            if line.startswith("#"):
                body = line[1:].strip()
                if ":" in body:
                    key, _, value = body.partition(":")
                    directives[key.strip().lower()] = value.strip()
                continue
            if line.strip():
                lines.append(line)
    return list(csv.DictReader(lines)), directives


def load_coefficients(path) -> dict[str, dict[str, float]]:
    """Read ``group,term,estimate`` rows into ``{group: {term: estimate}}``."""
    path = Path(path)
    rows, _ = _read_rows(path)
    out: dict[str, dict[str, float]] = {}
    for row in rows:
        try:
            out.setdefault(row["group"], {})[row["term"]] = float(row["estimate"])
        except (KeyError, ValueError) as exc:
            raise ModelError(f"{path}: bad coefficient row {row}") from exc
    return out


def load_model_file(path):
    """Logistic models per group, or a multinomial model if ``# base:`` is declared."""
    path = Path(path)
    _, directives = _read_rows(path)
    coefs = load_coefficients(path)
    name = path.stem
    if "base" in directives:
        outcomes = tuple(
            (o, LogisticModel.from_dict(t, f"{name}:{o}")) for o, t in coefs.items()
        )
        return MultinomialModel(directives["base"], outcomes, name)
    return {g: LogisticModel.from_dict(t, f"{name}:{g}") for g, t in coefs.items()}


def load_rate_table(path, value_column: str = "probability") -> RateTable:
    path = Path(path)
    rows, _ = _read_rows(path)
    if not rows:
        raise ModelError(f"{path}: empty rate table")
    keys = tuple(c for c in rows[0] if c != value_column)
    values = {}
    for row in rows:
        values[tuple(row[c] for c in keys)] = float(row[value_column])
    return RateTable(keys, values, path.stem)


@dataclass
class ModelRegistry:
    """All coefficient sets and rate tables a run needs."""

    logistic: dict = field(default_factory=dict)  # sub_model -> group -> LogisticModel
    multinomial: dict = field(default_factory=dict)  # sub_model -> MultinomialModel
    rates: dict = field(default_factory=dict)  # name -> RateTable

    def model(self, sub_model: str, group: str) -> LogisticModel:
        try:
            return self.logistic[sub_model][group]
        except KeyError:
            raise ModelError(f"no model for {sub_model}/{group}") from None

    def multinomial_model(self, sub_model: str) -> MultinomialModel:
        try:
            return self.multinomial[sub_model]
        except KeyError:
            raise ModelError(f"no multinomial model {sub_model}") from None

    def rate(self, name: str) -> RateTable:
        try:
            return self.rates[name]
        except KeyError:
            raise ModelError(f"no rate table {name}") from None

    @classmethod
    def load(cls, models_dir, rates_dir) -> "ModelRegistry":
        reg = cls()
        for path in sorted(Path(models_dir).glob("*.csv")):
            loaded = load_model_file(path)
            if isinstance(loaded, MultinomialModel):
                reg.multinomial[path.stem] = loaded
            else:
                reg.logistic[path.stem] = loaded
        for path in sorted(Path(rates_dir).glob("*.csv")):
            reg.rates[path.stem] = load_rate_table(path)
        return reg
