"""Pure-Python kernels; same arithmetic, in the same order, as ``_kernels.pyx``."""

import math

ZERO_TARGET_PENALTY = 1e6


def relative_sd(D, T):
    """Sample standard deviation of ``D[k] / T[k]``."""
    n = len(D)
    if n < 2:
        raise ValueError("standard deviation needs at least two bins")
    r = [0.0] * n
    total = 0.0
    for k in range(n):
        t = T[k]
        d = D[k]
        if t == 0.0:
            r[k] = 0.0 if d == 0.0 else abs(d) * ZERO_TARGET_PENALTY
        else:
            r[k] = d / t
        total += r[k]
    mean = total / n
    acc = 0.0
    for k in range(n):
        dev = r[k] - mean
        acc += dev * dev
    return math.sqrt(acc / (n - 1))


def rank_scores(h_size, D, T, literal):
    """Scores for [new household, join bin 1, ..., join bin n]."""
    n = len(D)
    if n < 2:
        raise ValueError("ranking needs at least two bins")
    x = min(h_size, n)
    base = [float(d) for d in D]
    scores = [0.0] * (n + 1)
    work = base[:]
    work[x - 1] += 1.0
    scores[0] = relative_sd(work, T)
    for i in range(1, n):
        work = base[:]
        j = min(x + i, n)
        work[i - 1] -= 1.0
        work[j - 1] += 1.0
        scores[i] = relative_sd(work, T)
    work = base[:]
    if literal:
        work[n - 1] += 1.0
    scores[n] = relative_sd(work, T)
    return scores


def partner_weights(seeker_age, candidate_ages, lam, mu, seeker_is_male):
    """``exp(-lam * |male_age - female_age - mu|)`` for each candidate."""
    out = []
    for a in candidate_ages:
        gap = (seeker_age - a) if seeker_is_male else (a - seeker_age)
        out.append(math.exp(-lam * abs(gap - mu)))
    return out
