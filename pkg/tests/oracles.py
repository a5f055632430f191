"""Independent reference implementations used to cross-check the engine.

Everything here is deliberately written from scratch against the published
formulas, with plain-python data structures, and must stay decoupled from
the implementations it validates.
"""

from __future__ import annotations

import math


def dtw_reference(a, b) -> tuple[float, int]:
    """Full-table DTW over (cost, path length), lexicographic minimum.

    a, b: lists of equal-dimension float tuples (frames).
    """
    n, m = len(a), len(b)
    inf = float("inf")
    table: list[list[tuple[float, int]]] = [[(inf, 0)] * m for _ in range(n)]
    for i in range(n):
        for j in range(m):
            d = math.dist(a[i], b[j])
            if i == 0 and j == 0:
                table[i][j] = (d, 1)
                continue
            options = []
            if i > 0 and j > 0:
                options.append(table[i - 1][j - 1])
            if i > 0:
                options.append(table[i - 1][j])
            if j > 0:
                options.append(table[i][j - 1])
            cost, steps = min(options)
            table[i][j] = (cost + d, steps + 1)
    return table[n - 1][m - 1]


def topsis_reference(sw: list[float], tw: list[float]) -> tuple[list[float], int]:
    """Near-ideal ranking per the published equations, step by step.

    Shared conventions with the engine: an all-zero column normalizes to
    zeros; rows at zero total distance score 0.5; argmax ties go to the
    later row.
    """
    n = len(sw)
    s_norm = math.sqrt(sum(x * x for x in sw))
    t_norm = math.sqrt(sum(x * x for x in tw))
    sr = [x / s_norm if s_norm > 0 else 0.0 for x in sw]
    tr = [x / t_norm if t_norm > 0 else 0.0 for x in tw]
    sa_plus, sa_minus = max(sr), min(sr)
    ta_plus, ta_minus = max(tr), min(tr)
    c = []
    for i in range(n):
        d_plus = math.sqrt((sr[i] - sa_plus) ** 2 + (tr[i] - ta_plus) ** 2)
        d_minus = math.sqrt((sr[i] - sa_minus) ** 2 + (tr[i] - ta_minus) ** 2)
        total = d_plus + d_minus
        c.append(d_minus / total if total > 0 else 0.5)
    best = 0
    for i in range(1, n):
        if c[i] >= c[best]:
            best = i
    return c, best


def levenshtein_reference(ref, hyp) -> int:
    """Unit-cost edit distance from the full quadratic matrix."""
    n, m = len(ref), len(hyp)
    table = [[0] * (m + 1) for _ in range(n + 1)]
    for i in range(n + 1):
        table[i][0] = i
    for j in range(m + 1):
        table[0][j] = j
    for i in range(1, n + 1):
        for j in range(1, m + 1):
            table[i][j] = min(
                table[i - 1][j - 1] + (0 if ref[i - 1] == hyp[j - 1] else 1),
                table[i - 1][j] + 1,
                table[i][j - 1] + 1,
            )
    return table[n][m]


def topk_reference(scored: list[tuple[float, int]], k: int) -> list[int]:
    """Top-k indices by (similarity desc, index desc), selection-sorted."""
    remaining = list(scored)
    out = []
    while remaining and len(out) < k:
        best = 0
        for i in range(1, len(remaining)):
            sim, idx = remaining[i]
            bsim, bidx = remaining[best]
            if sim > bsim or (sim == bsim and idx > bidx):
                best = i
        out.append(remaining.pop(best)[1])
    return out
