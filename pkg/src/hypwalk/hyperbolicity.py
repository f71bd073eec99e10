"""Coarse-geometry helpers: four-point tree approximation, delta estimates, extensions."""

from __future__ import annotations

from itertools import combinations

import numpy as np
from scipy.optimize import linprog

from .groups import Group, NormalForm, distance


def _pair_sums(d, i, j, k, l):
    return d[i][j] + d[k][l]


def _tree_fit_for_split(d, split):
    """Best one-sided tree fit with the given quartet topology, solved as an LP.

    Variables: pendant lengths a_0..a_3, central edge c, error C.
    """
    (i, j), (k, l) = split
    side = {i: 0, j: 0, k: 1, l: 1}
    pairs = list(combinations(range(4), 2))
    A_ub, b_ub = [], []
    for p, q in pairs:
        row = np.zeros(6)
        row[p] += 1
        row[q] += 1
        if side[p] != side[q]:
            row[4] = 1
        # t_pq <= d_pq
        A_ub.append(row.copy())
        b_ub.append(d[p][q])
        # d_pq - C <= t_pq
        row[5] = 1
        A_ub.append(-row)
        b_ub.append(-d[p][q])
    res = linprog(c=[0, 0, 0, 0, 0, 1], A_ub=np.array(A_ub), b_ub=np.array(b_ub),
                  bounds=[(0, None)] * 6, method="highs")
    a = res.x
    t = {}
    for p, q in pairs:
        t[(p, q)] = a[p] + a[q] + (a[4] if side[p] != side[q] else 0.0)
    return res.fun, t


def four_point_delta(points: list[NormalForm]):
    """Smallest C admitting a tree metric t with d - C <= t <= d on the points.

    Returns ``(C, tree)`` where ``tree`` maps index pairs to tree distances.
    Up to three points embed isometrically in a tree, so C = 0 there.
    """
    n = len(points)
    if not 2 <= n <= 4:
        raise ValueError("four_point_delta takes between 2 and 4 points")
    d = [[distance(x, y) for y in points] for x in points]
    if n < 4:
        return 0.0, {(p, q): float(d[p][q]) for p, q in combinations(range(n), 2)}
    best = None
    for split in (((0, 1), (2, 3)), ((0, 2), (1, 3)), ((0, 3), (1, 2))):
        C, t = _tree_fit_for_split(d, split)
        if best is None or C < best[0] - 1e-12:
            best = (C, t)
    C, t = best
    return max(0.0, float(C)), {k: float(v) for k, v in t.items()}


def four_point_gap(dists) -> float:
    """(S1 - S2)/2 for the three pair sums of a 4-point distance matrix."""
    s = sorted([_pair_sums(dists, 0, 1, 2, 3), _pair_sums(dists, 0, 2, 1, 3),
                _pair_sums(dists, 0, 3, 1, 2)], reverse=True)
    return (s[0] - s[1]) / 2


def estimate_delta(group: Group, radius: int = 4, samples: int = 500, seed: int = 0) -> float:
    """Largest four-point gap over random quadruples in B(e, radius); an estimate only."""
    rng = np.random.default_rng(seed)
    ball = group.ball_words(radius)
    best = 0.0
    for _ in range(samples):
        idx = rng.integers(0, len(ball), 4)
        pts = [ball[i] for i in idx]
        d = [[group.distance(x, y) for y in pts] for x in pts]
        best = max(best, four_point_gap(d))
    return best


def extension_constant(group: Group, pairs, a_max: int = 4) -> int:
    """Smallest C such that every pair (x, y) admits |a| <= C with |x a y| >= |x| + |y|."""
    worst = 0
    for x, y in pairs:
        x, y = group.parse(x), group.parse(y)
        target = len(group.reduce(x)) + len(group.reduce(y))
        for k in range(a_max + 1):
            if any(len(group.reduce(x + a + y)) >= target for a in group.sphere_words(k)):
                worst = max(worst, k)
                break
        else:
            raise ValueError(f"no extension of length <= {a_max} for {''.join(x)}, {''.join(y)}")
    return worst
