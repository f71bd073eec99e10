"""Green functions, restricted Green functions, Martin kernels and Ancona probes.

Every value is a :class:`GreenValue` interval.  Two oracles provide G_r:
:class:`SeriesGreen` sums convolution powers on a Cayley ball with a
geometric tail bound, and :class:`hypwalk.tree.TreeGreen` evaluates closed
forms on tree-like groups.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import DivergenceError, PreconditionError, PrecisionError
from .fits import FitResult
from .groups import FreeProduct, Group, Word
from .intervals import GreenValue
from .walk import DEFAULT_SUPPORT_CAP, FiniteMeasure, WalkBall, return_sequence, spectral_radius_estimate

NEAR_R_EXPONENT = 14


class SeriesGreen:
    """G_r(x, y) = sum_n r^n p_n(x, y) truncated at n_max with a geometric tail.

    The tail uses p_n(x, y) <= rho^n, valid for symmetric measures, with rho
    replaced by a margin-inflated estimate.
    """

    exact = False

    def __init__(self, mu: FiniteMeasure, n_max: int = 10, prune_eps: float = 0.0,
                 rho_upper: float | None = None, margin: float = 1e-3,
                 cap: int = DEFAULT_SUPPORT_CAP):
        self.mu = mu
        self.group = mu.group
        self.n_max = n_max
        self.ball = WalkBall(mu, n_max * mu.max_step, cap)
        self.dists, self.pruned = self.ball.powers(n_max, prune_eps)
        self._stack = np.vstack(self.dists)
        if rho_upper is None:
            if self.group.amenable:
                rho_hat = 1.0
            else:
                series = return_sequence(mu, min(max(2 * n_max, 16), 22))
                rho_hat, _ = spectral_radius_estimate(series)
            rho_upper = min(1.0, rho_hat * (1 + margin))
            self.rho_hat = rho_hat
        else:
            self.rho_hat = rho_upper
        self.rho_upper = rho_upper
        self.R = 1.0 / self.rho_hat
        self._vec: dict[float, np.ndarray] = {}

    def _green_vector(self, r: float) -> np.ndarray:
        v = self._vec.get(r)
        if v is None:
            powers = r ** np.arange(self.n_max + 1)
            v = powers @ self._stack
            self._vec[r] = v
        return v

    def tail(self, r: float) -> float:
        q = r * self.rho_upper
        if q >= 1 - 1e-6:
            raise DivergenceError(f"r * rho_upper = {q:.6f} is too close to 1 for a tail bound")
        geo = q ** (self.n_max + 1) / (1 - q)
        pruned = float(np.dot(r ** np.arange(self.n_max + 1), self.pruned))
        return geo + pruned

    def green(self, x, y, r: float) -> GreenValue:
        g = self.group
        z = g.reduce(g.invert(g.reduce(g.parse(x))) + g.reduce(g.parse(y)))
        i = self.ball.index.get(z)
        val = float(self._green_vector(r)[i]) if i is not None else 0.0
        return GreenValue(val * (1 - 1e-15), self.tail(r) + 2e-15 * val, r)

    def green_e(self, r: float) -> float:
        return self.green((), (), r).mid


def near_R(oracle) -> float:
    """Evaluation point standing in for R: R itself for exact oracles."""
    if getattr(oracle, "exact", False):
        return oracle.R
    return oracle.R * (1 - 2.0 ** (-NEAR_R_EXPONENT))


# ---------------------------------------------------------------------------
# basic kernels


def green(oracle, x, y, r: float) -> GreenValue:
    return oracle.green(x, y, r)


def first_visit(oracle, x, y, r: float) -> GreenValue:
    g = oracle.group
    if g.reduce(g.parse(x)) == g.reduce(g.parse(y)):
        return GreenValue(1.0, 0.0, r)
    return oracle.green(x, y, r) / oracle.green(y, y, r)


def h_kernel(oracle, x, y, r: float) -> GreenValue:
    gxy = oracle.green(x, y, r)
    if oracle.mu.symmetric:
        return gxy * gxy
    return gxy * oracle.green(y, x, r)


def sphere_H_sums(oracle, r: float, k_max: int, method: str = "auto") -> list[GreenValue]:
    """sum over |x| = k of H_r(e, x), for k = 0..k_max.

    ``method="auto"`` uses the oracle's syllable recursion when it has one;
    ``"enumerate"`` always sums element by element.
    """
    fast = getattr(oracle, "sphere_h_sums", None)
    if method == "auto" and fast is not None:
        return [GreenValue.exact(float(v), r, rel=1e-13) for v in fast(r, k_max)]
    out = []
    for k in range(k_max + 1):
        lo = hi = 0.0
        for w in oracle.group.sphere_words(k):
            h = h_kernel(oracle, (), w, r)
            lo += h.lower
            hi += h.upper
        out.append(GreenValue.from_bounds(lo, hi, r))
    return out


def eta_partial(oracle, r: float, k_max: int, sums: list[GreenValue] | None = None) -> GreenValue:
    """Truncated eta(r) with a tail from the last per-sphere decay ratio.

    When that ratio is within 1e-3 of 1 no tail bound is claimed and the
    upper end is infinite.
    """
    sums = sums if sums is not None else sphere_H_sums(oracle, r, k_max)
    lo = sum(s.lower for s in sums)
    hi = sum(s.upper for s in sums)
    if len(sums) < 3 or sums[-2].mid == 0:
        return GreenValue.from_bounds(lo, math.inf, r)
    q = max(sums[-1].mid / sums[-2].mid, sums[-2].mid / sums[-3].mid)
    if q >= 1 - 1e-3:
        return GreenValue(lo, math.inf, r)
    return GreenValue.from_bounds(lo, hi + sums[-1].upper * q / (1 - q), r)


@dataclass
class DerivativeReport:
    r: float
    h: float
    lhs: float
    rhs: GreenValue
    discrepancy: float
    budget: float
    fd_error: float
    truncation: float

    @property
    def within_budget(self) -> bool:
        return self.discrepancy <= self.budget

    @property
    def relative_discrepancy(self) -> float:
        return self.discrepancy / abs(self.lhs)

    def to_dict(self):
        return {"r": self.r, "h": self.h, "lhs": self.lhs, "rhs_lower": self.rhs.lower,
                "rhs_upper": self.rhs.upper, "discrepancy": self.discrepancy,
                "budget": self.budget, "fd_error": self.fd_error,
                "truncation": self.truncation, "within_budget": self.within_budget}


def derivative_identity_check(oracle, r: float, h: float, k_max: int) -> DerivativeReport:
    """Compare a centred difference of r G_r(e,e) with the truncated sum of H_r(e, z)."""

    def rg(t):
        v = oracle.green((), (), t)
        return t * v.mid, t * v.width

    def centred(step):
        a, wa = rg(r + step)
        b, wb = rg(r - step)
        return (a - b) / (2 * step), (wa + wb) / (2 * step)

    d1, w1 = centred(h)
    d2, _ = centred(2 * h)
    # Richardson: the O(h^2) error of the step-h difference is about (d2 - d1)/3
    fd_error = abs(d2 - d1) / 3
    rhs = eta_partial(oracle, r, k_max)
    truncation = rhs.width
    discrepancy = abs(d1 - rhs.mid) if math.isfinite(rhs.upper) else max(0.0, rhs.lower - d1)
    budget = 10 * fd_error + truncation + w1 + 1e-12 * abs(d1)
    return DerivativeReport(r, h, d1, rhs, discrepancy, budget, fd_error, truncation)


# ---------------------------------------------------------------------------
# regions and restricted Green functions


class Region:
    def contains(self, group: Group, w: Word) -> bool:
        raise NotImplementedError

    def __and__(self, other):
        return AllOf((self, other))

    def __or__(self, other):
        return AnyOf((self, other))

    def __invert__(self):
        return Not(self)


@dataclass(frozen=True)
class Ball(Region):
    center: Word
    radius: int

    def contains(self, group, w):
        return group.distance(self.center, w) <= self.radius


@dataclass(frozen=True)
class BallComplement(Region):
    center: Word
    radius: int

    def contains(self, group, w):
        return group.distance(self.center, w) > self.radius


@dataclass(frozen=True)
class Elements(Region):
    words: frozenset

    def contains(self, group, w):
        return w in self.words


@dataclass(frozen=True)
class Everything(Region):
    def contains(self, group, w):
        return True


@dataclass(frozen=True)
class Not(Region):
    inner: Region

    def contains(self, group, w):
        return not self.inner.contains(group, w)


@dataclass(frozen=True)
class AllOf(Region):
    parts: tuple

    def contains(self, group, w):
        return all(p.contains(group, w) for p in self.parts)


@dataclass(frozen=True)
class AnyOf(Region):
    parts: tuple

    def contains(self, group, w):
        return any(p.contains(group, w) for p in self.parts)


@dataclass(frozen=True)
class RegionSpec:
    """Allowed interior vertices, intersected with the enclosing ball B(e, L)."""

    allowed: Region
    enclosing_radius: int

    def contains(self, group: Group, w: Word) -> bool:
        return len(w) <= self.enclosing_radius and self.allowed.contains(group, w)


def elements_region(group: Group, words: Iterable) -> Elements:
    return Elements(frozenset(group.reduce(group.parse(w)) for w in words))


def _power_radius(Q: sp.csr_matrix, iters: int = 500) -> float:
    n = Q.shape[0]
    if n == 0 or Q.nnz == 0:
        return 0.0
    v = np.ones(n) / n
    est = 0.0
    for _ in range(iters):
        w = Q @ v
        s = w.sum()
        if s == 0:
            return 0.0
        prev, est = est, s / v.sum()
        v = w / s
        if abs(est - prev) < 1e-13 * max(est, 1e-300):
            break
    return est


_BALL_CACHE: dict = {}


def _ball(mu: FiniteMeasure, radius: int) -> WalkBall:
    key = (mu.key, radius)
    b = _BALL_CACHE.get(key)
    if b is None:
        if len(_BALL_CACHE) > 8:
            _BALL_CACHE.clear()
        b = WalkBall(mu, radius)
        _BALL_CACHE[key] = b
    return b


def restricted_green(mu: FiniteMeasure, x, y, region: RegionSpec, r: float,
                     green_ee_upper: float | None = None) -> GreenValue:
    """G_r(x, y; Omega) by an exact sparse solve on Omega inside B(e, L).

    Interior vertices of a path must lie in Omega; the endpoints need not.

    Paths that leave the enclosing ball are covered by the boundary flux
    times ``green_ee_upper`` (an upper bound for G_r(e,e), hence for every
    G_r(w, y)); without it the tail is infinite.
    """
    group = mu.group
    x = group.reduce(group.parse(x))
    y = group.reduce(group.parse(y))
    L = region.enclosing_radius
    if len(x) > L or len(y) > L:
        raise PreconditionError("the enclosing ball must contain x and y")
    ball = _ball(mu, L)
    idx = ball.index
    allowed = np.fromiter((region.allowed.contains(group, w) for w in ball.words),
                          dtype=bool, count=ball.size)
    nodes = np.nonzero(allowed)[0]
    pos = -np.ones(ball.size, dtype=np.int64)
    pos[nodes] = np.arange(len(nodes))
    iy = idx[y]
    # y inside the region is an ordinary interior vertex; otherwise paths stop there
    y_interior = bool(allowed[iy])
    rows, cols, vals = [], [], []
    b = np.zeros(len(nodes))
    if y_interior:
        b[pos[iy]] = 1.0
    exit_rate = np.zeros(len(nodes))
    for a, (s, p) in enumerate(mu.atoms):
        t = ball.targets[a][nodes]
        hit_y = (t == iy) & (not y_interior)
        b[hit_y] += r * p
        inside = (t >= 0) & ~hit_y
        inside_allowed = inside.copy()
        inside_allowed[inside] = allowed[t[inside]]
        rows.append(np.nonzero(inside_allowed)[0])
        cols.append(pos[t[inside_allowed]])
        vals.append(np.full(inside_allowed.sum(), r * p))
        for k in np.nonzero(t < 0)[0]:
            w = group.mul_words(ball.words[nodes[k]], s)
            if region.allowed.contains(group, w):
                exit_rate[k] += r * p
    Q = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                      shape=(len(nodes), len(nodes)))
    rad = _power_radius(Q)
    if rad >= 1 - 1e-12:
        raise PrecisionError(f"restricted system is near-singular: sub-Markov radius {rad:.12f}")
    M = (sp.identity(len(nodes), format="csc") - Q.tocsc())
    h = spla.spsolve(M, b) if len(nodes) else np.zeros(0)
    # first step out of x
    value = 1.0 if x == y else 0.0
    first = np.zeros(len(nodes))
    direct_exit = 0.0
    ix = idx[x]
    for a, (s, p) in enumerate(mu.atoms):
        t = int(ball.targets[a][ix])
        if t == iy and not y_interior:
            value += r * p
        elif t >= 0:
            if allowed[t]:
                first[pos[t]] += r * p
        elif region.allowed.contains(group, group.mul_words(x, s)):
            direct_exit += r * p
    value += float(first @ h)
    flux = direct_exit
    if exit_rate.any() or direct_exit:
        u = spla.spsolve(M.T.tocsc(), first) if len(nodes) else np.zeros(0)
        flux += float(u @ exit_rate)
    if flux == 0:
        tail = 0.0
    elif green_ee_upper is None or not math.isfinite(green_ee_upper):
        tail = math.inf
    else:
        tail = flux * green_ee_upper
    value = max(value, 0.0)
    return GreenValue(value * (1 - 1e-12), tail + 2e-12 * value, r)


# ---------------------------------------------------------------------------
# Ancona probes


@dataclass
class AnconaReport:
    configurations: list[tuple]
    r_grid: list[float]
    rows: list[dict]
    supremum: float
    decay_slope: float | None = None
    violations: list[dict] = field(default_factory=list)

    def csv_rows(self):
        return [(row["config"], row["r"], row["lower"], row["upper"]) for row in self.rows]


def _delta_threshold(group: Group) -> float:
    if isinstance(group, FreeProduct):
        return 1.0
    from .hyperbolicity import estimate_delta
    return 2 * estimate_delta(group, radius=3, samples=200) + 1


def ancona_ratio(oracle, x, y, z, r_grid: Sequence[float], threshold: float | None = None,
                 config_id: str = "0", tolerance: float = 1e-12) -> AnconaReport:
    """Ratio G_r(x,z) / (G_r(x,y) G_r(y,z)) across an r grid.

    ``y`` must lie within ``threshold`` of a geodesic from x to z, which is
    checked through the Gromov product (x|z)_y.
    """
    group = oracle.group
    x, y, z = (group.reduce(group.parse(w)) for w in (x, y, z))
    thr = _delta_threshold(group) if threshold is None else threshold
    gromov = (group.distance(y, x) + group.distance(y, z) - group.distance(x, z)) / 2
    if gromov > thr:
        raise PreconditionError(f"y is {gromov} away from geodesics [x, z]; threshold {thr}")
    g_R = oracle.green((), (), near_R(oracle)).upper
    rows, violations = [], []
    sup = 0.0
    for r in r_grid:
        ratio = oracle.green(x, z, r) / (oracle.green(x, y, r) * oracle.green(y, z, r))
        sup = max(sup, ratio.upper)
        row = {"config": config_id, "r": r, "lower": ratio.lower, "upper": ratio.upper,
               "running_sup": sup}
        rows.append(row)
        if ratio.upper < 1 / g_R - tolerance:
            violations.append(row)
    return AnconaReport([("".join(x), "".join(y), "".join(z))], list(r_grid), rows, sup,
                        violations=violations)


@dataclass
class StrongAnconaResult:
    deviation: float
    width: float
    separation: float
    ratio: GreenValue


def strong_ancona_probe(oracle, x, x2, y, y2, r: float, min_separation: float = 1.0) -> StrongAnconaResult:
    """|G(x,y)G(x',y') / (G(x',y)G(x,y')) - 1| for x, x' far from y, y'."""
    from .hyperbolicity import four_point_delta

    group = oracle.group
    pts = [group.element(w) for w in (x, x2, y, y2)]
    if pts[0] == pts[1] or pts[2] == pts[3]:
        one = GreenValue(1.0, 0.0, r)
        return StrongAnconaResult(0.0, 0.0, math.inf, one)
    C, t = four_point_delta(pts)
    separation = (t[(0, 2)] + t[(1, 3)] - t[(0, 1)] - t[(2, 3)]) / 2
    if separation < min_separation:
        raise PreconditionError(
            f"configuration is not separated: central edge {separation} < {min_separation}")
    a, b, c, d = (p.letters for p in pts)
    num = oracle.green(a, c, r) * oracle.green(b, d, r)
    den = oracle.green(b, c, r) * oracle.green(a, d, r)
    ratio = num / den
    dev = max(abs(ratio.lower - 1), abs(ratio.upper - 1))
    return StrongAnconaResult(dev, ratio.width, separation, ratio)


def decay_fit(separations: Sequence[float], deviations: Sequence[float],
              widths: Sequence[float] | None = None) -> FitResult:
    """Slope of log(deviation) against separation; -inf when all deviations vanish."""
    n = np.asarray(separations, dtype=float)
    dev = np.asarray(deviations, dtype=float)
    w = np.zeros_like(dev) if widths is None else np.asarray(widths, dtype=float)
    significant = dev > w + 1e-15
    if significant.sum() < 2:
        return FitResult(-math.inf, 0.0, 0.0, {"separations": n.tolist()},
                         {"note": "deviations vanish up to interval width"})
    A = np.column_stack([np.ones(significant.sum()), n[significant]])
    coef, *_ = np.linalg.lstsq(A, np.log(dev[significant]), rcond=None)
    res = np.log(dev[significant]) - A @ coef
    return FitResult(float(coef[1]), float(math.exp(coef[0])), float(np.sqrt(np.mean(res ** 2))),
                     {"separations": n.tolist()}, {})


# ---------------------------------------------------------------------------
# Martin kernels


def martin_kernel(oracle, x, y, r: float) -> GreenValue:
    return oracle.green(x, y, r) / oracle.green((), y, r)


def martin_cauchy_probe(oracle, x, ray, r: float, depths: Sequence[int]) -> dict:
    group = oracle.group
    ray = group.parse(ray)
    values = [martin_kernel(oracle, x, ray[:d], r) for d in depths]
    diffs = []
    for a, b in zip(values, values[1:]):
        diffs.append(abs(b.mid - a.mid) + 0.5 * (a.width + b.width))
    return {"depths": list(depths), "lower": [v.lower for v in values],
            "upper": [v.upper for v in values], "successive_differences": diffs}


# ---------------------------------------------------------------------------
# avoidance of balls


def avoidance_decay(mu: FiniteMeasure, x, z, center, n_list: Sequence[int], r: float,
                    margin: int = 2, green_ee_upper: float | None = None) -> list[dict]:
    """G_r(x, z; B(center, n)^c) for each n, each solved inside B(e, L(n))."""
    group = mu.group
    x, z, c = (group.reduce(group.parse(w)) for w in (x, z, center))
    dxc, dcz, dxz = group.distance(x, c), group.distance(c, z), group.distance(x, z)
    if dxc + dcz != dxz:
        raise PreconditionError("center must lie on a geodesic from x to z")
    if min(dxc, dcz) < max(n_list):
        raise PreconditionError("x and z must be at least max(n_list) away from the center")
    tree = isinstance(group, FreeProduct)
    rows = []
    for n in n_list:
        L = max(len(x), len(z), len(c) + n) + margin
        spec = RegionSpec(BallComplement(c, n), L)
        g = restricted_green(mu, x, z, spec, r, green_ee_upper)
        rows.append({"n": n, "L": L, "lower": g.lower, "upper": g.upper,
                     "log_lower": math.log(g.lower) if g.lower > 0 else -math.inf,
                     "note": "tree: every path crosses the center" if tree else ""})
    return rows


# ---------------------------------------------------------------------------
# property suites


def sample_words(group: Group, count: int, max_len: int, seed: int) -> list[Word]:
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(count):
        n = int(rng.integers(0, max_len + 1))
        w = tuple(group.alphabet[i] for i in rng.integers(0, len(group.alphabet), n))
        out.append(group.reduce(w))
    return out


def check_subadditivity(oracle, triples, r_grid) -> list[dict]:
    """F(x,y) F(y,z) <= F(x,z) up to interval slack; returns violations."""
    bad = []
    for x, y, z in triples:
        for r in r_grid:
            lhs = first_visit(oracle, x, y, r) * first_visit(oracle, y, z, r)
            rhs = first_visit(oracle, x, z, r)
            if lhs.lower > rhs.upper:
                bad.append({"x": x, "y": y, "z": z, "r": r, "lhs": lhs.lower, "rhs": rhs.upper})
    return bad


def check_trivial_ancona(oracle, triples, r_grid) -> list[dict]:
    """G(x,y) G(y,z) <= G_R(e,e) G(x,z) up to interval slack."""
    g_R = oracle.green((), (), near_R(oracle)).upper
    bad = []
    for x, y, z in triples:
        for r in r_grid:
            lhs = oracle.green(x, y, r) * oracle.green(y, z, r)
            rhs = oracle.green(x, z, r).scale(g_R)
            if lhs.lower > rhs.upper:
                bad.append({"x": x, "y": y, "z": z, "r": r})
    return bad


def harnack_constant(mu: FiniteMeasure, r_min: float) -> float:
    """C with C^-1 <= G(x,z)/G(y,z) <= C for neighbours x, y = x s, s in the support."""
    return 1.0 / (r_min * min(p for w, p in mu.atoms if w))


def check_harnack(oracle, pairs, targets, r_grid, C: float) -> list[dict]:
    bad = []
    for x, y in pairs:
        for z in targets:
            for r in r_grid:
                ratio = oracle.green(x, z, r) / oracle.green(y, z, r)
                if ratio.upper < 1 / C or ratio.lower > C:
                    bad.append({"x": x, "y": y, "z": z, "r": r})
    return bad
