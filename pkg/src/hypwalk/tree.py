"""Exact Green functions for walks on free groups and free products of cyclic groups.

For a syllable g of factor i write F_g = F_r(g, e), the generating function
of first arrival at e from g.  Splitting a path at its first step and at the
first visit to the syllable boundary gives

    F_g = r [ mu(e) F_g + sum_{h in A_i} mu(h) F_{gh} + sum_{h not in A_i} mu(h) F_h F_g ]

with F_{gh} = 1 when gh = e and F_{a^2} = F_a^2 in infinite cyclic factors.
The minimal nonnegative solution is the probabilistic one.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

import numpy as np
from scipy.optimize import root

from .errors import DivergenceError, NonConvergenceError, PrecisionError, UnsupportedError
from .fits import FitResult, branch_fit, loglog_fit
from .groups import FreeProduct, Word
from .intervals import GreenValue
from .walk import FiniteMeasure

R_INFINITY_PROBE = 1e8


@dataclass
class BranchSystem:
    """Quadratic system F = r (c + A F + sum coef F_u F_w) with nonnegative coefficients."""

    mu: FiniteMeasure
    variables: list[tuple[int, int]]
    const: np.ndarray
    lin: np.ndarray
    quad: list[tuple[int, int, int, float]]
    hold: float
    exits: list[tuple[int, float]]
    index: dict[tuple[int, int], int] = field(default_factory=dict)

    @property
    def group(self) -> FreeProduct:
        return self.mu.group

    @property
    def size(self) -> int:
        return len(self.variables)

    def rhs(self, F: np.ndarray) -> np.ndarray:
        out = self.const + self.lin @ F
        for v, u, w, c in self.quad:
            out[v] += c * F[u] * F[w]
        return out

    def jacobian(self, F: np.ndarray) -> np.ndarray:
        J = self.lin.copy()
        for v, u, w, c in self.quad:
            J[v, u] += c * F[w]
            J[v, w] += c * F[u]
        return J

    def second(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        """Second derivative of the right-hand side applied to (a, b)."""
        out = np.zeros(self.size)
        for v, u, w, c in self.quad:
            out[v] += c * (a[u] * b[w] + a[w] * b[u])
        return out

    def first_return_weight(self, F: np.ndarray) -> float:
        """W(F) with U(r) = r W(F) the first-return generating function."""
        return self.hold + sum(p * F[v] for v, p in self.exits)


def _syllable(group: FreeProduct, word: Word) -> tuple[int, int]:
    syl = group.syllables(word)
    if len(syl) != 1:
        raise UnsupportedError(f"atom {''.join(word)!r} spans several syllables")
    return syl[0]


def build_branch_system(mu: FiniteMeasure) -> BranchSystem:
    group = mu.group
    if not isinstance(group, FreeProduct):
        raise UnsupportedError("tree backend needs a free group or a free product of cyclic groups")
    support: dict[int, list[tuple[int, float]]] = {}
    hold = 0.0
    for w, p in mu.atoms:
        if not w:
            hold += p
            continue
        f, e = _syllable(group, w)
        if group.orders[f] == 0 and abs(e) != 1:
            raise UnsupportedError("infinite cyclic factors must carry single-letter steps")
        support.setdefault(f, []).append((e, p))
    variables: list[tuple[int, int]] = []
    for f, m in enumerate(group.orders):
        variables += [(f, 1), (f, -1)] if m == 0 else [(f, k) for k in range(1, m)]
    index = {v: i for i, v in enumerate(variables)}
    n = len(variables)
    const = np.zeros(n)
    lin = np.zeros((n, n))
    quad: dict[tuple[int, int, int], float] = {}
    for g, (f, k) in enumerate(variables):
        m = group.orders[f]
        lin[g, g] += hold
        for fh, steps in support.items():
            for kh, p in steps:
                if fh == f:
                    t = k + kh
                    if m:
                        t %= m
                    if t == 0:
                        const[g] += p
                    elif m:
                        lin[g, index[(f, t)]] += p
                    else:
                        u = index[(f, 1 if t > 0 else -1)]
                        quad[(g, u, u)] = quad.get((g, u, u), 0.0) + p
                else:
                    u = index[(fh, kh)]
                    key = (g, min(u, g), max(u, g))
                    quad[key] = quad.get(key, 0.0) + p
    exits = [(index[(f, e)], p) for f, steps in support.items() for e, p in steps]
    return BranchSystem(mu, variables, const, lin,
                        [(v, u, w, c) for (v, u, w), c in sorted(quad.items())],
                        hold, exits, index)


def solve_branch(sys: BranchSystem, r: float, tol: float = 1e-15, max_iter: int = 500,
                 cap: float = 1e150) -> np.ndarray | None:
    """Minimal nonnegative fixed point at parameter r, or None when there is none.

    Newton's method started at 0 increases monotonically to the least fixed
    point of a monotone polynomial system; once the linearised map reaches
    spectral radius 1 below the fixed point, r exceeds R.
    """
    if r < 0:
        raise ValueError("r must be nonnegative")
    F = np.zeros(sys.size)
    eye = np.eye(sys.size)
    for _ in range(max_iter):
        J = r * sys.jacobian(F)
        if np.max(np.abs(np.linalg.eigvals(J))) >= 1.0:
            return None
        try:
            step = np.linalg.solve(eye - J, r * sys.rhs(F) - F)
        except np.linalg.LinAlgError:
            return None
        F = F + step
        if not np.all(np.isfinite(F)) or F.max(initial=0) > cap:
            return None
        if np.max(np.abs(step)) <= tol * max(1.0, F.max(initial=0)):
            return np.maximum(F, 0.0)
    # linear convergence right at the branch point; the value is still a lower bound
    return np.maximum(F, 0.0)


def _perron_vector(M: np.ndarray) -> np.ndarray:
    vals, vecs = np.linalg.eig(M)
    v = np.abs(np.real(vecs[:, np.argmax(np.real(vals))]))
    return v / v.sum()


@dataclass
class RadiusResult:
    R: float
    F: np.ndarray | None
    bracket: tuple[float, float]


def radius_R(sys: BranchSystem, tol: float = 1e-12) -> RadiusResult:
    """R as the parameter where the Jacobian of the fixed-point map reaches radius 1.

    A bisection on existence brackets R; the bordered system
    F = rP(F), (I - rJ(F)) v = 0, sum v = 1 then pins it with Newton's
    method to machine precision.
    """
    lo, hi = 0.0, 1.0
    while solve_branch(sys, hi) is not None:
        lo, hi = hi, 2 * hi
        if hi > R_INFINITY_PROBE:
            return RadiusResult(math.inf, None, (lo, math.inf))
    while hi - lo > 1e-9 * hi:
        mid = 0.5 * (lo + hi)
        if solve_branch(sys, mid) is None:
            hi = mid
        else:
            lo = mid
    F0 = solve_branch(sys, lo)
    v0 = _perron_vector(lo * sys.jacobian(F0))
    n = sys.size

    def equations(z):
        F, v, r = z[:n], z[n:2 * n], z[-1]
        J = sys.jacobian(F)
        return np.concatenate([F - r * sys.rhs(F), v - r * J @ v, [v.sum() - 1.0]])

    sol = root(equations, np.concatenate([F0, v0, [lo]]), method="hybr", tol=1e-15)
    z = sol.x
    R = float(z[-1])
    if not sol.success and np.max(np.abs(equations(z))) > 1e-12:
        raise NonConvergenceError("bordered Newton system did not converge",
                                  {"bracket": (lo, hi), "message": sol.message})
    if not (lo - 1e-6 * hi <= R <= hi + 1e-6 * hi) or np.any(z[:n] < -1e-12):
        raise NonConvergenceError("bordered solution left the bisection bracket",
                                  {"bracket": (lo, hi), "R": R})
    if abs(R - 0.5 * (lo + hi)) > max(1e-8 * hi, tol):
        # stay with the bracket if Newton wandered to a spurious root
        if not lo <= R <= hi:
            R = 0.5 * (lo + hi)
    return RadiusResult(R, np.maximum(z[:n], 0.0), (lo, hi))


@dataclass
class BranchDerivatives:
    r: float
    F: np.ndarray
    dF: np.ndarray
    d2F: np.ndarray
    G: float
    dG: float
    d2G: float


class TreeGreen:
    """Exact Green oracle for tree-like Cayley graphs.

    All values are closed-form up to floating-point rounding, so intervals
    have width of a few ulps.  At r = R the stored branch-point solution is
    used, which avoids the slow convergence of any iteration there.
    """

    exact = True

    def __init__(self, mu: FiniteMeasure):
        self.mu = mu
        self.group = mu.group
        self.system = build_branch_system(mu)
        rad = radius_R(self.system)
        self.R = rad.R
        self._F_at_R = rad.F
        self._cache: dict[float, np.ndarray] = {}
        self._dcache: dict[float, BranchDerivatives] = {}

    # branch values ----------------------------------------------------
    def branch(self, r: float) -> np.ndarray:
        F = self._cache.get(r)
        if F is not None:
            return F
        if r > self.R * (1 + 1e-12):
            raise DivergenceError(f"r = {r} exceeds R = {self.R}")
        if math.isfinite(self.R) and r >= self.R * (1 - 1e-13):
            F = self._F_at_R
        else:
            F = solve_branch(self.system, r)
            if F is None:
                raise DivergenceError(f"no finite solution at r = {r}")
        self._cache[r] = F
        return F

    def green_e(self, r: float) -> float:
        U = r * self.system.first_return_weight(self.branch(r))
        if U >= 1:
            raise DivergenceError(f"first-return mass {U} >= 1 at r = {r}")
        return 1.0 / (1.0 - U)

    def _factors(self, x: Word, y: Word) -> list[int]:
        """Variable indices whose product is F_r(x, y)."""
        group = self.group
        z = group.reduce(group.invert(tuple(x)) + tuple(y))
        out = []
        for f, e in group.syllables(group.invert(z)):
            m = group.orders[f]
            if m == 0:
                out += [self.system.index[(f, 1 if e > 0 else -1)]] * abs(e)
            else:
                out.append(self.system.index[(f, e)])
        return out

    def first_visit_value(self, x, y, r: float) -> float:
        F = self.branch(r)
        return float(np.prod([F[i] for i in self._factors(self._w(x), self._w(y))]))

    def log_first_visit(self, x, y, r: float) -> float:
        F = self.branch(r)
        return float(sum(math.log(F[i]) if F[i] > 0 else -math.inf
                         for i in self._factors(self._w(x), self._w(y))))

    def log_green(self, x, y, r: float) -> float:
        return math.log(self.green_e(r)) + self.log_first_visit(x, y, r)

    def green_value(self, x, y, r: float) -> float:
        return self.green_e(r) * self.first_visit_value(x, y, r)

    def _w(self, x) -> Word:
        return self.group.reduce(self.group.parse(x))

    def green(self, x, y, r: float) -> GreenValue:
        return GreenValue.exact(self.green_value(x, y, r), r)

    def first_visit(self, x, y, r: float) -> GreenValue:
        return GreenValue.exact(self.first_visit_value(x, y, r), r)

    def sphere_h_sums(self, r: float, k_max: int) -> np.ndarray:
        """sum over |x| = k of G(e,x) G(x,e) for k = 0..k_max, by a syllable recursion.

        H(e, x) is G(e,e)^2 times a product over the syllables of x, so the
        sphere sums obey a transfer recursion indexed by the last factor.
        """
        group = self.group
        g0 = self.green_e(r)
        weights = []  # per factor: list of (length, weight)
        for f, m in enumerate(group.orders):
            exps = range(1, m) if m else [e for k in range(1, k_max + 1) for e in (k, -k)]
            row = []
            for e in exps:
                w = group._syllable_letters(f, e)
                if len(w) <= k_max:
                    row.append((len(w), self.first_visit_value((), w, r)
                                * self.first_visit_value(w, (), r)))
            weights.append(row)
        nf = len(group.orders)
        A = np.zeros((k_max + 1, nf))
        total = np.zeros(k_max + 1)
        total[0] = 1.0
        for k in range(1, k_max + 1):
            for f in range(nf):
                acc = 0.0
                for ln, w in weights[f]:
                    if ln <= k:
                        acc += w * (total[k - ln] - A[k - ln, f])
                A[k, f] = acc
            total[k] = A[k].sum()
        return g0 * g0 * total

    # derivatives ---------------------------------------------------------
    def derivatives(self, r: float) -> BranchDerivatives:
        d = self._dcache.get(r)
        if d is not None:
            return d
        sys = self.system
        F = self.branch(r)
        J = sys.jacobian(F)
        M = np.eye(sys.size) - r * J
        dF = np.linalg.solve(M, sys.rhs(F))
        d2F = np.linalg.solve(M, 2 * J @ dF + r * sys.second(dF, dF))
        W = sys.first_return_weight(F)
        dW = sum(p * dF[v] for v, p in sys.exits)
        d2W = sum(p * d2F[v] for v, p in sys.exits)
        U, dU, d2U = r * W, W + r * dW, 2 * dW + r * d2W
        G = 1.0 / (1.0 - U)
        dG = dU * G * G
        d2G = d2U * G * G + 2 * dU * dU * G ** 3
        d = BranchDerivatives(r, F, dF, d2F, G, dG, d2G)
        self._dcache[r] = d
        return d

    def dgreen(self, x, y, r: float) -> float:
        """d/dr G_r(x, y) by the product rule along the syllable factorisation."""
        d = self.derivatives(r)
        idx = self._factors(self._w(x), self._w(y))
        vals = [d.F[i] for i in idx]
        prod = float(np.prod(vals))
        dprod = 0.0
        for j, i in enumerate(idx):
            dprod += d.dF[i] * float(np.prod(vals[:j] + vals[j + 1:]))
        return d.dG * prod + d.G * dprod

    def eta(self, r: float) -> float:
        """(r G_r(e,e))' = sum_z G_r(e,z) G_r(z,e)."""
        d = self.derivatives(r)
        return d.G + r * d.dG

    def triple_sum(self, r: float) -> float:
        """sum_{x,y} G(e,y) G(y,x) G(x,e) = (r^2 G_r(e,e))'' / 2."""
        d = self.derivatives(r)
        return d.G + 2 * r * d.dG + 0.5 * r * r * d.d2G

    def phi(self, x, r: float) -> float:
        """Phi_r(x) = (r G_r(e,x))' / G_r(e,x)."""
        return 1.0 + r * self.dgreen((), x, r) / self.green_value((), x, r)


# ---------------------------------------------------------------------------
# coefficient extraction


@dataclass
class CoefficientSeries:
    """p_n(e,e) stored as p_n * scale^n to avoid underflow."""

    coeffs: np.ndarray
    scale: float
    precision: str
    parity: str
    errors: np.ndarray | None = None

    @property
    def n_max(self) -> int:
        return len(self.coeffs) - 1

    @property
    def values(self) -> np.ndarray:
        n = np.arange(len(self.coeffs))
        c = np.asarray(self.coeffs, dtype=float)
        with np.errstate(divide="ignore", under="ignore"):
            return np.where(c > 0, np.exp(np.log(np.where(c > 0, c, 1.0)) - n * math.log(self.scale)), 0.0)

    def rescaled(self, R: float) -> np.ndarray:
        c = np.asarray(self.coeffs, dtype=float)
        if R == self.scale:
            return c
        n = np.arange(len(c))
        with np.errstate(divide="ignore"):
            return np.where(c > 0, np.exp(np.log(np.where(c > 0, c, 1.0)) + n * math.log(R / self.scale)), 0.0)


_DTYPES = {"float64": np.float64, "extended": np.longdouble}


def series_coefficients(sys: BranchSystem, n_max: int, precision: str = "extended",
                        scale: float | None = None) -> CoefficientSeries:
    """Expand the branch system order by order: F_s, then U, then 1/(1-U).

    Every term is a sum of nonnegative products, so the recursion has no
    cancellation; scaling by R^n keeps the numbers of order n^{-3/2}.
    ``precision='exact'`` works in rationals (unscaled) for n_max <= 200.
    """
    if n_max > 100_000:
        raise ValueError("n_max is limited to 1e5")
    parity = sys.mu.parity
    if precision == "exact":
        return _exact_coefficients(sys, n_max, parity)
    if precision not in _DTYPES:
        raise ValueError(f"unknown precision mode {precision!r}")
    dtype = _DTYPES[precision]
    if scale is None:
        R = radius_R(sys).R
        scale = R if math.isfinite(R) else 1.0
    s = dtype(scale)
    V, N = sys.size, n_max
    f = np.zeros((V, N + 1), dtype=dtype)
    const = sys.const.astype(dtype)
    lin = sys.lin.astype(dtype)
    pairs = sorted({(u, w) for _, u, w, _ in sys.quad})
    terms = [(v, pairs.index((u, w)), dtype(c)) for v, u, w, c in sys.quad]
    conv = np.zeros(len(pairs), dtype=dtype)
    for n in range(1, N + 1):
        col = lin @ f[:, n - 1]
        if n == 1:
            col = col + const
        if n >= 3:
            for k, (u, w) in enumerate(pairs):
                conv[k] = np.dot(f[u, 1:n - 1], f[w, n - 2:0:-1])
            for v, k, c in terms:
                col[v] += c * conv[k]
        f[:, n] = s * col
    u = np.zeros(N + 1, dtype=dtype)
    u[1] = s * dtype(sys.hold)
    for v, p in sys.exits:
        u[2:] += s * dtype(p) * f[v, 1:N]
    g = np.zeros(N + 1, dtype=dtype)
    g[0] = 1
    for n in range(1, N + 1):
        g[n] = np.dot(u[1:n + 1], g[n - 1::-1])
    if parity == "period-2":
        g[1::2] = 0
    live = g[0::2] if parity == "period-2" else g
    if _underflowed(live, np.finfo(dtype).tiny):
        raise PrecisionError("coefficients underflowed; use extended precision or a larger scale")
    return CoefficientSeries(g, float(scale), precision, parity)


def _underflowed(live: np.ndarray, tiny) -> bool:
    # p_{m+n} >= p_m p_n, so after two consecutive positive terms a zero can only be underflow
    if np.any((live > 0) & (live < tiny)):
        return True
    pos = np.flatnonzero((live[:-1] > 0) & (live[1:] > 0))
    return bool(len(pos) and np.any(live[pos[0]:] == 0))


def _frac(x: float) -> Fraction:
    return Fraction(x).limit_denominator(10 ** 12)


def _exact_coefficients(sys: BranchSystem, n_max: int, parity: str) -> CoefficientSeries:
    if n_max > 200:
        raise ValueError("exact mode is limited to n_max <= 200")
    V, N = sys.size, n_max
    const = [_frac(c) for c in sys.const]
    lin = [[_frac(sys.lin[i, j]) for j in range(V)] for i in range(V)]
    quad = [(v, u, w, _frac(c)) for v, u, w, c in sys.quad]
    f = [[Fraction(0)] * (N + 1) for _ in range(V)]
    for n in range(1, N + 1):
        for v in range(V):
            acc = const[v] if n == 1 else Fraction(0)
            acc += sum((lin[v][u] * f[u][n - 1] for u in range(V) if lin[v][u]), Fraction(0))
            for vv, u, w, c in quad:
                if vv == v and n >= 3:
                    acc += c * sum((f[u][k] * f[w][n - 1 - k] for k in range(1, n - 1)), Fraction(0))
            f[v][n] = acc
    u = [Fraction(0)] * (N + 1)
    if N >= 1:
        u[1] = _frac(sys.hold)
    for v, p in sys.exits:
        for n in range(2, N + 1):
            u[n] += _frac(p) * f[v][n - 1]
    g = [Fraction(1)] + [Fraction(0)] * N
    for n in range(1, N + 1):
        g[n] = sum((u[k] * g[n - k] for k in range(1, n + 1)), Fraction(0))
    return CoefficientSeries(np.array(g, dtype=object), 1.0, "exact", parity)


# ---------------------------------------------------------------------------
# singularity fit


def singularity_fit(oracle: TreeGreen, j_range: tuple[int, int] = (4, 16), corrections: int = 3,
                    h_rel: float = 1e-3) -> FitResult:
    """Exponent of dG_r(e,e)/dr against R - r on the dyadic grid r_j = R(1 - 2^-j).

    Derivatives are centred finite differences of exact values; the fit
    carries half-integer correction terms (see ``branch_fit``).
    """
    R = oracle.R
    if not math.isfinite(R):
        raise UnsupportedError("no singularity for an infinite radius")
    js = list(range(j_range[0], j_range[1] + 1))
    eps = np.array([R * 2.0 ** (-j) for j in js])
    deriv = []
    for e in eps:
        r, h = R - e, e * h_rel
        deriv.append((oracle.green_e(r + h) - oracle.green_e(r - h)) / (2 * h))
    deriv = np.array(deriv)
    beta, amp, res, coef = branch_fit(eps, deriv, corrections)
    plain, _, plain_res = loglog_fit(eps, deriv)
    analytic = np.array([oracle.derivatives(R - e).dG for e in eps])
    return FitResult(beta, amp, res,
                     {"r": (R - eps).tolist(), "j": js, "R": R},
                     {"plain_slope": plain, "plain_residual": plain_res,
                      "corrections": corrections, "correction_coefficients": coef[2:].tolist(),
                      "derivative": deriv.tolist(),
                      "max_rel_fd_error": float(np.max(np.abs(deriv / analytic - 1)))})


def green_exact(sys: BranchSystem, r: float, x: Sequence[str] = (), y: Sequence[str] = ()) -> float:
    """G_r(x, y) from a branch system; convenience wrapper around TreeGreen."""
    return TreeGreen(sys.mu).green_value(tuple(x), tuple(y), r)
