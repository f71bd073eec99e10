"""Asymptotic checks: eta scaling, triple-sum ratios, nu_r functionals, LLT and renewal."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import DiagnosticsError, InsufficientDataError, PreconditionError, PrecisionError
from .fits import FitResult, branch_fit, dyadic_grid, loglog_fit
from .green import eta_partial, h_kernel, sample_words
from .intervals import GreenValue


def _series_arrays(series, R: float):
    """(n, p_n R^n, relative error) for a ReturnSeries or CoefficientSeries."""
    vals = np.asarray(series.rescaled(R), dtype=float)
    n = np.arange(len(vals))
    errs = getattr(series, "errors", None)
    if errs is None:
        rel = np.zeros(len(vals))
    else:
        raw = np.asarray(series.values, dtype=float)
        with np.errstate(divide="ignore", invalid="ignore"):
            rel = np.where(raw > 0, np.asarray(errs, dtype=float) / raw, 0.0)
    return n, vals, rel


def _parity_mask(n: np.ndarray, series, parity: str | None) -> np.ndarray:
    periodic = getattr(series, "parity", "") == "period-2"
    if parity is None:
        if periodic:
            raise DiagnosticsError("series is periodic; choose parity='even' or 'odd'")
        return np.ones(len(n), dtype=bool)
    if parity not in ("even", "odd"):
        raise ValueError("parity must be 'even', 'odd' or None")
    return n % 2 == (0 if parity == "even" else 1)


# ---------------------------------------------------------------------------
# eta scaling


def eta_samples(oracle, j_lo: int = 6, j_hi: int = 14) -> tuple[np.ndarray, np.ndarray]:
    r = dyadic_grid(oracle.R, j_lo, j_hi)
    return r, np.array([oracle.eta(x) for x in r])


def eta_scaling_fit(r, eta, R: float, amenable: bool = False, corrections: int = 3) -> FitResult:
    """Exponent of eta against R - r, with the spread of eta * sqrt(R - r).

    The exponent comes from a log-log fit carrying half-integer analytic
    corrections; the plain slope is kept in ``diagnostics["plain_exponent"]``.
    """
    if amenable:
        raise PreconditionError("eta scaling is only meaningful for non-amenable groups")
    r = np.asarray(r, dtype=float)
    eta = np.asarray(eta, dtype=float)
    if len(r) < 8:
        raise InsufficientDataError("eta_scaling_fit needs at least 8 grid points")
    eps = R - r
    slope, icpt, res = loglog_fit(eps, eta)
    beta, amp, cres, _ = branch_fit(eps, eta, corrections)
    scaled = eta * np.sqrt(eps)
    diag = {"max_min_ratio": float(scaled.max() / scaled.min()), "scaled": scaled.tolist(),
            "plain_exponent": slope, "plain_residual": res, "corrections": corrections}
    return FitResult(beta, amp, cres, {"r": r.tolist(), "R": R}, diag)


def eta_pressure_consistency(eta, pressure) -> dict:
    """eta(r) * (-P(phi_r)) should stay within a constant band."""
    prod = np.asarray(eta, dtype=float) * -np.asarray(pressure, dtype=float)
    return {"min": float(prod.min()), "max": float(prod.max()),
            "ratio": float(prod.max() / prod.min())}


# ---------------------------------------------------------------------------
# crude and refined triple-sum ratios


def _binomial_tail(q: float, N: int) -> float:
    """sum_{n > N} C(n+2, 2) q^n, summed until the terms are negligible."""
    total, n = 0.0, N + 1
    term = math.comb(n + 2, 2) * q ** n
    while term > 1e-18 * max(total, 1e-300) and n < N + 200000:
        total += term
        n += 1
        term = math.comb(n + 2, 2) * q ** n
    return total


def series_triple_sums(values: np.ndarray, r: float, rho_upper: float) -> tuple[GreenValue, GreenValue]:
    """eta(r) and the triple sum from return probabilities.

    eta = sum (n+1) r^n p_n and T = sum C(n+2, 2) r^n p_n; the tails use
    p_n <= rho^n.
    """
    p = np.asarray(values, dtype=float)
    n = np.arange(len(p))
    w = r ** n * p
    eta = float(np.sum((n + 1) * w))
    T = float(np.sum((n + 1) * (n + 2) / 2 * w))
    q = r * rho_upper
    if q >= 1:
        return GreenValue(eta, math.inf, r), GreenValue(T, math.inf, r)
    N = len(p) - 1
    t_eta = q ** (N + 1) * ((N + 2) - (N + 1) * q) / (1 - q) ** 2
    t_T = _binomial_tail(q, N)
    return (GreenValue(eta, t_eta + 1e-14 * eta, r), GreenValue(T, t_T + 1e-14 * T, r))


@dataclass
class CrudeRatio:
    r: float
    closed_form: GreenValue | None
    series: GreenValue | None

    @property
    def agree(self) -> bool:
        if self.closed_form is None or self.series is None:
            return True
        a, b = self.closed_form, self.series
        return a.lower <= b.upper and b.lower <= a.upper


def crude_ratio(r: float, oracle=None, series_values=None, rho_upper: float | None = None) -> CrudeRatio:
    """T(r) / eta(r)^3 from the tree closed form and/or a truncated power series."""
    closed = None
    if oracle is not None and getattr(oracle, "exact", False):
        if r == 0:
            closed = GreenValue.exact(1.0, r)
        else:
            closed = GreenValue.exact(oracle.triple_sum(r) / oracle.eta(r) ** 3, r, rel=1e-12)
    ser = None
    if series_values is not None:
        if rho_upper is None:
            raise PreconditionError("the series route needs an upper bound for rho")
        eta, T = series_triple_sums(series_values, r, rho_upper)
        ser = T / (eta * eta * eta)
    return CrudeRatio(r, closed, ser)


@dataclass
class TripleSumReport:
    r: np.ndarray
    c_hat: np.ndarray
    variation: float
    corrected_c: float
    correction: float
    corrected_variation: float
    phi_bound: float
    phi_samples: int

    def to_dict(self):
        return {"r": self.r.tolist(), "c_hat": self.c_hat.tolist(), "variation": self.variation,
                "corrected_c": self.corrected_c, "correction": self.correction,
                "corrected_variation": self.corrected_variation,
                "phi_bound": self.phi_bound, "phi_samples": self.phi_samples}


def triple_sum_ratio(oracle, r_grid: Sequence[float], phi_samples: int = 50, seed: int = 0,
                     max_len: int = 8) -> TripleSumReport:
    """c_hat(r) = T(r)/eta(r)^3 and its 1/eta-corrected limit.

    Since T = c eta^3 + O(eta^2), regressing c_hat on 1/eta separates c from
    the leading correction; ``corrected_variation`` is the spread of
    c_hat - d/eta.  The Phi_r bound is spot-checked on sampled words.
    """
    r = np.asarray(r_grid, dtype=float)
    eta = np.array([oracle.eta(x) for x in r])
    T = np.array([oracle.triple_sum(x) for x in r])
    c_hat = T / eta ** 3
    variation = float((c_hat.max() - c_hat.min()) / np.mean(c_hat))
    A = np.column_stack([np.ones(len(r)), 1 / eta])
    (c, d), *_ = np.linalg.lstsq(A, c_hat, rcond=None)
    corrected = c_hat - d / eta
    corr_var = float((corrected.max() - corrected.min()) / abs(np.mean(corrected)))
    words = sample_words(oracle.group, phi_samples, max_len, seed)
    bound = 0.0
    for x in r:
        e = oracle.eta(x)
        for w in words:
            bound = max(bound, oracle.phi(w, x) / ((1 + len(w)) * e))
    return TripleSumReport(r, c_hat, variation, float(c), float(d), corr_var, bound, len(words))


# ---------------------------------------------------------------------------
# nu_r functionals


def prefix_indicator(prefix) -> Callable:
    prefix = tuple(prefix)
    return lambda w: 1.0 if tuple(w[: len(prefix)]) == prefix else 0.0


def martin_ratio(oracle, x, r: float) -> Callable:
    """y -> G_r(x, y) / G_r(e, y)."""
    return lambda y: oracle.green(x, y, r).mid / oracle.green((), y, r).mid


def _nu_sphere(oracle, f, r: float, k_max: int, f_max: float) -> GreenValue:
    group = oracle.group
    num = den = 0.0
    sums = []
    for k in range(k_max + 1):
        s_lo = s_hi = 0.0
        for w in group.sphere_words(k):
            h = h_kernel(oracle, (), w, r)
            s_lo += h.lower
            s_hi += h.upper
            num += h.mid * f(w)
        den += 0.5 * (s_lo + s_hi)
        sums.append(GreenValue.from_bounds(s_lo, s_hi, r))
    tail = eta_partial(oracle, r, k_max, sums)
    extra = tail.upper - sum(s.upper for s in sums)
    if not math.isfinite(extra):
        return GreenValue.from_bounds(0.0, math.inf, r)
    extra = max(extra, 0.0) + sum(s.width for s in sums)
    lo = num / (den + extra)
    hi = (num + f_max * extra) / den
    return GreenValue.from_bounds(lo, hi, r)


def _nu_operator(oracle, prefix, r: float, m: int) -> GreenValue:
    """Cylinder functional through the resolvent of the transfer matrix."""
    import scipy.sparse as sp
    import scipy.sparse.linalg as spla

    from .automaton import build_geodesic_automaton
    from .shift import build_phi_r, cell_matrix, path_label, start_indicator

    aut = build_geodesic_automaton(oracle.group)
    pot = build_phi_r(aut, oracle, r, m)
    cm = cell_matrix(pot)
    prefix = tuple(prefix)
    ind = start_indicator(cm, aut)
    cyl = np.array([1.0 if ind[i] and (path_label(aut, c)[: len(prefix)] == prefix[: len(c)])
                    and len(c) >= min(len(prefix), cm.depth) else 0.0
                    for i, c in enumerate(cm.cells)])
    if len(prefix) > cm.depth:
        raise PreconditionError("cylinder longer than the cell depth")
    M = sp.identity(len(cm.cells), format="csc") - cm.matrix.tocsc()
    empty = cm.index[()]
    # one step of L first, then the resolvent: sum_{n>=1} L^n f
    tot = spla.spsolve(M, cm.matrix @ ind)[empty]
    part = spla.spsolve(M, cm.matrix @ cyl)[empty]
    value = (part + (1.0 if not prefix else 0.0)) / (1.0 + tot)
    return GreenValue.exact(float(value), r, rel=1e-10)


def nu_functional(oracle, f, r: float, k_max: int = 10, method: str = "sphere",
                  f_max: float | None = None, m: int = 4) -> GreenValue:
    """Integral of f against nu_r, the H_r(e, .)-weighted probability on the group.

    ``f`` is a callable on reduced words (``method="sphere"``) or a letter
    prefix naming a cylinder (``method="operator"``).
    """
    if method == "operator":
        return _nu_operator(oracle, f, r, m)
    if not callable(f):
        f = prefix_indicator(f)
    if f_max is None:
        f_max = 1.0
    return _nu_sphere(oracle, f, r, k_max, f_max)


def nu_convergence_probe(oracle, f, r_grid: Sequence[float], k_max: int = 10,
                         f_max: float = 1.0) -> dict:
    vals = [nu_functional(oracle, f, r, k_max, f_max=f_max) for r in r_grid]
    mids = [v.mid for v in vals]
    diffs = [abs(b - a) for a, b in zip(mids, mids[1:])]
    return {"r": list(r_grid), "values": mids, "widths": [v.width for v in vals],
            "successive_differences": diffs}


# ---------------------------------------------------------------------------
# local limit and Cesaro checks


def llt_fit(series, R: float, n_range: tuple[int, int] = (200, 2000), parity: str | None = None,
            template: float = 1.5, plateau_range: tuple[int, int] | None = None) -> FitResult:
    """Regression of log(p_n R^n) on log n over the selected parity class."""
    n, a, _ = _series_arrays(series, R)
    mask = _parity_mask(n, series, parity) & (n >= n_range[0]) & (n <= n_range[1]) & (a > 0)
    if mask.sum() < 3:
        raise InsufficientDataError("series too short for the requested range")
    slope, icpt, res = loglog_fit(n[mask], a[mask])
    lo, hi = plateau_range or n_range
    pm = mask & (n >= lo) & (n <= hi)
    plateau = a[pm] * n[pm] ** template
    diag = {"plateau_variation": float((plateau.max() - plateau.min()) / plateau.mean()),
            "plateau_range": [int(lo), int(hi)], "template": template,
            "points": int(mask.sum()), "parity": parity}
    return FitResult(slope, math.exp(icpt), res, {"n_min": int(n_range[0]), "n_max": int(n_range[1]),
                                                  "R": R}, diag)


def cesaro_check(series, R: float, n_list: Sequence[int], template: float = 0.5,
                 mismatch_tolerance: float = 0.1) -> dict:
    """Partial sums S_n = sum_{k<=n} k R^k p_k against the n^template profile."""
    n, a, _ = _series_arrays(series, R)
    S = np.cumsum(n * a)
    n_list = [int(x) for x in n_list]
    if max(n_list) >= len(S):
        raise InsufficientDataError(f"series has {len(S) - 1} terms, need {max(n_list)}")
    ratios = [float(S[k] / k ** template) for k in n_list]
    changes = [abs(b / a_ - 1) for a_, b in zip(ratios, ratios[1:])]
    growth, _, _ = loglog_fit(n_list, [S[k] for k in n_list], min_points=2)
    return {"n": n_list, "partial_sums": [float(S[k]) for k in n_list], "ratios": ratios,
            "successive_changes": changes, "growth_exponent": growth,
            "mismatch": abs(growth - template) > mismatch_tolerance,
            "nondecreasing": bool(np.all(np.diff(S) >= 0))}


# ---------------------------------------------------------------------------
# renewal equation


@dataclass
class RenewalSeries:
    """First-return quantities f_n R^n with triangular error bounds."""

    values: np.ndarray
    errors: np.ndarray
    R: float
    last_trusted: int
    reconstruction_error: float
    ratio: np.ndarray = field(repr=False)
    target: float | None = None

    @property
    def total_mass(self) -> float:
        return float(self.values[: self.last_trusted + 1].sum())

    def ratio_report(self, n_range: tuple[int, int], parity: str | None = "even") -> dict:
        n = np.arange(len(self.ratio))
        sel = (n >= n_range[0]) & (n <= min(n_range[1], self.last_trusted))
        if parity:
            sel &= n % 2 == (0 if parity == "even" else 1)
        sel &= np.isfinite(self.ratio)
        r = self.ratio[sel]
        out = {"min": float(r.min()), "max": float(r.max()), "target": self.target}
        if self.target:
            out["max_relative_deviation"] = float(np.max(np.abs(r / self.target - 1)))
        return out


def renewal_inverse(p: np.ndarray, p_err: np.ndarray | None = None):
    """f_n = p_n - sum_{k=1}^{n-1} f_k p_{n-k}, with p_0 = 1, and its error bound."""
    p = np.asarray(p, dtype=float)
    if abs(p[0] - 1) > 1e-12:
        raise PreconditionError("renewal inverse needs p_0 = 1")
    e = np.zeros(len(p)) if p_err is None else np.asarray(p_err, dtype=float)
    N = len(p)
    f = np.zeros(N)
    ef = np.zeros(N)
    for n in range(1, N):
        f[n] = p[n] - np.dot(f[1:n], p[n - 1:0:-1])
        ef[n] = e[n] + np.dot(ef[1:n], p[n - 1:0:-1]) + np.dot(np.abs(f[1:n]), e[n - 1:0:-1])
    return f, ef


def renewal_reconstruct(f: np.ndarray, N: int) -> np.ndarray:
    """p_n = [n = 0] + sum_{k=1}^{n} f_k p_{n-k}."""
    p = np.zeros(N + 1)
    p[0] = 1.0
    for n in range(1, N + 1):
        p[n] = np.dot(f[1:n + 1], p[n - 1::-1][:n])
    return p


def renewal_first_return(series, R: float, G_R: float | None = None,
                         trust_factor: float = 0.5) -> RenewalSeries:
    """First-return probabilities from return probabilities, in R-rescaled units."""
    n, a, rel = _series_arrays(series, R)
    a_err = rel * a
    f, ef = renewal_inverse(a, a_err)
    last = len(f) - 1
    for k in range(1, len(f)):
        if ef[k] > trust_factor * abs(f[k]) and f[k] != 0:
            last = k - 1
            break
    recon = renewal_reconstruct(f[: last + 1], last)
    scale = np.maximum(np.abs(a[: last + 1]), 1e-300)
    rec_err = float(np.max(np.abs(recon - a[: last + 1]) / np.maximum(scale, 1.0)))
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(a > 0, f / a, np.nan)
    target = None if G_R is None else 1.0 / G_R ** 2
    if f[: last + 1].sum() > 1 + ef[: last + 1].sum() + 1e-12:
        raise PrecisionError("first-return mass exceeds 1 beyond the propagated error")
    return RenewalSeries(f, ef, R, last, rec_err, ratio, target)
