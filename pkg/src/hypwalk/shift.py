"""Subshift of a geodesic automaton: components, cylinder potentials, transfer operators.

A path is a tuple of edge indices into ``aut.edges``.  Functions on paths are
discretised on cells, the paths of length at most ``d = max(m - 1, 1)``; the
transfer operator prepends one edge, so the cell matrix is

    M[c, (e c)[:d]] = exp(phi((e c)[:m]))

for every edge e whose target is the source of c (any edge when c is empty).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import reduce as _fold
from math import gcd
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components

from .automaton import GeodesicAutomaton
from .errors import NonConvergenceError, PrecisionError
from .fits import FitResult, loglog_fit

EdgePath = tuple[int, ...]


# ---------------------------------------------------------------------------
# component graph


@dataclass(frozen=True)
class Component:
    id: int
    states: tuple[int, ...]
    period: int
    classes: tuple[tuple[int, ...], ...]
    trivial: bool  # a single state without a self-loop carries no cycle


@dataclass(frozen=True)
class ComponentDAG:
    components: tuple[Component, ...]
    edges: frozenset  # (i, j): some edge leads from component i to component j
    state_component: tuple[int, ...]

    def reachable_from(self, i: int) -> set[int]:
        out, stack = set(), [i]
        while stack:
            u = stack.pop()
            for a, b in self.edges:
                if a == u and b not in out:
                    out.add(b)
                    stack.append(b)
        return out

    def nontrivial(self) -> list[Component]:
        return [c for c in self.components if not c.trivial]


def scc_decompose(aut: GeodesicAutomaton) -> ComponentDAG:
    n = aut.n_states
    rows = [u for u, _, v in aut.edges]
    cols = [v for u, _, v in aut.edges]
    adj = sp.csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(n, n))
    _, labels = connected_components(adj, directed=True, connection="strong")
    # relabel by smallest contained state
    order = {}
    for s in range(n):
        order.setdefault(int(labels[s]), len(order))
    comp_of = tuple(order[int(labels[s])] for s in range(n))
    members: dict[int, list[int]] = {}
    for s in range(n):
        members.setdefault(comp_of[s], []).append(s)
    comps = []
    for cid in range(len(members)):
        states = members[cid]
        inner = [(u, v) for u, _, v in aut.edges if comp_of[u] == cid and comp_of[v] == cid]
        if not inner:
            comps.append(Component(cid, tuple(states), 1, (tuple(states),), True))
            continue
        level = {states[0]: 0}
        queue = [states[0]]
        while queue:
            u = queue.pop(0)
            for a, b in inner:
                if a == u and b not in level:
                    level[b] = level[u] + 1
                    queue.append(b)
        p = _fold(gcd, (abs(level[u] + 1 - level[v]) for u, v in inner), 0) or 1
        classes = tuple(tuple(s for s in states if level[s] % p == j) for j in range(p))
        comps.append(Component(cid, tuple(states), p, classes, False))
    dag_edges = frozenset((comp_of[u], comp_of[v]) for u, _, v in aut.edges
                          if comp_of[u] != comp_of[v])
    return ComponentDAG(tuple(comps), dag_edges, comp_of)


# ---------------------------------------------------------------------------
# paths


def _paths_by_length(aut: GeodesicAutomaton, m: int) -> list[list[EdgePath]]:
    """All edge paths of each length 0..m, starting anywhere."""
    out_by_state: dict[int, list[int]] = {}
    for i, (u, _, _) in enumerate(aut.edges):
        out_by_state.setdefault(u, []).append(i)
    levels: list[list[EdgePath]] = [[()], [(i,) for i in range(len(aut.edges))]]
    for _ in range(2, m + 1):
        nxt = []
        for p in levels[-1]:
            end = aut.edges[p[-1]][2]
            nxt.extend(p + (i,) for i in out_by_state.get(end, []))
        levels.append(nxt)
    return levels[: m + 1]


def path_label(aut: GeodesicAutomaton, path: EdgePath) -> tuple[str, ...]:
    return tuple(aut.edges[i][1] for i in path)


@dataclass
class CylinderPotential:
    """phi on edge paths of length 1..m; longer paths are read through their first m edges."""

    aut: GeodesicAutomaton
    m: int
    values: dict[EdgePath, float]
    variation: dict[int, float] = field(default_factory=dict)
    widths: float = 0.0
    meta: dict = field(default_factory=dict)

    def __call__(self, path: EdgePath) -> float:
        return self.values[path[: self.m]]

    @classmethod
    def from_function(cls, aut: GeodesicAutomaton, m: int,
                      fn: Callable[[EdgePath], float]) -> "CylinderPotential":
        levels = _paths_by_length(aut, m + 1)
        values = {p: fn(p) for lvl in levels[1: m + 1] for p in lvl}
        var = 0.0
        for p in levels[m + 1]:
            var = max(var, abs(fn(p) - values[p[:m]]))
        return cls(aut, m, values, {m: var})

    @classmethod
    def constant(cls, aut: GeodesicAutomaton, m: int, value: float = 0.0) -> "CylinderPotential":
        return cls.from_function(aut, m, lambda p: value)


def build_phi_r(aut: GeodesicAutomaton, oracle, r: float, m: int = 8,
                max_width: float = 1e-6) -> CylinderPotential:
    """phi_r(w) = log H_r(e, alpha(w)) - log H_r(e, alpha(sigma w)) on depth-m cylinders."""
    from .green import h_kernel

    group = oracle.group
    cache: dict[tuple, tuple[float, float]] = {}

    def logH(word):
        w = group.reduce(word)
        v = cache.get(w)
        if v is None:
            h = h_kernel(oracle, (), w, r)
            if h.lower <= 0:
                raise PrecisionError(f"H_r(e, {''.join(w)}) is not bounded away from 0")
            v = (math.log(h.mid), math.log(h.upper) - math.log(h.lower))
            cache[w] = v
        return v

    worst = 0.0

    def phi(path):
        nonlocal worst
        lab = path_label(aut, path)
        a, wa = logH(lab)
        b, wb = logH(lab[1:])
        worst = max(worst, wa + wb)
        return a - b

    pot = CylinderPotential.from_function(aut, m, phi)
    pot.widths = worst
    pot.meta = {"r": r, "oracle": type(oracle).__name__}
    if worst > max(max_width, pot.variation[m]):
        raise PrecisionError(f"potential interval width {worst:.3g} exceeds the variation scale")
    return pot


# ---------------------------------------------------------------------------
# transfer matrix


@dataclass
class CellMatrix:
    cells: list[EdgePath]
    index: dict[EdgePath, int]
    matrix: sp.csr_matrix
    depth: int


def cell_matrix(pot: CylinderPotential) -> CellMatrix:
    aut, m = pot.aut, pot.m
    d = max(m - 1, 1)
    cells = [p for lvl in _paths_by_length(aut, d) for p in lvl]
    index = {c: i for i, c in enumerate(cells)}
    into: dict[int, list[int]] = {}
    for i, (_, _, v) in enumerate(aut.edges):
        into.setdefault(v, []).append(i)
    all_edges = list(range(len(aut.edges)))
    rows, cols, vals = [], [], []
    for c in cells:
        pre = all_edges if not c else into.get(aut.edges[c[0]][0], [])
        for e in pre:
            nc = (e,) + c
            rows.append(index[c])
            cols.append(index[nc[:d]])
            vals.append(math.exp(pot(nc[:m])))
    M = sp.csr_matrix((vals, (rows, cols)), shape=(len(cells), len(cells)))
    return CellMatrix(cells, index, M, d)


def export_triplets(cm: CellMatrix, path) -> None:
    coo = cm.matrix.tocoo()
    lines = ["# row col value"] + [f"{i} {j} {v:.17g}" for i, j, v in zip(coo.row, coo.col, coo.data)]
    Path(path).write_text("\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# Perron data


@dataclass(frozen=True)
class PerronData:
    component: int
    pressure: float
    period: int
    cells: tuple[EdgePath, ...]
    right: np.ndarray
    left: np.ndarray
    gap: float
    residual: float
    iterations: int


def _component_cells(cm: CellMatrix, aut: GeodesicAutomaton, comp: Component) -> list[int]:
    states = set(comp.states)
    out = []
    for i, c in enumerate(cm.cells):
        if len(c) != cm.depth:
            continue
        if all(aut.edges[e][0] in states and aut.edges[e][2] in states for e in c):
            out.append(i)
    return out


def _power(M: sp.csr_matrix, p: int, tol: float, max_iter: int):
    n = M.shape[0]
    x = np.ones(n) / n
    devs = []
    history = [x]
    it = 0
    lam_p = prev = math.nan
    while it < max_iter:
        for _ in range(p):
            y = M @ x
            s = y.sum()
            if s <= 0:
                return 0.0, x, devs, it
            x = y / s
            history.append(x)
            it += 1
        # growth over one period on the pre-normalisation iterate
        z = x
        for _ in range(p):
            z = M @ z
        lam_p = z.sum() / x.sum()
        devs.append(np.abs(z / z.sum() - x).sum())
        if abs(lam_p - prev) <= tol * lam_p and devs[-1] <= math.sqrt(tol):
            break
        prev = lam_p
    else:
        raise NonConvergenceError("power iteration did not converge",
                                  {"iterations": it, "last_deviations": devs[-5:]})
    return lam_p ** (1.0 / p), x, devs, it


def pressure_component(pot: CylinderPotential, comp: Component, cm: CellMatrix | None = None,
                       tol: float = 1e-14, max_iter: int = 20000) -> PerronData:
    """Pressure and normalised Perron data of ``comp`` on full-length cells."""
    cm = cm or cell_matrix(pot)
    idx = _component_cells(cm, pot.aut, comp)
    if comp.trivial or not idx:
        empty = np.zeros(len(idx))
        return PerronData(comp.id, -math.inf, comp.period, tuple(cm.cells[i] for i in idx),
                          empty, empty, 0.0, 0.0, 0)
    M = cm.matrix[idx][:, idx].tocsr()
    p = comp.period
    lam, x, devs, it = _power(M, p, tol, max_iter)
    lamT, y, _, _ = _power(M.T.tocsr(), p, tol, max_iter)
    # Cesaro average over one period gives the invariant vectors
    h = np.zeros_like(x)
    v = x.copy()
    for j in range(p):
        h += v / lam ** j
        v = M @ v
    lft = np.zeros_like(y)
    v = y.copy()
    MT = M.T.tocsr()
    for j in range(p):
        lft += v / lam ** j
        v = MT @ v
    norm = float(h @ lft)
    h, lft = h / math.sqrt(norm), lft / math.sqrt(norm)
    residual = float(np.abs(M @ h - lam * h).sum() / max(np.abs(h).sum(), 1e-300))
    if len(devs) >= 3 and devs[-2] > 0:
        ratio = devs[-1] / devs[-2]
        gap = -math.log(ratio) / p if 0 < ratio < 1 else 0.0
    else:
        gap = math.inf
    return PerronData(comp.id, math.log(lam), p, tuple(cm.cells[i] for i in idx), h, lft,
                      gap, residual, it)


def eigenmeasure_check(pot: CylinderPotential, perron: PerronData, cm: CellMatrix | None = None) -> dict:
    """lambda(c') <= e^{-P} max(M) lambda(sigma c') for every full-length cell c'."""
    cm = cm or cell_matrix(pot)
    pos = {c: k for k, c in enumerate(perron.cells)}
    if not pos:
        return {"holds": True, "worst": 0.0}
    comp_idx = [cm.index[c] for c in perron.cells]
    M = cm.matrix[comp_idx][:, comp_idx]
    C = math.exp(-perron.pressure) * M.max()
    worst = 0.0
    Mc = M.tocsc()
    for k in range(len(comp_idx)):
        col = Mc[:, k]
        pulled = float(sum(perron.left[i] for i in col.indices))
        if perron.left[k] > 0:
            worst = max(worst, perron.left[k] / (C * pulled) if pulled > 0 else math.inf)
    return {"holds": worst <= 1 + 1e-9, "worst": worst, "C": C}


# ---------------------------------------------------------------------------
# pressure along r


@dataclass
class PressureTable:
    rows: list[dict]
    R: float
    flags: dict

    def csv_rows(self):
        return [(row["r"], row["component"], row["pressure"], row["gap"]) for row in self.rows]

    def curve(self, component: int | None = None) -> tuple[np.ndarray, np.ndarray]:
        rows = [row for row in self.rows if component is None and row["maximal"]
                or row["component"] == component]
        by_r: dict[float, float] = {}
        for row in rows:
            by_r[row["r"]] = max(by_r.get(row["r"], -math.inf), row["pressure"])
        r = np.array(sorted(by_r))
        return r, np.array([by_r[x] for x in r])


def pressure_curve(aut: GeodesicAutomaton, oracle, r_grid: Sequence[float], m: int = 8,
                   tol_at_R: float = 1e-8) -> PressureTable:
    dag = scc_decompose(aut)
    rows = []
    monotone = True
    prev_max = -math.inf
    at_R = None
    for r in r_grid:
        pot = build_phi_r(aut, oracle, r, m)
        cm = cell_matrix(pot)
        data = [pressure_component(pot, c, cm) for c in dag.nontrivial()]
        pmax = max(d.pressure for d in data)
        tol = 10 * (max(d.residual for d in data) + pot.variation[m])
        for d in data:
            rows.append({"r": r, "component": d.component, "pressure": d.pressure, "gap": d.gap,
                         "ratio": d.pressure / pmax if pmax != 0 else 1.0,
                         "maximal": d.pressure >= pmax - tol})
        if pmax < prev_max - tol:
            monotone = False
        prev_max = pmax
        if math.isfinite(oracle.R) and abs(r - oracle.R) <= 1e-12 * oracle.R:
            at_R = pmax
    flags = {"monotone": monotone, "pressure_at_R": at_R,
             "vanishes_at_R": None if at_R is None else abs(at_R) <= tol_at_R}
    return PressureTable(rows, oracle.R, flags)


def pressure_sqrt_slope(table: PressureTable) -> FitResult:
    """log(-P) against log(R - r) over grid points strictly below R."""
    r, P = table.curve()
    keep = (r < table.R) & (P < 0)
    slope, icpt, res = loglog_fit(table.R - r[keep], -P[keep])
    return FitResult(slope, math.exp(icpt), res, {"r": r[keep].tolist()}, {})


# ---------------------------------------------------------------------------
# sphere sums, semisimplicity, Jordan growth


def start_indicator(cm: CellMatrix, aut: GeodesicAutomaton) -> np.ndarray:
    return np.array([1.0 if c and aut.edges[c[0]][0] == aut.start else 0.0 for c in cm.cells])


def operator_sphere_sums(aut: GeodesicAutomaton, pot: CylinderPotential, n_max: int,
                         H_ee: float, cm: CellMatrix | None = None) -> list[float]:
    """H(e,e) L^n 1_[E*](empty path) for n = 0..n_max; n = 0 returns H(e,e)."""
    cm = cm or cell_matrix(pot)
    f = start_indicator(cm, aut)
    empty = cm.index[()]
    out = [H_ee]
    for _ in range(n_max):
        f = cm.matrix @ f
        out.append(H_ee * float(f[empty]))
    return out


def semisimplicity_check(dag: ComponentDAG, pressures: dict[int, float], tol: float = 1e-9) -> dict:
    finite = {i: p for i, p in pressures.items() if math.isfinite(p)}
    if not finite:
        return {"semisimple": True, "maximal": [], "chains": []}
    pmax = max(finite.values())
    maximal = sorted(i for i, p in finite.items() if p >= pmax - tol)
    chains = [(i, j) for i in maximal for j in maximal if i != j and j in dag.reachable_from(i)]
    return {"semisimple": not chains, "maximal": maximal, "chains": chains, "pressure": pmax}


def path_weight_sequence(aut: GeodesicAutomaton, pot: CylinderPotential, n_max: int) -> np.ndarray:
    """L^n 1_[E*](empty path) for n = 1..n_max, rescaled at each step to avoid overflow.

    Returns the logarithms.
    """
    cm = cell_matrix(pot)
    f = start_indicator(cm, aut)
    empty = cm.index[()]
    logs = []
    shift = 0.0
    for _ in range(n_max):
        f = cm.matrix @ f
        s = f.max()
        f = f / s
        shift += math.log(s)
        logs.append(shift + math.log(f[empty]) if f[empty] > 0 else -math.inf)
    return np.array(logs)


def jordan_growth_probe(aut: GeodesicAutomaton, pot: CylinderPotential, n_max: int = 400,
                        fit_from: float = 0.5) -> FitResult:
    """Fitted k - 1 in L^n 1(empty) ~ n^{k-1} e^{nP}, over n in [fit_from * n_max, n_max]."""
    dag = scc_decompose(aut)
    cm = cell_matrix(pot)
    P = max(pressure_component(pot, c, cm).pressure for c in dag.nontrivial())
    logs = path_weight_sequence(aut, pot, n_max)
    n = np.arange(1, n_max + 1)
    keep = (n >= fit_from * n_max) & np.isfinite(logs)
    y = logs[keep] - n[keep] * P
    A = np.column_stack([np.ones(keep.sum()), np.log(n[keep])])
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    res = y - A @ coef
    return FitResult(float(coef[1]), float(math.exp(coef[0])), float(np.sqrt(np.mean(res ** 2))),
                     {"n_min": int(n[keep][0]), "n_max": n_max}, {"pressure": P})


def chain_automaton(length: int, loops: int = 2, label_prefix: str = "x") -> GeodesicAutomaton:
    """start -> s1 -> ... -> s_length, each s_i carrying ``loops`` self-loops.

    All components have pressure log(loops) under the zero potential.
    """
    edges = [(0, f"{label_prefix}0", 1)]
    for i in range(1, length + 1):
        edges += [(i, f"l{i}_{j}", i) for j in range(loops)]
        if i < length:
            edges.append((i, f"{label_prefix}{i}", i + 1))
    return GeodesicAutomaton(length + 1, 0, edges, {"method": "constructed", "chain": length})
