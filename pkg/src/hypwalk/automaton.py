"""Geodesic automata: exact constructions, cone-type construction, validation, file IO."""

from __future__ import annotations

from collections import Counter, defaultdict
from dataclasses import dataclass, field
from pathlib import Path

from .errors import NonConvergenceError, UnsupportedError
from .groups import DehnGroup, FreeProduct, Group, Lattice, Word


@dataclass
class GeodesicAutomaton:
    """Labelled digraph whose paths from ``start`` spell the normal forms."""

    n_states: int
    start: int
    edges: list[tuple[int, str, int]]
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self._out: dict[int, list[tuple[str, int]]] = defaultdict(list)
        for u, s, v in self.edges:
            self._out[u].append((s, v))

    def out_edges(self, state: int) -> list[tuple[str, int]]:
        return self._out.get(state, [])

    def out_degree(self, state: int) -> int:
        return len(self.out_edges(state))

    def reachable(self) -> set[int]:
        seen = {self.start}
        stack = [self.start]
        while stack:
            u = stack.pop()
            for _, v in self.out_edges(u):
                if v not in seen:
                    seen.add(v)
                    stack.append(v)
        return seen

    def path_counts(self, n_max: int) -> list[int]:
        counts = [1]
        cur = Counter({self.start: 1})
        for _ in range(n_max):
            nxt: Counter = Counter()
            for u, c in cur.items():
                for _, v in self.out_edges(u):
                    nxt[v] += c
            cur = nxt
            counts.append(sum(cur.values()))
        return counts

    def paths(self, n: int):
        """Label sequences of all length-n paths from the start state."""
        stack = [((), self.start)]
        while stack:
            word, u = stack.pop()
            if len(word) == n:
                yield word
                continue
            for s, v in reversed(self.out_edges(u)):
                stack.append((word + (s,), v))

    def without_edge(self, index: int) -> "GeodesicAutomaton":
        edges = self.edges[:index] + self.edges[index + 1:]
        meta = dict(self.metadata, method=self.metadata.get("method", "?") + "+edit")
        meta.pop("verification_radius", None)
        return GeodesicAutomaton(self.n_states, self.start, edges, meta)


def _exact_free_product(group: FreeProduct) -> GeodesicAutomaton:
    # a state remembers the last letter and, for finite factors, the run length
    states: dict[tuple, int] = {("start",): 0}
    edges = []
    queue = [("start",)]

    def run_cap(letter: str) -> int:
        f, _ = group._letter[letter]
        m = group.orders[f]
        if m == 0:
            return 1
        return m // 2 if letter.islower() else (m - 1) // 2

    def witness(state) -> Word:
        return () if state == ("start",) else (state[0],) * state[1]

    while queue:
        st = queue.pop(0)
        w = witness(st)
        for s in group.alphabet:
            if not group.extends(w, s):
                continue
            run = st[1] + 1 if st != ("start",) and st[0] == s else 1
            nxt = (s, min(run, run_cap(s)))
            if nxt not in states:
                states[nxt] = len(states)
                queue.append(nxt)
            edges.append((states[st], s, states[nxt]))
    return GeodesicAutomaton(len(states), 0, edges,
                             {"group": group.key, "method": "exact", "verification_radius": 0})


def _exact_lattice(group: Lattice) -> GeodesicAutomaton:
    states = {"start": 0}
    for s in group.alphabet:
        states[s] = len(states)
    edges = []
    for u, w in [("start", ())] + [(s, (s,)) for s in group.alphabet]:
        for s in group.alphabet:
            if group.extends(w, s):
                edges.append((states[u], s, states[s]))
    return GeodesicAutomaton(len(states), 0, edges,
                             {"group": group.key, "method": "exact", "verification_radius": 0})


def _cone_signature(group: DehnGroup, x: Word, radius: int) -> frozenset:
    out = []
    frontier = [()]
    for _ in range(radius):
        nxt = []
        for c in frontier:
            for s in group.alphabet:
                if group.extends(x + c, s):
                    nxt.append(c + (s,))
        out.extend(nxt)
        frontier = nxt
    return frozenset(out)


def _cone_type(group: DehnGroup, cone_radius: int, depth: int, state_cap: int) -> GeodesicAutomaton:
    group.grow_ball(depth + 1 + cone_radius)
    sig_state: dict[frozenset, int] = {}
    trans: dict[tuple[int, str], int] = {}
    first_seen: list[int] = []
    levels = [[()]]
    for n in range(depth + 1):
        if n > 0:
            levels.append(list(group.sphere_words(n)))
        for x in levels[n]:
            sig = _cone_signature(group, x, cone_radius)
            if sig not in sig_state:
                sig_state[sig] = len(sig_state)
                first_seen.append(n)
                if len(sig_state) > state_cap:
                    raise NonConvergenceError(
                        "cone-type construction exceeded the state cap",
                        {"states": len(sig_state), "level": n})
    for n in range(depth):
        for x in levels[n]:
            u = sig_state[_cone_signature(group, x, cone_radius)]
            for s in group.alphabet:
                if not group.extends(x, s):
                    continue
                v = sig_state[_cone_signature(group, x + (s,), cone_radius)]
                if trans.setdefault((u, s), v) != v:
                    raise NonConvergenceError(
                        "cone signatures do not determine transitions; increase cone_radius",
                        {"states": len(sig_state), "conflict": "".join(x + (s,))})
    late = [i for i, n in enumerate(first_seen) if n == depth]
    if late:
        raise NonConvergenceError(
            "new cone types still appear at the deepest level; increase depth",
            {"states": len(sig_state), "new_at_depth": len(late)})
    edges = [(u, s, v) for (u, s), v in sorted(trans.items())]
    return GeodesicAutomaton(len(sig_state), 0, edges, {
        "group": group.key, "method": "cone-type", "cone_radius": cone_radius,
        "depth": depth, "verification_radius": 0, "experimental": True})


def build_geodesic_automaton(group: Group, cone_radius: int | None = None, depth: int = 3,
                             state_cap: int = 5000) -> GeodesicAutomaton:
    """Exact automaton for free products and lattices, cone types for presentations."""
    if isinstance(group, FreeProduct):
        return _exact_free_product(group)
    if isinstance(group, Lattice):
        return _exact_lattice(group)
    if isinstance(group, DehnGroup):
        if group.mode != "dehn":
            raise UnsupportedError("group is in enumeration-only mode; no automaton claims")
        if cone_radius is None:
            from .hyperbolicity import estimate_delta
            cone_radius = 2 * int(estimate_delta(group, radius=3, samples=200)) + 2
        return _cone_type(group, cone_radius, depth, state_cap)
    raise UnsupportedError(f"no automaton construction for {group.kind}")


@dataclass
class ValidationReport:
    passed: bool
    radius: int
    rows: list[dict]
    counterexamples: list[str]
    unreachable_states: list[int]

    def to_dict(self):
        return {"passed": self.passed, "radius": self.radius, "rows": self.rows,
                "counterexamples": self.counterexamples,
                "unreachable_states": self.unreachable_states}


def validate_automaton(aut: GeodesicAutomaton, group: Group, N: int,
                       max_counterexamples: int = 20) -> ValidationReport:
    """Check reachability and the path/sphere bijection for every radius up to N."""
    rows, bad = [], []
    unreachable = sorted(set(range(aut.n_states)) - aut.reachable())
    for s in unreachable:
        bad.append(f"state {s} is not reachable from the start")
    for n in range(N + 1):
        sphere = set(group.sphere_words(n))
        seen: dict[Word, Word] = {}
        n_paths = 0
        for word in aut.paths(n):
            n_paths += 1
            end = group.reduce(word)
            if len(end) != n:
                bad.append(f"radius {n}: path {''.join(word)} is not geodesic")
            elif end in seen:
                bad.append(f"radius {n}: paths {''.join(seen[end])} and {''.join(word)} collide")
            seen[end] = word
        missing = sorted(sphere - set(seen), key=lambda w: [group._order[s] for s in w])
        for w in missing[:max_counterexamples]:
            bad.append(f"radius {n}: missing element {''.join(w) or 'e'}")
        rows.append({"n": n, "paths": n_paths, "sphere": len(sphere),
                     "injective": len(seen) == n_paths, "missing": len(missing)})
    passed = not bad
    if passed:
        aut.metadata["verification_radius"] = max(N, aut.metadata.get("verification_radius", 0))
    return ValidationReport(passed, N, rows, bad[:max_counterexamples], unreachable)


def write_automaton(aut: GeodesicAutomaton, path) -> None:
    lines = ["# geodesic automaton"]
    for k in sorted(aut.metadata):
        lines.append(f"# meta {k}={aut.metadata[k]}")
    lines.append(f"states {aut.n_states} start {aut.start}")
    lines += [f"{u} {s} {v}" for u, s, v in aut.edges]
    Path(path).write_text("\n".join(lines) + "\n")


def read_automaton(path) -> GeodesicAutomaton:
    n_states = start = None
    edges, meta = [], {}
    for raw in Path(path).read_text().splitlines():
        line = raw.strip()
        if line.startswith("# meta "):
            k, _, v = line[7:].partition("=")
            meta[k] = int(v) if v.lstrip("-").isdigit() else v
            continue
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if parts[0] == "states":
            if len(parts) != 4 or parts[2] != "start":
                raise ValueError(f"malformed header: {raw!r}")
            n_states, start = int(parts[1]), int(parts[3])
        else:
            if n_states is None or len(parts) != 3:
                raise ValueError(f"malformed edge line: {raw!r}")
            u, s, v = int(parts[0]), parts[1], int(parts[2])
            if not (0 <= u < n_states and 0 <= v < n_states):
                raise ValueError(f"edge {raw!r} refers to an unknown state")
            edges.append((u, s, v))
    if n_states is None:
        raise ValueError("missing 'states N start I' header")
    return GeodesicAutomaton(n_states, start, edges, meta)
