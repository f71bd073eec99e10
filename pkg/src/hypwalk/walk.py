"""Finitely supported measures, convolution powers, return probabilities and samplers."""

from __future__ import annotations

import hashlib
import json
import math
import struct
import warnings
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .errors import InsufficientDataError, ResourceError, UnsupportedError
from .groups import Group, NormalForm, Word

DEFAULT_PRUNE_EPS = 1e-16
DEFAULT_SUPPORT_CAP = 50_000_000


@dataclass(frozen=True)
class FiniteMeasure:
    group: Group
    atoms: tuple[tuple[Word, float], ...]
    admissible: bool
    symmetric: bool
    parity: str
    max_step: int
    admissibility_radius: int = 6

    @property
    def key(self) -> str:
        body = json.dumps([["".join(w), repr(p)] for w, p in self.atoms])
        return hashlib.sha256((self.group.key + body).encode()).hexdigest()[:16]

    @property
    def weights(self) -> np.ndarray:
        return np.array([p for _, p in self.atoms])

    @property
    def words(self) -> list[Word]:
        return [w for w, _ in self.atoms]

    def weight(self, x) -> float:
        w = self.group.reduce(self.group.parse(x))
        return dict(self.atoms).get(w, 0.0)

    def as_dict(self) -> dict[Word, float]:
        return dict(self.atoms)

    def to_spec(self) -> list[list]:
        return [["".join(w), p] for w, p in self.atoms]


def _parity(group: Group, atoms: dict, radius: int) -> str:
    if () in atoms or any(len(w) % 2 == 0 for w in atoms):
        return "aperiodic"
    if getattr(group, "_even_relators", False):
        # odd-length atoms on a group where length parity is invariant
        return "period-2"
    colour = {(): 0}
    frontier = [()]
    for k in range(1, radius + 1):
        nxt = []
        for x in frontier:
            for s in atoms:
                y = group.mul_words(x, s)
                c = colour.get(y)
                if c is None:
                    colour[y] = k % 2
                    nxt.append(y)
                elif c != k % 2:
                    return "aperiodic"
        frontier = nxt
    return "period-2"


def _admissible(group: Group, atoms: dict, radius: int) -> bool:
    seen: set = set()
    targets = {(s,) for s in group.alphabet}
    frontier = [()]
    for _ in range(radius):
        nxt = []
        for x in frontier:
            for s in atoms:
                y = group.mul_words(x, s)
                if y not in seen:
                    seen.add(y)
                    nxt.append(y)
        if targets <= seen:
            return True
        frontier = nxt
    return targets <= seen


def make_measure(spec, group: Group, strict: bool = False, radius: int = 6) -> FiniteMeasure:
    """Build a measure from ``(word, weight)`` pairs or a word->weight mapping."""
    items = spec.items() if isinstance(spec, Mapping) else spec
    atoms: dict[Word, float] = {}
    for word, p in items:
        p = float(p)
        if not p > 0:
            raise ValueError(f"weight of {word!r} must be positive, got {p}")
        w = group.reduce(group.parse(word))
        atoms[w] = atoms.get(w, 0.0) + p
    if not atoms:
        raise ValueError("measure has empty support")
    total = math.fsum(atoms.values())
    if abs(total - 1.0) > 1e-12:
        msg = f"weights sum to {total!r}; renormalising"
        if strict:
            raise ValueError(msg)
        warnings.warn(msg, stacklevel=2)
        atoms = {w: p / total for w, p in atoms.items()}
    order = group._order
    ordered = sorted(atoms.items(), key=lambda t: (len(t[0]), [order[s] for s in t[0]]))
    symmetric = all(atoms.get(group.reduce(group.invert(w))) == p for w, p in atoms.items())
    return FiniteMeasure(
        group=group,
        atoms=tuple(ordered),
        admissible=_admissible(group, atoms, radius),
        symmetric=symmetric,
        parity=_parity(group, atoms, radius),
        max_step=max(len(w) for w in atoms),
        admissibility_radius=radius,
    )


def simple_random_walk(group: Group) -> FiniteMeasure:
    k = len(group.alphabet)
    return make_measure([((s,), 1.0 / k) for s in group.alphabet], group)


def lazy(mu: FiniteMeasure, hold: float = 0.5) -> FiniteMeasure:
    spec = [((), hold)] + [(w, (1 - hold) * p) for w, p in mu.atoms]
    return make_measure(spec, mu.group)


def biased_measure(group: Group, epsilon: float) -> FiniteMeasure:
    """Drift towards the first generator: weight 1 - 3eps on it, eps on three others."""
    if len(group.alphabet) != 4:
        raise UnsupportedError("the biased measure is defined on a four-letter alphabet")
    a, rest = group.alphabet[0], group.alphabet[1:]
    return make_measure([((a,), 1 - 3 * epsilon)] + [((s,), epsilon) for s in rest], group)


def measure_from_config(cfg: Mapping, group: Group) -> FiniteMeasure:
    if "atoms" in cfg:
        return make_measure([(w, p) for w, p in cfg["atoms"]], group, strict=cfg.get("strict", False))
    preset = cfg.get("preset", "srw")
    if preset == "srw":
        return simple_random_walk(group)
    if preset == "lazy":
        return lazy(simple_random_walk(group), cfg.get("hold", 0.5))
    if preset == "biased":
        return biased_measure(group, cfg.get("epsilon", 0.05))
    raise ValueError(f"unknown measure preset {preset!r}")


# ---------------------------------------------------------------------------
# sparse distributions


@dataclass
class SparseDistribution:
    group: Group
    masses: dict[Word, float]
    pruned_mass: float = 0.0
    n: int = 0

    def total(self) -> float:
        return math.fsum(self.masses.values())

    def mass(self, x) -> float:
        return self.masses.get(self.group.reduce(self.group.parse(x)), 0.0)

    def __len__(self):
        return len(self.masses)


def delta(group: Group) -> SparseDistribution:
    return SparseDistribution(group, {(): 1.0})


def convolve(dist: SparseDistribution, mu: FiniteMeasure, prune_eps: float = 0.0,
             cap: int = DEFAULT_SUPPORT_CAP) -> SparseDistribution:
    """One step of the walk: mass at x moves to x*s with probability mu(s)."""
    if dist.group != mu.group:
        from .errors import IncompatibleGroupsError
        raise IncompatibleGroupsError("distribution and measure live on different groups")
    if prune_eps < 0:
        raise ValueError("prune_eps must be nonnegative")
    group = mu.group
    out: dict[Word, float] = defaultdict(float)
    for x, m in dist.masses.items():
        for s, p in mu.atoms:
            out[group.mul_words(x, s)] += m * p
        if len(out) > cap:
            raise ResourceError(f"support exceeds {cap} atoms; increase prune_eps")
    dropped = 0.0
    if prune_eps > 0:
        kept = {}
        for y, m in out.items():
            if m < prune_eps:
                dropped += m
            else:
                kept[y] = m
        out = kept
    return SparseDistribution(group, dict(out), dist.pruned_mass + dropped, dist.n + 1)


# ---------------------------------------------------------------------------
# dense engine on a Cayley ball


class WalkBall:
    """Index of B(e, radius) with right-multiplication tables for every atom.

    Distributions become dense float vectors over the ball; a step is one
    ``bincount`` per atom.
    """

    def __init__(self, mu: FiniteMeasure, radius: int, cap: int = DEFAULT_SUPPORT_CAP):
        self.mu = mu
        self.radius = radius
        group = mu.group
        self._build(group, radius, cap)
        self.weights = mu.weights
        self.targets = np.stack([self._atom_targets(s) for s, _ in mu.atoms])
        self.inverse = self._inverse_map()

    def _build(self, group: Group, radius: int, cap: int) -> None:
        # level-by-level enumeration recording parent and child links, so that
        # right multiplication by a letter is a table lookup in the common cases
        alphabet = group.alphabet
        words: list[Word] = [()]
        parent = [-1]
        last = [-1]
        child = [[-1] * len(alphabet)]
        start, stop = 0, 1
        for _ in range(radius):
            for i in range(start, stop):
                x = words[i]
                row = child[i]
                for j, s in enumerate(alphabet):
                    if group.extends(x, s):
                        row[j] = len(words)
                        words.append(x + (s,))
                        parent.append(i)
                        last.append(j)
                        child.append([-1] * len(alphabet))
            if len(words) > cap:
                raise ResourceError(f"ball of radius {radius} exceeds {cap} elements")
            start, stop = stop, len(words)
        self.words = words
        self.size = len(words)
        self.lengths = np.fromiter((len(w) for w in words), dtype=np.int64, count=self.size)
        self._parent = np.array(parent, dtype=np.int64)
        self._last = np.array(last, dtype=np.int64)
        self._child = np.array(child, dtype=np.int64).reshape(self.size, len(alphabet))
        self._index: dict[Word, int] | None = None

    @property
    def index(self) -> dict[Word, int]:
        if self._index is None:
            self._index = {w: i for i, w in enumerate(self.words)}
        return self._index

    def _letter_targets(self, j: int) -> np.ndarray:
        group = self.mu.group
        alphabet = group.alphabet
        inv_j = alphabet.index(group.inverse_letter(alphabet[j]))
        t = self._child[:, j].copy()
        back = self._last == inv_j
        t[back] = self._parent[back]
        todo = np.nonzero((t < 0) & (self.lengths < self.radius))[0]
        if len(todo):
            get = self.index.get
            s = alphabet[j]
            for i in todo:
                t[i] = get(group.mul_words(self.words[i], (s,)), -1)
        return t

    def _atom_targets(self, word: Word) -> np.ndarray:
        t = np.arange(self.size)
        alphabet = self.mu.group.alphabet
        for s in word:
            lt = self._letter_targets(alphabet.index(s))
            ok = t >= 0
            t[ok] = lt[t[ok]]
        return t

    def _inverse_map(self) -> np.ndarray:
        group = self.mu.group
        alphabet = group.alphabet
        inv = np.zeros(self.size, dtype=np.int64)
        get = self.index.get
        invert = group.invert
        reduce = (lambda w: w) if getattr(group, "inverse_is_normal", False) else group.reduce
        for i in range(1, self.size):
            inv[i] = get(reduce(invert(self.words[i])), -1)
        return inv

    def delta(self, word=()) -> np.ndarray:
        v = np.zeros(self.size)
        v[self.index[tuple(word)]] = 1.0
        return v

    def step(self, v: np.ndarray) -> tuple[np.ndarray, float]:
        """Return the next distribution and the mass that left the ball."""
        out = np.zeros(self.size)
        lost = 0.0
        for a, p in enumerate(self.weights):
            t = self.targets[a]
            inside = t >= 0
            out += np.bincount(t[inside], weights=v[inside] * p, minlength=self.size)
            if not inside.all():
                lost += p * v[~inside].sum()
        return out, lost

    def powers(self, m: int, prune_eps: float = 0.0):
        """Distributions after 0..m steps, with cumulative pruned mass per step."""
        v = self.delta()
        dists, pruned = [v], [0.0]
        total_pruned = 0.0
        for _ in range(m):
            v, lost = self.step(v)
            if prune_eps > 0:
                small = (v > 0) & (v < prune_eps)
                total_pruned += v[small].sum()
                v[small] = 0.0
            total_pruned += lost
            dists.append(v)
            pruned.append(total_pruned)
        return dists, pruned

    def to_sparse(self, v: np.ndarray, pruned: float, n: int) -> SparseDistribution:
        nz = np.nonzero(v)[0]
        return SparseDistribution(self.mu.group, {self.words[i]: float(v[i]) for i in nz}, pruned, n)


# ---------------------------------------------------------------------------
# return probabilities


@dataclass
class ReturnSeries:
    values: np.ndarray
    errors: np.ndarray
    parity: str
    measure_key: str = ""

    @property
    def n_max(self) -> int:
        return len(self.values) - 1

    def rescaled(self, R: float) -> np.ndarray:
        n = np.arange(len(self.values))
        with np.errstate(divide="ignore"):
            return np.where(self.values > 0, np.exp(np.log(self.values) + n * math.log(R)), 0.0)


def return_sequence(mu: FiniteMeasure, n_max: int, prune_eps: float = 0.0,
                    cap: int = DEFAULT_SUPPORT_CAP) -> ReturnSeries:
    """p_n(e,e) for n <= n_max from distributions of half the length.

    Uses p_{a+b}(e,e) = sum_x p_a(e,x) p_b(e,x^-1), so only ceil(n_max/2)
    convolution steps are needed.
    """
    if n_max < 1:
        raise ValueError("n_max must be at least 1")
    half = (n_max + 1) // 2
    ball = WalkBall(mu, half * mu.max_step, cap)
    dists, pruned = ball.powers(half, prune_eps)
    values = np.zeros(n_max + 1)
    errors = np.zeros(n_max + 1)
    for n in range(n_max + 1):
        a, b = (n + 1) // 2, n // 2
        da, db = dists[a], dists[b]
        values[n] = float(np.dot(da, db[ball.inverse]))
        pa, pb = pruned[a], pruned[b]
        errors[n] = pa * (db.max() + pb) + pb * da.max()
    if mu.parity == "period-2":
        values[1::2] = 0.0
        errors[1::2] = 0.0
    return ReturnSeries(values, errors, mu.parity, mu.key)


def _neville(xs: Sequence[float], ys: Sequence[float], x0: float = 0.0) -> float:
    p = list(ys)
    n = len(xs)
    for k in range(1, n):
        for i in range(n - k):
            p[i] = ((x0 - xs[i + k]) * p[i] + (xs[i] - x0) * p[i + 1]) / (xs[i] - xs[i + k])
    return p[0]


def spectral_radius_estimate(series, order: int = 6, n_min: int = 2):
    """Estimate rho from ratios p_{n+s}/p_n corrected by the n^{-3/2} factor.

    Period-2 series use s = 2; aperiodic ones use every consecutive ratio,
    which doubles the data in the same range.  The corrected ratios are
    extrapolated to n = infinity with polynomial (Richardson) extrapolation
    in 1/n over the last ``order + 1`` points.
    """
    values = np.asarray(series.values, dtype=float)
    parity = getattr(series, "parity", None)
    if parity is None:
        parity = "period-2" if np.all(values[1::2] == 0) else "aperiodic"
    step = 2 if parity == "period-2" else 1
    ns = [n for n in range(max(n_min, step), len(values) - step, step)
          if values[n] > 0 and values[n + step] > 0]
    if len(ns) < 8:
        raise InsufficientDataError("need at least 8 nonzero ratios")
    raw = np.array([values[n + step] / values[n] for n in ns])
    corrected = np.array([q * ((n + step) / n) ** 1.5 for q, n in zip(raw, ns)])
    x = [1.0 / n for n in ns]
    order = min(order, len(ns) - 1)
    extrapolations = []
    for k in range(1, order + 1):
        extrapolations.append(_neville(x[-(k + 1):], list(corrected[-(k + 1):])))
    q = extrapolations[-1]
    rho = q ** (1.0 / step)
    spread = abs(extrapolations[-1] - extrapolations[-2]) if len(extrapolations) > 1 else abs(q)
    diagnostics = {
        "n": ns,
        "raw_ratios": raw.tolist(),
        "corrected_ratios": corrected.tolist(),
        "extrapolations": [max(e, 0.0) ** (1.0 / step) for e in extrapolations],
        "residual": spread / (step * rho),
        "step": step,
        "order": order,
    }
    return rho, diagnostics


# ---------------------------------------------------------------------------
# Monte Carlo


def _rng(seed) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(seed))


def _child_rngs(seed: int, count: int) -> list[np.random.Generator]:
    return [np.random.Generator(np.random.Philox(s)) for s in np.random.SeedSequence(seed).spawn(count)]


def sample_path(mu: FiniteMeasure, n: int, seed: int) -> list[NormalForm]:
    if n < 1:
        raise ValueError("n must be at least 1")
    rng = _rng(seed)
    group = mu.group
    steps = rng.choice(len(mu.atoms), size=n, p=mu.weights)
    state = group.new_state()
    path = [group.identity]
    for i in steps:
        state = group.push(state, mu.atoms[i][0])
        path.append(NormalForm(group.state_word(state), group))
    return path


def sample_increments(mu: FiniteMeasure, size: int, seed: int) -> np.ndarray:
    return _rng(seed).choice(len(mu.atoms), size=size, p=mu.weights)


@dataclass
class Estimate:
    value: float
    ci: tuple[float, float]
    stderr: float
    samples: int
    seed: int
    level: float
    diagnostics: dict = field(default_factory=dict)

    def __iter__(self):
        return iter((self.value, self.ci))

    def to_dict(self):
        return {"value": self.value, "ci": list(self.ci), "stderr": self.stderr,
                "samples": self.samples, "seed": self.seed, "level": self.level,
                **{k: v for k, v in self.diagnostics.items() if not isinstance(v, np.ndarray)}}


def _bootstrap_ci(x: np.ndarray, level: float, seed: int, resamples: int = 2000):
    rng = _rng(seed + 1)
    idx = rng.integers(0, len(x), size=(resamples, len(x)))
    means = x[idx].mean(axis=1)
    lo, hi = np.quantile(means, [(1 - level) / 2, (1 + level) / 2])
    return float(lo), float(hi)


def _endpoints(mu: FiniteMeasure, n: int, samples: int, seed: int) -> list[Word]:
    group = mu.group
    out = []
    for rng in _child_rngs(seed, samples):
        state = group.new_state()
        for i in rng.choice(len(mu.atoms), size=n, p=mu.weights):
            state = group.push(state, mu.atoms[i][0])
        out.append(group.state_word(state))
    return out


def escape_rate(mu: FiniteMeasure, n: int, samples: int, seed: int, level: float = 0.95) -> Estimate:
    """Mean of |X_n|/n over independent paths with a bootstrap interval."""
    ends = _endpoints(mu, n, samples, seed)
    rates = np.array([len(w) / n for w in ends])
    return Estimate(float(rates.mean()), _bootstrap_ci(rates, level, seed),
                    float(rates.std(ddof=1) / math.sqrt(samples)), samples, seed, level,
                    {"n": n})


def plugin_entropy(words: Sequence[Word]) -> float:
    counts = np.array(list(_count(words).values()), dtype=float)
    p = counts / counts.sum()
    return float(-(p * np.log(p)).sum())


def _count(words):
    c: dict = defaultdict(int)
    for w in words:
        c[w] += 1
    return c


def green_cocycle_rate(mu: FiniteMeasure, oracle, k: int, samples: int, seed: int,
                       level: float = 0.95) -> Estimate:
    """Sample mean of log F_R(e, X_k) / k.

    The oracle must evaluate first-visit values at r = R exactly, which in
    practice means the tree backend.
    """
    if oracle is None or not getattr(oracle, "exact", False):
        raise UnsupportedError("an exact Green oracle at r = R is required")
    R = oracle.R
    if not math.isfinite(R):
        raise UnsupportedError("radius of convergence is infinite for this measure")
    ends = _endpoints(mu, k, samples, seed)
    logs = np.array([oracle.log_first_visit((), w, R) for w in ends]) / k
    log_g = np.array([oracle.log_green((), w, R) for w in ends]) / k
    h_hat = plugin_entropy(ends) / k
    return Estimate(float(logs.mean()), _bootstrap_ci(logs, level, seed),
                    float(logs.std(ddof=1) / math.sqrt(samples)), samples, seed, level,
                    {"k": k, "entropy_rate_plugin": h_hat,
                     "green_decay_rate": float(-log_g.mean()),
                     "mean_length_rate": float(np.mean([len(w) for w in ends]) / k)})


# ---------------------------------------------------------------------------
# on-disk cache


def write_distribution(dist: SparseDistribution, path, measure_key: str, prune_eps: float) -> None:
    path = Path(path)
    with open(path, "wb") as fh:
        for w, m in dist.masses.items():
            b = "".join(w).encode()
            fh.write(struct.pack("<I", len(b)))
            fh.write(b)
            fh.write(struct.pack("<d", m))
    sidecar = {"group": dist.group.key, "measure": measure_key, "n": dist.n,
               "prune_eps": prune_eps, "pruned_mass": dist.pruned_mass, "atoms": len(dist.masses)}
    path.with_suffix(path.suffix + ".json").write_text(json.dumps(sidecar, indent=2, sort_keys=True))


def read_distribution(path, group: Group) -> tuple[SparseDistribution, dict]:
    path = Path(path)
    meta = json.loads(path.with_suffix(path.suffix + ".json").read_text())
    if meta["group"] != group.key:
        from .errors import IncompatibleGroupsError
        raise IncompatibleGroupsError("cached distribution belongs to another group")
    data = path.read_bytes()
    masses, pos = {}, 0
    while pos < len(data):
        (ln,) = struct.unpack_from("<I", data, pos)
        pos += 4
        w = tuple(data[pos:pos + ln].decode())
        pos += ln
        (m,) = struct.unpack_from("<d", data, pos)
        pos += 8
        masses[w] = m
    return SparseDistribution(group, masses, meta["pruned_mass"], meta["n"]), meta


class DistributionCache:
    """Directory of cached step-n distributions keyed by (group, measure, n, prune_eps)."""

    def __init__(self, root):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self.keys_used: list[str] = []

    def key(self, mu: FiniteMeasure, n: int, prune_eps: float) -> str:
        raw = f"{mu.group.key}|{mu.key}|{n}|{prune_eps!r}"
        return hashlib.sha256(raw.encode()).hexdigest()[:20]

    def get(self, mu: FiniteMeasure, n: int, prune_eps: float = 0.0) -> SparseDistribution:
        key = self.key(mu, n, prune_eps)
        self.keys_used.append(key)
        path = self.root / f"{key}.bin"
        if path.exists():
            return read_distribution(path, mu.group)[0]
        dist = delta(mu.group)
        for _ in range(n):
            dist = convolve(dist, mu, prune_eps)
        write_distribution(dist, path, mu.key, prune_eps)
        return dist

    def sequence(self, mu: FiniteMeasure, n_max: int, prune_eps: float = 0.0,
                 cap: int = DEFAULT_SUPPORT_CAP) -> list[SparseDistribution]:
        """Distributions for steps 0..n_max, reusing and extending cached entries."""
        out = [delta(mu.group)]
        for n in range(1, n_max + 1):
            key = self.key(mu, n, prune_eps)
            self.keys_used.append(key)
            path = self.root / f"{key}.bin"
            if path.exists():
                out.append(read_distribution(path, mu.group)[0])
            else:
                out.append(convolve(out[-1], mu, prune_eps, cap))
                write_distribution(out[-1], path, mu.key, prune_eps)
        return out
