"""Group models, normal forms and sphere enumeration.

Four kinds are supported: free groups, free products of cyclic groups,
integer lattices and small-cancellation presentations handled by Dehn's
algorithm.  Elements are carried around as :class:`NormalForm` values;
internally every routine works on plain tuples of letters.
"""

from __future__ import annotations

import json
import string
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Sequence

import numpy as np

from .errors import (
    AlphabetError,
    IncompatibleGroupsError,
    PresentationError,
    ResourceError,
)

Word = tuple[str, ...]

DEFAULT_SPHERE_CAP = 50_000_000


def _letter_names(k: int) -> list[str]:
    if k > 26:
        raise ValueError("at most 26 generators are supported")
    return list(string.ascii_lowercase[:k])


class Group:
    """Base class; subclasses fill in the normal-form machinery."""

    kind: str = "abstract"
    amenable: bool = False

    def __init__(self, alphabet: Sequence[str], inverse: dict[str, str]):
        self.alphabet: Word = tuple(alphabet)
        self._inverse = dict(inverse)
        self._order = {s: i for i, s in enumerate(self.alphabet)}
        self._key: str | None = None

    # identity and hashing -------------------------------------------------
    def to_dict(self) -> dict:
        raise NotImplementedError

    @property
    def key(self) -> str:
        if self._key is None:
            self._key = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return self._key

    def __eq__(self, other):
        return isinstance(other, Group) and (other is self or other.key == self.key)

    def __hash__(self):
        return hash(self.key)

    def __repr__(self):
        return f"{type(self).__name__}({self.key})"

    # letters --------------------------------------------------------------
    def inverse_letter(self, s: str) -> str:
        return self._inverse[s]

    def invert(self, word: Word) -> Word:
        inv = self._inverse
        return tuple(inv[s] for s in reversed(word))

    def parse(self, word) -> Word:
        """Turn a string, letter sequence or NormalForm into a checked letter tuple."""
        if isinstance(word, NormalForm):
            if word.group != self:
                raise IncompatibleGroupsError(f"{word!r} does not belong to {self!r}")
            return word.letters
        if isinstance(word, str):
            letters = word.split() if " " in word.strip() else list(word.strip())
        else:
            letters = list(word)
        for s in letters:
            if s not in self._order:
                raise AlphabetError(f"letter {s!r} is not in the alphabet {self.alphabet}")
        return tuple(letters)

    # normal forms ---------------------------------------------------------
    def reduce(self, letters: Sequence[str]) -> Word:
        """Canonical normal form of an already checked letter sequence."""
        raise NotImplementedError

    def extends(self, x: Word, s: str) -> bool:
        """True when ``x + (s,)`` is itself a normal form of length |x|+1."""
        y = x + (s,)
        return self.reduce(y) == y

    def mul_words(self, x: Word, y: Word) -> Word:
        return self.reduce(x + y)

    def element(self, word) -> "NormalForm":
        return NormalForm(self.reduce(self.parse(word)), self)

    @property
    def identity(self) -> "NormalForm":
        return NormalForm((), self)

    def distance(self, x: Word, y: Word) -> int:
        return len(self.reduce(self.invert(x) + y))

    # incremental right multiplication, used by the samplers -------------
    def new_state(self):
        return ()

    def push(self, state, word: Word):
        return self.reduce(state + word)

    def state_length(self, state) -> int:
        return len(state)

    def state_word(self, state) -> Word:
        return state

    # enumeration ----------------------------------------------------------
    def sphere_words(self, n: int, cap: int = DEFAULT_SPHERE_CAP) -> Iterator[Word]:
        """Depth-first enumeration of S_n via prefix-closed normal forms."""
        if n < 0:
            raise ValueError("sphere radius must be nonnegative")
        count = 0
        stack: list[Word] = [()]
        while stack:
            x = stack.pop()
            if len(x) == n:
                count += 1
                if count > cap:
                    raise ResourceError(f"sphere of radius {n} exceeds the cap of {cap} elements")
                yield x
                continue
            for s in reversed(self.alphabet):
                if self.extends(x, s):
                    stack.append(x + (s,))

    def ball_words(self, n: int, cap: int = DEFAULT_SPHERE_CAP) -> list[Word]:
        """Elements of B(e, n) level by level, shortlex within each level."""
        levels = [[()]]
        total = 1
        for _ in range(n):
            nxt = []
            for x in levels[-1]:
                for s in self.alphabet:
                    if self.extends(x, s):
                        nxt.append(x + (s,))
            total += len(nxt)
            if total > cap:
                raise ResourceError(f"ball of radius {n} exceeds the cap of {cap} elements")
            levels.append(nxt)
        return [x for level in levels for x in level]


class FreeProduct(Group):
    """Free product of cyclic groups; order 0 stands for an infinite cyclic factor.

    Factor i uses the letter ``ascii_lowercase[i]`` with the uppercase letter as
    its inverse, except for factors of order 2 whose letter is self-inverse.
    A syllable g^k with 0 < k < m is written with positive letters when
    k <= m // 2 and with inverse letters otherwise, which makes every normal
    form geodesic.
    """

    def __init__(self, orders: Sequence[int], kind: str = "free_product"):
        orders = [int(m) for m in orders]
        if not orders:
            raise ValueError("need at least one factor")
        if any(m < 0 or m == 1 for m in orders):
            raise ValueError("cyclic orders must be 0 (infinite) or at least 2")
        self.orders = tuple(orders)
        self.kind = kind
        # reversing and inverting a normal form gives a normal form again
        self.inverse_is_normal = all(m in (0, 2, 3) for m in orders)
        names = _letter_names(len(orders))
        alphabet, inverse = [], {}
        self._letter = {}
        for i, (name, m) in enumerate(zip(names, orders)):
            if m == 2:
                alphabet.append(name)
                inverse[name] = name
                self._letter[name] = (i, 1)
            else:
                up = name.upper()
                alphabet += [name, up]
                inverse[name], inverse[up] = up, name
                self._letter[name] = (i, 1)
                self._letter[up] = (i, -1)
        self.names = names
        super().__init__(alphabet, inverse)

    def to_dict(self):
        if self.kind == "free":
            return {"kind": "free", "rank": len(self.orders)}
        return {"kind": "free_product", "orders": list(self.orders)}

    # syllable bookkeeping
    def _push_letter(self, syl: list, s: str) -> None:
        f, d = self._letter[s]
        m = self.orders[f]
        if syl and syl[-1][0] == f:
            e = syl[-1][1] + d
            if m:
                e %= m
            if e == 0:
                syl.pop()
            else:
                syl[-1][1] = e
        else:
            syl.append([f, d % m if m else d])

    def _syllable_letters(self, f: int, e: int) -> Word:
        m = self.orders[f]
        name = self.names[f]
        if m == 0:
            return (name,) * e if e > 0 else (name.upper(),) * (-e)
        if m == 2:
            return (name,)
        if e <= m // 2:
            return (name,) * e
        return (name.upper(),) * (m - e)

    def syllables(self, word: Sequence[str]) -> list[tuple[int, int]]:
        syl: list = []
        for s in word:
            self._push_letter(syl, s)
        return [(f, e) for f, e in syl]

    def reduce(self, letters):
        syl: list = []
        for s in letters:
            self._push_letter(syl, s)
        out: list[str] = []
        for f, e in syl:
            out.extend(self._syllable_letters(f, e))
        return tuple(out)

    def extends(self, x, s):
        if not x:
            return True
        last = x[-1]
        fl, _ = self._letter[last]
        fs, _ = self._letter[s]
        if fl != fs:
            return True
        if s != last:
            return False
        m = self.orders[fl]
        if m == 0:
            return True
        run = 1
        while run < len(x) and x[-1 - run] == last:
            run += 1
        limit = m // 2 if last.islower() else (m - 1) // 2
        return run + 1 <= limit

    def new_state(self):
        return []

    def push(self, state, word):
        for s in word:
            self._push_letter(state, s)
        return state

    def _syllable_length(self, f, e):
        m = self.orders[f]
        if m == 0:
            return abs(e)
        return min(e, m - e)

    def state_length(self, state):
        return sum(self._syllable_length(f, e) for f, e in state)

    def state_word(self, state):
        out: list[str] = []
        for f, e in state:
            out.extend(self._syllable_letters(f, e))
        return tuple(out)


def free_group(rank: int) -> FreeProduct:
    return FreeProduct([0] * rank, kind="free")


def free_product(orders: Sequence[int]) -> FreeProduct:
    return FreeProduct(orders)


class Lattice(Group):
    """Z^d with the standard generators; normal forms list coordinates axis by axis."""

    kind = "lattice"
    amenable = True

    def __init__(self, dimension: int):
        if dimension < 1:
            raise ValueError("dimension must be positive")
        self.dimension = int(dimension)
        names = _letter_names(self.dimension)
        alphabet, inverse = [], {}
        self._axis = {}
        for i, name in enumerate(names):
            up = name.upper()
            alphabet += [name, up]
            inverse[name], inverse[up] = up, name
            self._axis[name] = (i, 1)
            self._axis[up] = (i, -1)
        self.names = names
        super().__init__(alphabet, inverse)

    def to_dict(self):
        return {"kind": "lattice", "dimension": self.dimension}

    def coordinates(self, letters) -> tuple[int, ...]:
        c = [0] * self.dimension
        for s in letters:
            i, d = self._axis[s]
            c[i] += d
        return tuple(c)

    def from_coordinates(self, coords) -> Word:
        out: list[str] = []
        for name, c in zip(self.names, coords):
            out.extend([name] * c if c > 0 else [name.upper()] * (-c))
        return tuple(out)

    def reduce(self, letters):
        return self.from_coordinates(self.coordinates(letters))

    def extends(self, x, s):
        if not x:
            return True
        i, _ = self._axis[x[-1]]
        j, _ = self._axis[s]
        return j > i or s == x[-1]

    def new_state(self):
        return [0] * self.dimension

    def push(self, state, word):
        for s in word:
            i, d = self._axis[s]
            state[i] += d
        return state

    def state_length(self, state):
        return sum(abs(c) for c in state)

    def state_word(self, state):
        return self.from_coordinates(state)


class DehnGroup(Group):
    """Finitely presented group with a small-cancellation relator set.

    Equality of words is decided by Dehn reduction of ``u^-1 v``.  Canonical
    representatives are the shortlex-least geodesics, found by a breadth-first
    ball that grows lazily; candidates are bucketed by their abelianised image
    so that only a handful of Dehn reductions are needed per lookup.
    """

    kind = "dehn_presentation"

    def __init__(self, generators: Sequence[str], relators: Sequence[str],
                 ball_cap: int = 2_000_000):
        gens = [str(g) for g in generators]
        if len(set(gens)) != len(gens) or not all(len(g) == 1 and g.islower() for g in gens):
            raise PresentationError("generators must be distinct single lowercase letters")
        alphabet, inverse = [], {}
        for g in gens:
            alphabet += [g, g.upper()]
            inverse[g], inverse[g.upper()] = g.upper(), g
        super().__init__(alphabet, inverse)
        self.generators = tuple(gens)
        self.relators = tuple(relators)
        self.ball_cap = ball_cap
        rels = []
        for r in relators:
            w = self.parse(r)
            if not w:
                raise PresentationError("empty relator")
            if self._free_reduce(w) != w or (len(w) > 1 and w[0] == inverse[w[-1]]):
                raise PresentationError(f"relator {r!r} is not cyclically reduced")
            rels.append(w)
        self._rels = rels
        self._symmetrized = self._symmetrize(rels)
        self.max_piece_ratio = self._check_pieces()
        # C'(1/6) is the classical hypothesis under which Dehn's algorithm decides
        # the word problem; the weaker half-length bound is all we enforce.
        self.small_cancellation_sixth = self.max_piece_ratio < 1 / 6
        self.mode = "dehn"
        self._by_first: dict[str, list[Word]] = {}
        for r in self._symmetrized:
            self._by_first.setdefault(r[0], []).append(r)
        self._gen_index = {}
        for i, g in enumerate(self.generators):
            self._gen_index[g] = (i, 1)
            self._gen_index[g.upper()] = (i, -1)
        self._even_relators = all(len(r) % 2 == 0 for r in rels)
        self._projector = self._abelian_projector()
        self._levels: list[list[Word]] = [[()]]
        self._length: dict[Word, int] = {(): 0}
        self._buckets: dict[tuple, list[Word]] = {self._abelian_key(()): [()]}

    def to_dict(self):
        return {"kind": "dehn_presentation", "generators": list(self.generators),
                "relators": ["".join(r) for r in self._rels]}

    # presentation checks --------------------------------------------------
    def _free_reduce(self, word) -> Word:
        out: list[str] = []
        inv = self._inverse
        for s in word:
            if out and out[-1] == inv[s]:
                out.pop()
            else:
                out.append(s)
        return tuple(out)

    def _symmetrize(self, rels) -> list[Word]:
        seen: dict[Word, None] = {}
        for r in rels:
            for w in (r, self.invert(r)):
                for i in range(len(w)):
                    seen.setdefault(w[i:] + w[:i], None)
        return list(seen)

    def _check_pieces(self) -> float:
        worst = 0.0
        sym = self._symmetrized
        for i, u in enumerate(sym):
            for v in sym[i + 1:]:
                p = 0
                while p < min(len(u), len(v)) and u[p] == v[p]:
                    p += 1
                for w in (u, v):
                    if 2 * p >= len(w):
                        raise PresentationError(
                            f"piece {''.join(u[:p])!r} is not shorter than half of {''.join(w)!r}")
                    worst = max(worst, p / len(w))
        return worst

    # Dehn reduction -------------------------------------------------------
    def dehn_reduce(self, word) -> Word:
        w = list(self._free_reduce(word))
        changed = True
        while changed:
            changed = False
            for i in range(len(w)):
                best = None
                for r in self._by_first.get(w[i], ()):
                    k = 0
                    while k < len(r) and i + k < len(w) and w[i + k] == r[k]:
                        k += 1
                    if 2 * k > len(r) and (best is None or k - (len(r) - k) > best[0]):
                        best = (k - (len(r) - k), k, r)
                if best is not None:
                    _, k, r = best
                    w[i:i + k] = self.invert(r[k:])
                    w = list(self._free_reduce(w))
                    changed = True
                    break
        return tuple(w)

    def is_trivial(self, word) -> bool:
        return not self.dehn_reduce(word)

    # abelianisation buckets -----------------------------------------------
    def _abelian_projector(self) -> np.ndarray | None:
        k = len(self.generators)
        vecs = np.array([self._exponents(r) for r in self._rels], dtype=float).reshape(-1, k)
        if not np.any(vecs):
            return None
        return np.eye(k) - np.linalg.pinv(vecs) @ vecs

    def _exponents(self, word) -> list[int]:
        v = [0] * len(self.generators)
        for s in word:
            i, d = self._gen_index[s]
            v[i] += d
        return v

    def _abelian_key(self, word) -> tuple:
        v = self._exponents(word)
        # all relators of even length make word-length parity an invariant
        head = (len(word) % 2,) if self._even_relators else ()
        if self._projector is None:
            return head + tuple(v)
        return head + tuple(np.round(self._projector @ np.array(v, dtype=float), 9) + 0.0)

    # breadth-first ball ---------------------------------------------------
    def _lookup(self, word, max_len: int) -> Word | None:
        for v in self._buckets.get(self._abelian_key(word), ()):
            if len(v) <= max_len and self.is_trivial(self.invert(v) + tuple(word)):
                return v
        return None

    def grow_ball(self, radius: int) -> None:
        while len(self._levels) <= radius:
            n = len(self._levels)
            nxt: list[Word] = []
            for x in self._levels[-1]:
                for s in self.alphabet:
                    if x and x[-1] == self._inverse[s]:
                        continue
                    w = x + (s,)
                    if self._lookup(w, n) is not None:
                        continue
                    nxt.append(w)
                    self._length[w] = n
                    self._buckets.setdefault(self._abelian_key(w), []).append(w)
            if len(self._length) > self.ball_cap:
                raise ResourceError(f"Dehn ball of radius {n} exceeds {self.ball_cap} elements")
            self._levels.append(nxt)

    def reduce(self, letters):
        w = self.dehn_reduce(letters)
        self.grow_ball(len(w))
        rep = self._lookup(w, len(w))
        assert rep is not None, "Dehn-reduced word missing from its own ball"
        return rep

    def extends(self, x, s):
        self.grow_ball(len(x) + 1)
        return (x + (s,)) in self._length

    def sphere_words(self, n, cap=DEFAULT_SPHERE_CAP):
        self.grow_ball(n)
        if len(self._levels[n]) > cap:
            raise ResourceError(f"sphere of radius {n} exceeds the cap of {cap} elements")
        yield from self._levels[n]

    def validate_lengths(self, radius: int, samples: int = 300, seed: int = 0) -> list[Word]:
        """Compare Dehn-reduced lengths with breadth-first lengths on random words.

        Mismatches switch the group into enumeration-only mode and are returned.
        """
        rng = np.random.default_rng(seed)
        bad = []
        for _ in range(samples):
            n = int(rng.integers(0, 2 * radius + 1))
            w = tuple(self.alphabet[i] for i in rng.integers(0, len(self.alphabet), n))
            d = self.dehn_reduce(w)
            if len(d) > radius:
                continue
            if len(self.reduce(w)) != len(d):
                bad.append(w)
        if bad:
            self.mode = "enumeration-only"
        return bad


def lattice(dimension: int) -> Lattice:
    return Lattice(dimension)


def dehn_presentation(generators, relators) -> DehnGroup:
    return DehnGroup(generators, relators)


def surface_group(genus: int) -> DehnGroup:
    """Closed orientable surface group with the product-of-commutators relator."""
    names = _letter_names(2 * genus)
    rel = "".join(a + b + a.upper() + b.upper() for a, b in zip(names[::2], names[1::2]))
    return DehnGroup(names, [rel])


def group_from_dict(d: dict) -> Group:
    kind = d.get("kind")
    if kind == "free":
        return free_group(int(d["rank"]))
    if kind == "free_product":
        return free_product(d["orders"])
    if kind == "lattice":
        return lattice(int(d["dimension"]))
    if kind == "dehn_presentation":
        return dehn_presentation(d["generators"], d["relators"])
    if kind == "surface":
        return surface_group(int(d["genus"]))
    raise ValueError(f"unknown group kind {kind!r}")


@dataclass(frozen=True)
class NormalForm:
    """Canonical word of a group element."""

    letters: Word
    group: Group = field(repr=False)

    @property
    def length(self) -> int:
        return len(self.letters)

    def __len__(self):
        return len(self.letters)

    def __iter__(self):
        return iter(self.letters)

    def __mul__(self, other: "NormalForm") -> "NormalForm":
        return mul(self, other)

    def inverse(self) -> "NormalForm":
        return inv(self)

    def __str__(self):
        return "".join(self.letters) if self.letters else "e"

    def __lt__(self, other: "NormalForm"):
        order = self.group._order
        return (len(self), [order[s] for s in self]) < (len(other), [order[s] for s in other])


def normalize(word, group: Group) -> NormalForm:
    return group.element(word)


def mul(x: NormalForm, y: NormalForm) -> NormalForm:
    if x.group != y.group:
        raise IncompatibleGroupsError("cannot multiply elements of different groups")
    return NormalForm(x.group.mul_words(x.letters, y.letters), x.group)


def inv(x: NormalForm) -> NormalForm:
    return NormalForm(x.group.reduce(x.group.invert(x.letters)), x.group)


def distance(x: NormalForm, y: NormalForm) -> int:
    return mul(inv(x), y).length


def sphere(group: Group, n: int, cap: int = DEFAULT_SPHERE_CAP) -> Iterator[NormalForm]:
    for w in group.sphere_words(n, cap):
        yield NormalForm(w, group)


def sphere_sizes(group: Group, n_max: int) -> list[int]:
    return [sum(1 for _ in group.sphere_words(n)) for n in range(n_max + 1)]


def elements(group: Group, words: Iterable) -> list[NormalForm]:
    return [group.element(w) for w in words]
