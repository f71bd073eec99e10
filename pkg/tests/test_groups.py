import numpy as np
import pytest
from hypothesis import given, strategies as st

from hypwalk.errors import AlphabetError, IncompatibleGroupsError, PresentationError
from hypwalk.groups import (
    dehn_presentation,
    distance,
    free_group,
    free_product,
    group_from_dict,
    inv,
    lattice,
    mul,
    normalize,
    sphere,
    sphere_sizes,
    surface_group,
)

F2 = free_group(2)
letters2 = st.lists(st.sampled_from(F2.alphabet), max_size=12)


def test_free_reduction():
    assert str(normalize("aAb", F2)) == "b"


@given(letters2)
def test_normalize_idempotent(w):
    x = normalize(w, F2)
    assert normalize(x, F2) == x


def test_genus_two_relator_is_trivial():
    g = surface_group(2)
    assert g.element("abABcdCD").length == 0
    assert g.element("cdCDabAB").length == 0


def test_mul_and_inv():
    assert str(mul(F2.element("ab"), F2.element("Ba"))) == "aa"
    assert str(inv(F2.element("ab"))) == "BA"
    Z2 = lattice(2)
    assert mul(Z2.element("a"), Z2.element("b")).length == 2


@given(letters2, letters2, letters2)
def test_group_axioms(u, v, w):
    x, y, z = (F2.element(t) for t in (u, v, w))
    assert mul(mul(x, y), z) == mul(x, mul(y, z))
    assert mul(x, inv(x)) == F2.identity
    assert distance(x, y) == distance(y, x)
    assert distance(x, z) <= distance(x, y) + distance(y, z)


@given(st.lists(st.sampled_from(("a", "b", "B", "c", "C")), max_size=14))
def test_free_product_inverse(w):
    g = free_product([2, 3, 0])
    x = g.element(w)
    assert mul(x, inv(x)).length == 0
    assert g.element(x.letters) == x


def test_sphere_sizes_free():
    assert sphere_sizes(F2, 5) == [1, 4, 12, 36, 108, 324]


def test_sphere_sizes_lattice_bfs():
    # breadth-first search on Z^2 with unit steps
    seen, frontier, sizes = {(0, 0)}, [(0, 0)], [1]
    for _ in range(4):
        nxt = []
        for p in frontier:
            for d in ((1, 0), (-1, 0), (0, 1), (0, -1)):
                q = (p[0] + d[0], p[1] + d[1])
                if q not in seen:
                    seen.add(q)
                    nxt.append(q)
        frontier = nxt
        sizes.append(len(nxt))
    assert sphere_sizes(lattice(2), 4) == sizes
    assert sizes[2] == 8


def test_surface_growth_series():
    # rational growth series of the genus-2 surface group
    num = [1, 2, 2, 2, 1]
    den = [1, -6, -6, -6, 1]
    a = []
    for n in range(5):
        v = (num[n] if n < len(num) else 0) - sum(den[k] * a[n - k] for k in range(1, min(n, 4) + 1))
        a.append(v)
    assert sphere_sizes(surface_group(2), 4) == a


def test_sphere_elements_have_right_length():
    for x in sphere(free_product([2, 2, 2]), 6):
        assert x.length == 6


def test_bad_letters_and_groups():
    with pytest.raises(AlphabetError):
        normalize("az", F2)
    with pytest.raises(IncompatibleGroupsError):
        mul(F2.element("a"), free_group(3).element("a"))
    with pytest.raises(PresentationError):
        dehn_presentation(["a", "b"], ["aA"])


def test_small_cancellation_flag():
    assert surface_group(2).small_cancellation_sixth
    g = dehn_presentation(["a", "b"], ["aabb"])
    assert not g.small_cancellation_sixth


def test_group_from_dict_round_trip():
    for d in ({"kind": "free", "rank": 2}, {"kind": "free_product", "orders": [2, 2, 2]},
              {"kind": "lattice", "dimension": 2}, {"kind": "surface", "genus": 2}):
        g = group_from_dict(d)
        assert group_from_dict(g.to_dict()) == g


def test_validate_lengths_surface():
    g = surface_group(2)
    assert g.validate_lengths(radius=4, samples=200) == []
    assert g.mode == "dehn"


def test_dehn_words_equal_iff_reduction_trivial():
    g = surface_group(2)
    rng = np.random.default_rng(1)
    for _ in range(50):
        w = tuple(g.alphabet[i] for i in rng.integers(0, 8, 4))
        x = g.element(w)
        assert g.is_trivial(g.invert(x.letters) + w)
