import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, strategies as st

from hypwalk.errors import DivergenceError, UnsupportedError
from hypwalk.groups import free_group, free_product, lattice
from hypwalk.tree import (
    TreeGreen,
    build_branch_system,
    green_exact,
    series_coefficients,
    singularity_fit,
    solve_branch,
)
from hypwalk.walk import (
    biased_measure,
    convolve,
    delta,
    make_measure,
    return_sequence,
    sample_increments,
    simple_random_walk,
)

SQ3 = math.sqrt(3)


def first_passage_chain(r, n_max=4000):
    """F_r(e,a) on the 4-regular tree via the distance-to-target chain."""
    dist = np.zeros(n_max // 2 + 3)
    dist[1] = 1.0
    total = 0.0
    for n in range(1, n_max + 1):
        new = np.zeros_like(dist)
        new[:-1] += 0.25 * dist[1:]
        new[2:] += 0.75 * dist[1:-1]
        total += new[0] * r ** n
        new[0] = 0.0
        dist = new
    return total


def test_quadratic_system(tree2):
    for r in (0.5, 1.0):
        F = tree2.first_visit_value((), "a", r)
        assert F == pytest.approx(r / 4 + 0.75 * r * F * F, abs=1e-15)
    assert tree2.first_visit_value((), "a", 0.5) == pytest.approx(first_passage_chain(0.5), abs=1e-13)


def test_branch_values(tree2):
    assert tree2.first_visit_value((), "a", 1.0) == pytest.approx(1 / 3, abs=1e-15)
    assert np.all(tree2.branch(0.0) == 0)
    assert tree2.first_visit_value((), "b", tree2.R) == pytest.approx(1 / SQ3, abs=1e-12)


def test_point_mass_measure(F2):
    mu = make_measure([("a", 1.0)], F2)
    T = TreeGreen(mu)
    assert T.R == math.inf
    for r in (0.3, 1.0, 5.0):
        assert T.first_visit_value((), "a", r) == pytest.approx(r)
        assert T.first_visit_value((), "b", r) == 0.0
        assert T.green_e(r) == 1.0


def test_radius(tree2, tree3):
    assert tree2.R == pytest.approx(2 / SQ3, abs=1e-12)
    for k, T in ((2, tree2), (3, tree3)):
        assert 1 / T.R == pytest.approx(math.sqrt(2 * k - 1) / k, abs=1e-12)
    assert solve_branch(tree2.system, tree2.R * (1 + 1e-6)) is None
    with pytest.raises(DivergenceError):
        tree2.branch(1.2)


def test_green_values(tree2):
    assert tree2.green_e(1.0) == pytest.approx(1.5, abs=1e-14)
    assert tree2.green_value((), "a", 1.0) == pytest.approx(0.5, abs=1e-14)
    assert tree2.green_e(tree2.R) == pytest.approx(3.0, abs=1e-10)
    assert green_exact(tree2.system, 1.0, (), "a") == pytest.approx(0.5, abs=1e-14)


T2 = TreeGreen(simple_random_walk(free_group(2)))


@given(st.lists(st.sampled_from("aAbB"), max_size=8), st.floats(0.0, 1.15))
def test_transitivity_and_multiplicativity(w, r):
    T = T2
    x = T.group.reduce(tuple(w))
    assert T.green_value(x, x, r) == pytest.approx(T.green_e(r), rel=1e-14)
    Fa = T.first_visit_value((), "a", r)
    assert T.first_visit_value((), x, r) == pytest.approx(Fa ** len(x), rel=1e-12, abs=1e-300)


def test_biased_first_return_against_monte_carlo(F2):
    mu = biased_measure(F2, 0.1)
    T = TreeGreen(mu)
    assert len(T.system.variables) == 4
    U = T.system.first_return_weight(T.branch(1.0))
    assert 0 < U < 1
    # return frequency within 40 steps; the walk drifts away at speed 0.6
    samples, n = 8000, 40
    steps = sample_increments(mu, samples * n, seed=2).reshape(samples, n)
    words = [w for w, _ in mu.atoms]
    returned = 0
    for row in steps:
        state = ()
        for i in row:
            state = F2.mul_words(state, words[i])
            if not state:
                returned += 1
                break
    freq = returned / samples
    sigma = math.sqrt(U * (1 - U) / samples)
    assert abs(freq - U) < 4 * sigma + 1e-4


def test_non_tree_groups_unsupported():
    with pytest.raises(UnsupportedError):
        build_branch_system(simple_random_walk(lattice(2)))
    with pytest.raises(UnsupportedError):
        build_branch_system(make_measure([("aa", 0.4), ("AA", 0.4), ("b", 0.2)],
                                         free_group(2)))


def test_free_product_syllable_atoms():
    g = free_product([3, 2])
    mu = make_measure([("a", 0.3), ("A", 0.3), ("b", 0.4)], g)
    T = TreeGreen(mu)
    s = series_coefficients(T.system, 16, precision="float64")
    d, vals = delta(g), [1.0]
    for _ in range(16):
        d = convolve(d, mu)
        vals.append(d.mass(()))
    assert np.allclose(s.values, vals, atol=1e-13)


@pytest.mark.parametrize("k", [2, 3])
def test_coefficients_match_convolution(k):
    mu = simple_random_walk(free_group(k))
    s = series_coefficients(build_branch_system(mu), 12)
    exact = return_sequence(mu, 12, prune_eps=0.0)
    assert np.max(np.abs(s.values - exact.values)) < 1e-12
    assert np.all(s.values[1::2] == 0)


def test_exact_coefficients(tree2):
    s = series_coefficients(tree2.system, 8, precision="exact")
    assert list(s.coeffs[:5]) == [1, 0, Fraction(1, 4), 0, Fraction(7, 64)]


def test_lazy_series(srw2):
    from hypwalk.walk import lazy, return_sequence
    mu = lazy(srw2)
    s = series_coefficients(build_branch_system(mu), 10)
    assert np.allclose(s.values, return_sequence(mu, 10).values, atol=1e-14)


@pytest.mark.parametrize("fixture", ["tree2", "tree3"])
def test_singularity_slope(fixture, request):
    T = request.getfixturevalue(fixture)
    fit = singularity_fit(T)
    assert fit.exponent == pytest.approx(-0.5, abs=0.01)
    assert fit.amplitude > 0
    assert fit.diagnostics["max_rel_fd_error"] < 1e-3


def test_derivatives_against_finite_differences(tree2):
    r, h = 0.8, 1e-5
    d = tree2.derivatives(r)
    fd = (tree2.green_e(r + h) - tree2.green_e(r - h)) / (2 * h)
    assert d.dG == pytest.approx(fd, rel=1e-8)
    fd2 = (tree2.green_e(r + h) - 2 * tree2.green_e(r) + tree2.green_e(r - h)) / h ** 2
    assert d.d2G == pytest.approx(fd2, rel=1e-4)
    x = "abA"
    fdx = (tree2.green_value((), x, r + h) - tree2.green_value((), x, r - h)) / (2 * h)
    assert tree2.dgreen((), x, r) == pytest.approx(fdx, rel=1e-8)
