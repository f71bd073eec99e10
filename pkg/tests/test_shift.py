import math

import numpy as np
import pytest

from hypwalk.automaton import GeodesicAutomaton, build_geodesic_automaton
from hypwalk.green import sphere_H_sums
from hypwalk.groups import free_group
from hypwalk.shift import (
    CylinderPotential,
    build_phi_r,
    cell_matrix,
    chain_automaton,
    eigenmeasure_check,
    export_triplets,
    jordan_growth_probe,
    operator_sphere_sums,
    path_weight_sequence,
    pressure_component,
    pressure_curve,
    pressure_sqrt_slope,
    scc_decompose,
    semisimplicity_check,
)


@pytest.fixture(scope="module")
def aut2():
    return build_geodesic_automaton(free_group(2))


def test_free_component(aut2):
    dag = scc_decompose(aut2)
    nontrivial = dag.nontrivial()
    assert len(nontrivial) == 1
    assert nontrivial[0].period == 1 and len(nontrivial[0].states) == 4


def test_two_cycle_and_chain():
    cyc = GeodesicAutomaton(3, 0, [(0, "s", 1), (1, "a", 2), (2, "b", 1)])
    comp = scc_decompose(cyc).nontrivial()[0]
    assert comp.period == 2 and sorted(map(len, comp.classes)) == [1, 1]
    pot = CylinderPotential.constant(cyc, 2)
    data = pressure_component(pot, comp)
    assert data.pressure == pytest.approx(0.0, abs=1e-14) and data.period == 2
    dag = scc_decompose(chain_automaton(2))
    nt = [c.id for c in dag.nontrivial()]
    assert len([e for e in dag.edges if e[0] in nt and e[1] in nt]) == 1


def test_phi_constant_on_tree(aut2, tree2):
    for r in (1.0, tree2.R):
        pot = build_phi_r(aut2, tree2, r, m=3)
        F = tree2.first_visit_value((), "a", r)
        vals = np.array(list(pot.values.values()))
        # the first letter out of e carries H(e,s)/H(e,e), every later one F^2
        later = [v for p, v in pot.values.items() if aut2.edges[p[0]][0] != aut2.start]
        assert np.allclose(later, 2 * math.log(F), atol=1e-13)
        assert pot.variation[3] < 1e-13
    pot_R = build_phi_r(aut2, tree2, tree2.R, m=3)
    later = [v for p, v in pot_R.values.items() if aut2.edges[p[0]][0] != aut2.start]
    assert np.allclose(later, -math.log(3), atol=1e-12)
    deeper = build_phi_r(aut2, tree2, 1.0, m=4)
    for p, v in build_phi_r(aut2, tree2, 1.0, m=3).values.items():
        assert deeper.values[p] == pytest.approx(v, abs=1e-13)


def test_pressure_values(aut2, tree2):
    comp = scc_decompose(aut2).nontrivial()[0]
    zero = CylinderPotential.constant(aut2, 3)
    assert pressure_component(zero, comp).pressure == pytest.approx(math.log(3), abs=1e-13)
    pot = build_phi_r(aut2, tree2, tree2.R, m=3)
    cm = cell_matrix(pot)
    data = pressure_component(pot, comp, cm)
    assert abs(data.pressure) <= 1e-8
    assert eigenmeasure_check(pot, data, cm)["holds"]
    for r in (0.6, 1.0):
        F = tree2.first_visit_value((), "a", r)
        p = pressure_component(build_phi_r(aut2, tree2, r, m=3), comp).pressure
        assert p == pytest.approx(math.log(3 * F * F), abs=1e-12)


def test_pressure_curve(aut2, tree2):
    R = tree2.R
    grid = [R * (1 - 2.0 ** -j) for j in range(4, 13)] + [R]
    table = pressure_curve(aut2, tree2, grid, m=3)
    assert table.flags["monotone"] and table.flags["vanishes_at_R"]
    assert all(row["ratio"] == 1.0 for row in table.rows)
    fit = pressure_sqrt_slope(table)
    assert fit.exponent == pytest.approx(0.5, abs=0.05)


def test_operator_matches_sphere_sums(aut2, tree2):
    for r in (1.0, tree2.R):
        pot = build_phi_r(aut2, tree2, r, m=3)
        H = sphere_H_sums(tree2, r, 12)
        ops = operator_sphere_sums(aut2, pot, 12, H[0].mid)
        assert ops[0] == H[0].mid
        for a, b in zip(ops, H):
            assert a == pytest.approx(b.mid, abs=1e-12 * max(1.0, b.mid))
    at_R = operator_sphere_sums(aut2, build_phi_r(aut2, tree2, tree2.R, m=3), 12, 9.0)
    assert np.allclose(at_R[1:], 12.0, atol=1e-9)


def test_semisimplicity():
    dag = scc_decompose(build_geodesic_automaton(free_group(2)))
    ids = [c.id for c in dag.nontrivial()]
    assert semisimplicity_check(dag, {ids[0]: 0.0})["semisimple"]
    chain = scc_decompose(chain_automaton(2))
    a, b = [c.id for c in chain.nontrivial()]
    assert not semisimplicity_check(chain, {a: 0.0, b: 0.0})["semisimple"]
    assert semisimplicity_check(chain, {a: 0.0, b: -1.0})["semisimple"]


@pytest.mark.parametrize("length,degree,tol", [(1, 0, 0.1), (2, 1, 0.1), (3, 2, 0.15)])
def test_jordan_degrees(length, degree, tol):
    aut = chain_automaton(length)
    pot = CylinderPotential.constant(aut, 2)
    fit = jordan_growth_probe(aut, pot, n_max=400)
    assert fit.exponent == pytest.approx(degree, abs=tol)
    # the weights of a zero potential count paths; compare with integer path counts
    logs = path_weight_sequence(aut, pot, 60)
    counts = aut.path_counts(60)[1:]
    assert np.allclose(logs, np.log(np.array(counts, dtype=float)), rtol=1e-12)


def test_free_group_degree_zero(aut2, tree2):
    pot = build_phi_r(aut2, tree2, tree2.R, m=3)
    assert jordan_growth_probe(aut2, pot, n_max=200).exponent == pytest.approx(0.0, abs=0.1)


def test_export_triplets(tmp_path, aut2):
    cm = cell_matrix(CylinderPotential.constant(aut2, 2))
    export_triplets(cm, tmp_path / "m.txt")
    lines = (tmp_path / "m.txt").read_text().splitlines()
    assert len(lines) == cm.matrix.nnz + 1
