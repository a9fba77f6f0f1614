import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose

from spatial_psl.grounding import (
    GroundingError,
    GroundPotential,
    PotentialSet,
    distance_to_satisfaction,
    dump_ground_program,
    ground,
    soft_and,
    soft_not,
    soft_or,
)
from spatial_psl.rules import EvidenceSet, parse_evidence, parse_program

GRID = np.linspace(0.0, 1.0, 101)
A, B = np.meshgrid(GRID, GRID, indexing="ij")


def test_operator_examples():
    assert soft_and(0.7, 0.5) == pytest.approx(0.2)
    assert soft_or(0.7, 0.5) == 1.0
    assert soft_not(0.0) == 1.0


def test_operators_reject_out_of_range():
    for bad in (-0.1, 1.1, float("nan")):
        with pytest.raises(ValueError):
            soft_and(bad, 0.5)
        with pytest.raises(ValueError):
            soft_not(bad)


def test_lukasiewicz_identities_on_grid():
    assert_allclose(soft_and(A, np.ones_like(A)), A, atol=1e-12)
    assert_allclose(soft_or(A, np.zeros_like(A)), A, atol=1e-12)
    assert_allclose(soft_not(soft_not(A)), A, atol=1e-12)
    assert_allclose(soft_not(soft_and(A, B)), soft_or(1 - A, 1 - B), atol=1e-12)
    assert_allclose(soft_not(soft_or(A, B)), soft_and(1 - A, 1 - B), atol=1e-12)


def test_operators_stay_in_unit_interval():
    for f in (soft_and, soft_or):
        v = f(A, B)
        assert v.min() >= 0.0 and v.max() <= 1.0


# distance to satisfaction -------------------------------------------------


def test_distance_examples():
    # (!a | b) with a, b free
    p = GroundPotential(1.0, pos=(1,), neg=(0,))
    assert distance_to_satisfaction(p, [0.9, 0.3]) == pytest.approx(0.6)
    assert distance_to_satisfaction(GroundPotential(1.0, pos=(0,)), [1.0]) == 0.0
    # (!a) with a observed at 1
    obs = GroundPotential(1.0, neg_obs=(1.0,))
    for y in ([], [0.0], [1.0]):
        assert distance_to_satisfaction(obs, y) == 1.0


def test_distance_index_out_of_range():
    with pytest.raises(IndexError):
        distance_to_satisfaction(GroundPotential(1.0, pos=(2,)), [0.5])


@st.composite
def potentials(draw, n=4):
    pos = tuple(draw(st.lists(st.integers(0, n - 1), max_size=3)))
    neg = tuple(draw(st.lists(st.integers(0, n - 1), max_size=3)))
    unit = st.floats(0, 1)
    pos_obs = tuple(draw(st.lists(unit, max_size=2)))
    neg_obs = tuple(draw(st.lists(unit, max_size=2)))
    if not (pos or neg or pos_obs or neg_obs):
        pos = (0,)
    return GroundPotential(1.0, pos, neg, pos_obs, neg_obs)


vec4 = st.lists(st.floats(0, 1), min_size=4, max_size=4)


@settings(max_examples=300, deadline=None)
@given(potentials(), vec4, vec4, st.floats(0, 1))
def test_distance_is_convex(p, y1, y2, t):
    y1, y2 = np.array(y1), np.array(y2)
    lhs = distance_to_satisfaction(p, t * y1 + (1 - t) * y2)
    rhs = t * distance_to_satisfaction(p, y1) + (1 - t) * distance_to_satisfaction(p, y2)
    assert lhs <= rhs + 1e-12


@settings(max_examples=300, deadline=None)
@given(potentials(), st.lists(st.booleans(), min_size=4, max_size=4))
def test_boolean_distance_matches_classical_truth(p, bits):
    p = GroundPotential(1.0, p.pos, p.neg, tuple(float(v >= 0.5) for v in p.pos_obs), tuple(float(v >= 0.5) for v in p.neg_obs))
    y = np.array(bits, dtype=float)
    satisfied = (
        any(bits[i] for i in p.pos)
        or any(not bits[i] for i in p.neg)
        or any(v == 1.0 for v in p.pos_obs)
        or any(v == 0.0 for v in p.neg_obs)
    )
    assert (distance_to_satisfaction(p, y) == 0.0) == satisfied


# grounding ----------------------------------------------------------------

FIXTURE_PROGRAM = """
closed object(obj). closed mention(men).
closed attr_o(obj, attr, val). closed attr_m(men, attr, val).
open candidate(men, obj).
1.0: candidate(M, O) <- object(O) & mention(M) & attr_o(O, A, V) & attr_m(M, A, V).
1.0: candidate(M, O) <- object(O) & mention(M) & object(O1) & mention(M1) & candidate(M1, O1).
"""

# 2 mentions x 3 objects; attributes match on exactly (m1, o1) and (m2, o3)
FIXTURE_EVIDENCE = """
object(o1) = 1.0
object(o2) = 1.0
object(o3) = 1.0
mention(m1) = 1.0
mention(m2) = 1.0
attr_o(o1, color, red) = 1.0
attr_o(o2, color, blue) = 1.0
attr_o(o3, shape, cube) = 1.0
attr_m(m1, color, red) = 1.0
attr_m(m2, shape, cube) = 1.0
"""


def test_fixture_grounding_counts():
    ps = ground(parse_program(FIXTURE_PROGRAM), parse_evidence(FIXTURE_EVIDENCE))
    first = [p for p in ps.potentials if p.rule_index == 0]
    # hand enumeration: only (m1, o1, color, red) and (m2, o3, shape, cube) survive
    assert len(first) == 2
    assert sorted(ps.free_atoms[p.pos[0]][1] for p in first) == [("m1", "o1"), ("m2", "o3")]
    assert sorted(args for _, args in ps.free_atoms) == sorted(itertools.product(("m1", "m2"), ("o1", "o2", "o3")))
    assert ps.n_free == 6


def test_zero_observed_body_literal_prunes():
    prog = parse_program("closed b(item). open y(item).\n1.0: y(X) <- b(X).")
    ps = ground(prog, parse_evidence("b(a) = 0.0\nb(c) = 1.0"))
    assert [ps.free_atoms[p.pos[0]] for p in ps.potentials] == [("y", ("c",))]


def test_empty_evidence_closed_body_gives_nothing():
    prog = parse_program("closed b(item). closed c(item).\n1.0: c(X) <- b(X).")
    ps = ground(prog, EvidenceSet())
    assert ps.potentials == [] and ps.n_free == 0


def test_unsafe_rule_rejected():
    prog = parse_program("closed b(item). open y(item).\n1.0: y(X) <- b(Z).")
    with pytest.raises(GroundingError):
        ground(prog, parse_evidence("b(a) = 1.0"))


def test_unknown_constant_type_rejected():
    prog = parse_program("closed b(item). open y(item).\n1.0: y(X) <- b(X).")
    with pytest.raises(GroundingError):
        ground(prog, parse_evidence("domain item: a\nb(zz) = 1.0"))


def test_grounding_is_deterministic_and_dump_lists_every_potential(tmp_path):
    prog, ev = parse_program(FIXTURE_PROGRAM), parse_evidence(FIXTURE_EVIDENCE)
    a, b = ground(prog, ev), ground(prog, ev)
    assert a.potentials == b.potentials and a.free_atoms == b.free_atoms
    text = dump_ground_program(a, tmp_path / "ground.txt")
    assert len(text.strip().splitlines()) == len(a.potentials)
    assert (tmp_path / "ground.txt").read_text() == text


def test_potential_set_rejects_bad_indices():
    with pytest.raises(GroundingError):
        PotentialSet([GroundPotential(1.0, pos=(3,))], [("y", ("a",))])
