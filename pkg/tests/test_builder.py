import json
from fractions import Fraction as F

import pytest
from hypothesis import HealthCheck, given, settings, strategies as st

from thin_annuli.builder import (
    BudgetError,
    CENTRAL_TAGS,
    ConstructionParams,
    InfeasibleError,
    MeasureLevel,
    MeasureTree,
    Mode,
    ParameterError,
    PreconditionError,
    Role,
    Tag,
    build_measure,
    default_c_d,
    invariant_report,
    isolate_step,
    psi,
    psi_prime,
    run_A_until_uniform,
    scheme_A_step,
    scheme_B,
    scheme_C,
    step_geometry,
)
from thin_annuli.dyadic import CubeIndex, vertex_coord_sum
from thin_annuli.exact import Ordering, threshold_compare

from conftest import cascade_params, theorem2_params, theorem3_params


def test_psi_examples():
    assert psi(3, F(5, 2)) == 11
    assert psi(4, F(5, 2)) == 13
    assert psi(0, 2) == 3


def test_psi_prime_examples():
    assert psi_prime(8, F(6, 5), F(3, 2)) == 10
    assert psi_prime(7, 1, 1) == 7
    assert psi_prime(4, F(1, 2), F(3, 2)) == 12


def test_Psi_example():
    # delta = 3/2 and d_upper / d_lower = 2
    p = ConstructionParams.theorem3(2, "1/2", "1", "3/2", "3/4", 100)
    assert psi(8, p.delta) == 14
    assert psi_prime(8, p.d_lower, p.d_upper) == 16
    assert max(psi(8, p.delta), psi_prime(8, p.d_lower, p.d_upper)) == 16


def test_psi_prime_infeasible():
    # [m d_upper, m d_upper + 1] / d_lower misses the integers: 4*7/4 = 7, p*5/3 in [7, 8]
    with pytest.raises(InfeasibleError):
        psi_prime(4, F(5, 3), F(7, 4))


@given(st.integers(0, 500), st.fractions(min_value=F(21, 20), max_value=F(10), max_denominator=20))
def test_psi_defining_inequality(m, delta):
    p = psi(m, delta)
    assert (m + 1) * delta < p <= (m + 1) * delta + 1
    assert p > m + 1


@given(st.integers(0, 400), st.fractions(min_value=F(1, 10), max_value=F(2), max_denominator=10),
       st.fractions(min_value=F(0), max_value=F(1), max_denominator=10))
def test_psi_prime_smallest(m, d_lower, extra):
    d_upper = d_lower + extra
    try:
        p = psi_prime(m, d_lower, d_upper)
    except InfeasibleError:
        assert d_lower > 1
        return
    assert m * d_upper <= p * d_lower <= m * d_upper + 1
    assert not (m * d_upper <= (p - 1) * d_lower)


def test_params_validation():
    p = theorem2_params()
    assert p.delta == F(5, 2)
    assert p.eta == F(9, 16)
    assert p.mode is Mode.THEOREM2
    with pytest.raises(ParameterError):
        ConstructionParams.theorem2(2, "6/5", "3/2", "3/4", 100, 2 ** 10)
    with pytest.raises(ParameterError):
        ConstructionParams.theorem2(2, "4/5", "3/2", "3/4", 100)
    with pytest.raises(ParameterError):
        ConstructionParams.theorem3(2, "6/5", "3/2", "2", "3/4", 100)
    assert default_c_d(2, F(3, 4), F(5, 2)) == 2 ** 21
    assert ConstructionParams.from_dict(p.to_dict()) == p
    with pytest.raises(ParameterError):
        ConstructionParams.from_dict({**p.to_dict(), "bogus": 1})


def test_scheme_A_examples():
    p = theorem2_params()
    root = CubeIndex(0, (0, 0))
    assert scheme_A_step(p, root, 1) == {CubeIndex(1, (0, 0)): F(1)}
    q = CubeIndex(1, (1, 0))
    kids = scheme_A_step(p, q, 1)
    assert len(kids) == 4 and set(kids.values()) == {F(1, 4)}
    assert scheme_A_step(p, q, F(1, 4)) == {CubeIndex(2, (2, 0)): F(1, 4)}


@given(st.integers(0, 60), st.fractions(min_value=F(1, 2 ** 90), max_value=F(1)).filter(lambda q: q > 0))
def test_scheme_A_conserves_and_follows_threshold(n, mass):
    p = theorem2_params()
    kids = scheme_A_step(p, CubeIndex(n, (0, 0)), mass)
    assert sum(kids.values()) == mass
    spread = threshold_compare(mass / 4, (n + 1) * p.d_upper) is not Ordering.LESS
    assert len(kids) == (4 if spread else 1)


def test_run_A_until_uniform_unit_cube():
    p = theorem2_params()
    res = run_A_until_uniform(p, 0, 1)
    # mass 1 is pushed into one child, already inside the band at generation 1
    assert res.phi == 1
    final = res.history[-1]
    assert len(final) == 1
    (mass,) = final
    assert threshold_compare(mass, res.phi * p.d_upper) is not Ordering.LESS
    assert threshold_compare(mass / p.c_d, res.phi * p.d_upper) is Ordering.LESS
    assert sum(m * k for m, k in final.items()) == 1


def test_run_A_immediate_stabilisation():
    p = theorem2_params()
    # mass 2^-2 at generation 1 is in the band and its A2 children (1/16 at generation 2) still are
    assert run_A_until_uniform(p, 1, F(1, 4)).phi == 2


def test_run_A_dimension_one():
    p = ConstructionParams.theorem2(1, "1/4", "1/2", "3/4", 200)
    for m in (2, 4, 8):
        res = run_A_until_uniform(p, m, F(1, 2 ** (m // 2)))
        assert res.phi <= 200


def test_run_A_budget():
    with pytest.raises(BudgetError):
        run_A_until_uniform(theorem2_params(), 4, F(1, 2 ** 6), budget=4)


def test_scheme_B_face_and_center(t2_tree):
    p = t2_tree.params
    geo = t2_tree.b_steps[0].geometry
    mass = t2_tree.levels[geo.m][0].mass
    res = scheme_B(p, CubeIndex(geo.m, (0, 0)), mass)
    assert (res.geometry.m, res.geometry.psi_prime, res.geometry.psi) == (13, 17, 36)
    faces = [(c, k) for c, k in res.summary(geo.psi).classes if c.tag is Tag.BORDER]
    assert len(faces) == 1
    node, count = faces[0]
    assert count == 2 ** (geo.psi - geo.m)
    assert node.mass == p.eta_star * mass / 2 ** (geo.psi - geo.m)
    assert res.tagged_mass([Tag.BORDER]) == p.eta_star * mass
    assert res.tagged_mass([Tag.B_CENTRAL]) == (1 - p.eta_star) * mass
    assert res.summary(geo.psi).total_mass == mass
    # the center of Q lies in the generation-psi' cube carrying the central mass
    cubes = res.cubes_at(geo.psi_prime, limit=1 << 20)
    side = 2 ** (geo.psi_prime - geo.m)
    center = CubeIndex(geo.psi_prime, (side // 2, side // 2))
    assert cubes[center] >= (1 - p.eta_star) * mass
    face_sum = sum(v for c, v in cubes.items() if c.coords[0] == 0)
    assert face_sum == p.eta_star * mass


def test_scheme_B_small_m_is_rejected():
    p = theorem2_params()
    with pytest.raises(PreconditionError) as err:
        scheme_B(p, CubeIndex(3, (0, 0)), F(1, 2 ** 5))
    assert err.value.generation == 3


def test_scheme_C_uniform_case(t3_tree):
    p = t3_tree.params
    geo = t3_tree.b_steps[0].geometry
    assert not geo.cascade
    mass = t3_tree.levels[geo.m][0].mass
    res = scheme_C(p, CubeIndex(geo.m, (0, 0)), mass)
    (face, count), = [(c, k) for c, k in res.summary(geo.psi).classes if c.tag is Tag.BORDER]
    assert count == 2 ** (geo.psi - geo.m)
    assert face.mass == p.eta_star * mass / 2 ** (geo.psi - geo.m)
    assert res.tagged_mass([Tag.C_CENTRAL]) == (1 - p.eta_star) * mass


def _cascade_oracle(p, m, psi_, mass):
    # multiset of face masses generation by generation, straight from the C2/C3 rule
    state = {p.eta_star * mass: 1}
    seq = [dict(state)]
    for n in range(m, psi_):
        nxt = {}
        for q, k in state.items():
            share = q / 2
            if threshold_compare(share, (n + 1) * p.d_upper) is not Ordering.LESS:
                nxt[share] = nxt.get(share, 0) + 2 * k
            else:
                nxt[q] = nxt.get(q, 0) + k
        state = nxt
        seq.append(dict(state))
    return seq


def test_scheme_C_cascade_matches_oracle(cascade_tree):
    p = cascade_tree.params
    geo = cascade_tree.b_steps[0].geometry
    assert geo.cascade
    mass = cascade_tree.levels[geo.m][0].mass
    res = scheme_C(p, CubeIndex(geo.m, (0, 0)), mass)
    oracle = _cascade_oracle(p, geo.m, geo.psi, mass)
    for n in range(geo.m + 1, geo.psi + 1):
        face = {}
        for node, k in res.summary(n).classes:
            if node.role is Role.FACE or node.tag is Tag.BORDER:
                face[node.mass] = face.get(node.mass, 0) + k
        assert face == oracle[n - geo.m], n
        assert sum(q * k for q, k in face.items()) == p.eta_star * mass
        for q in face:
            # the cascade band
            assert threshold_compare(q / p.eta_star, n * p.d_upper) is Ordering.GREATER
            assert threshold_compare(q / (p.c_d * 4), n * p.d_upper) is Ordering.LESS


def test_cascade_corner_rule_single_cube():
    # d_upper = 1/4: the first cascade generation is a C3 move, one charged face cube carrying eta* mu
    p = ConstructionParams.theorem3(2, "1/8", "1/4", "2", "3/4", 200)
    tree = build_measure(p)
    geo = tree.b_steps[0].geometry
    mass = tree.levels[geo.m][0].mass
    res = scheme_C(p, CubeIndex(geo.m, (0, 0)), mass)
    cubes = res.cubes_at(geo.m + 1)
    face = {c: v for c, v in cubes.items() if c.coords[0] == 2 * res.cube.coords[0]}
    assert list(face.values()) == [p.eta_star * mass]
    (corner,) = face
    siblings = [c for c in res.cube.children() if c.coords[0] == corner.coords[0]]
    assert vertex_coord_sum(corner) == max(vertex_coord_sum(c) for c in siblings)
    assert len({vertex_coord_sum(c) for c in siblings}) == len(siblings)


def test_isolate_step_examples():
    one = MeasureLevel(3, {CubeIndex(3, (5, 2)): F(1)})
    out = isolate_step(one)
    assert out.masses == {CubeIndex(4, (10, 4)): F(1)}
    two = MeasureLevel(2, {CubeIndex(2, (1, 1)): F(1, 2), CubeIndex(2, (2, 1)): F(1, 2)})
    out = isolate_step(two)
    a, b = out.masses
    # closures of the chosen children do not meet
    assert max(abs(x - y) for x, y in zip(a.coords, b.coords)) >= 2
    assert out.total_mass == 1


@pytest.mark.parametrize("which", ["t2_tree", "t3_tree", "cascade_tree"])
def test_invariants_hold(which, request):
    tree = request.getfixturevalue(which)
    assert invariant_report(tree) == []
    assert len(tree.b_steps) >= 1


def test_theorem2_schedule(t2_tree):
    rows = [(s.kind, s.start, s.end) for s in t2_tree.schedule]
    assert rows == [("A", 0, 13), ("B", 13, 36), ("A", 36, 38), ("B", 38, 98)]
    assert t2_tree.schedule[0].m_prime == 12
    assert t2_tree.node_count() == 304


def test_schedule_after_step1_is_m2a_bis(t2_tree):
    from thin_annuli.builder import in_band_m2a_bis

    m1 = t2_tree.schedule[0].end
    assert all(in_band_m2a_bis(t2_tree.params, m1, node.mass) for node in t2_tree.levels[m1])


def test_other_dimensions_build():
    for p in (
        ConstructionParams.theorem3(3, "3/2", "5/2", "2", "3/4", 40),
        ConstructionParams.theorem3(2, "1", "1", "2", "3/4", 60),
        ConstructionParams.theorem2(1, "1/4", "1/2", "3/4", 60),
    ):
        tree = build_measure(p)
        assert invariant_report(tree) == []


def test_serialization_round_trip(t2_tree):
    raw = t2_tree.dumps()
    back = MeasureTree.loads(raw)
    assert back.dumps() == raw
    assert back.digest() == t2_tree.digest()
    doc = json.loads(raw)
    assert doc["format"] == "thin-annuli-measure-tree"
    # rationals are stored as strings
    assert all(isinstance(row[2], str) and "/" in row[2] for row in doc["nodes"])


def test_determinism():
    assert build_measure(theorem2_params()).dumps() == build_measure(theorem2_params()).dumps()


def test_corrupted_tree_is_flagged(t3_tree):
    tree = MeasureTree.loads(t3_tree.dumps())
    node = tree.levels[5][0]
    node.mass = node.mass / 2
    checks = {v.check for v in invariant_report(tree)}
    assert "refinement" in checks


def test_truncation_at_completed_boundary():
    tree = build_measure(theorem2_params(97))
    assert tree.max_generation == 38
    assert tree.boundaries == [13, 36, 38]


@settings(max_examples=15, deadline=None, suppress_health_check=[HealthCheck.too_slow])
@given(st.fractions(min_value=F(11, 10), max_value=F(19, 10), max_denominator=10),
       st.fractions(min_value=F(0), max_value=F(1, 2), max_denominator=10),
       st.sampled_from([F(1, 2), F(3, 4), F(2, 3)]))
def test_random_theorem2_trees_satisfy_invariants(d_lower, gap, eta_star):
    d_upper = min(d_lower + gap, F(2))
    try:
        p = ConstructionParams.theorem2(2, d_lower, d_upper, eta_star, 80)
    except ParameterError:
        return
    try:
        tree = build_measure(p)
    except (PreconditionError, InfeasibleError):
        return
    assert invariant_report(tree) == []
    central = [n for n in tree.nodes() if n.tag in CENTRAL_TAGS]
    assert all(n.generation in {s.geometry.Psi for s in tree.b_steps} for n in central)
