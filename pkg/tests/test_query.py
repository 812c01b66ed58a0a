from fractions import Fraction as F

import pytest
from hypothesis import HealthCheck, given, settings, strategies as st

from thin_annuli.dyadic import CubeIndex, Norm, Relation, cube_ball_relation, iter_subcubes
from thin_annuli.query import (
    AnnulusQuery,
    Verdict,
    aligned_radii,
    annulus_mass,
    ball_mass,
    check_P,
    covering_count,
    scan_radii_for_P,
    scan_verdicts,
)

from conftest import chain_tree, uniform_tree

UNIT = CubeIndex(0, (0, 0))
slow = settings(max_examples=40, deadline=None, suppress_health_check=[HealthCheck.too_slow, HealthCheck.function_scoped_fixture])


def _box_area(c, r):
    # Lebesgue area of the closed sup ball about c intersected with the unit square
    area = F(1)
    for ci in c:
        area *= max(F(0), min(ci + r, F(1)) - max(ci - r, F(0)))
    return area


def _brute_ball(tree, x, r, norm, depth):
    lo = hi = F(0)
    mass = tree.levels[depth][0].mass
    for Q in iter_subcubes(UNIT, depth):
        rel = cube_ball_relation(Q, x, r, norm)
        if rel is Relation.INSIDE:
            lo += mass
        elif rel is Relation.STRADDLES:
            hi += mass
    return lo, lo + hi


def test_ball_examples(t2_tree):
    b = ball_mass(uniform_tree(0), (F(1, 2), F(1, 2)), 1, Norm.SUP)
    assert (b.lower, b.upper) == (1, 1)
    b = ball_mass(t2_tree, (F(3, 4), F(3, 4)), F(1, 8))
    assert (b.lower, b.upper) == (0, 0)


@pytest.mark.parametrize("k", [1, 2, 3, 5, 8])
def test_uniform_corner_ball(k):
    b = ball_mass(uniform_tree(k), (F(0), F(0)), F(1, 2), Norm.SUP)
    assert b.lower == F(1, 4)
    # straddling cells are those with largest index exactly 2^(k-1): 2^k + 1 of them
    assert b.upper == F(1, 4) + F(2 ** k + 1, 4 ** k)
    assert b.resolved_depth == k


def test_annulus_examples(t2_tree):
    x = (F(1, 3), F(2, 5))
    tree = uniform_tree(4)
    assert annulus_mass(tree, x, F(1, 4), 1) == ball_mass(tree, x, F(1, 4))
    assert AnnulusQuery(x, F(1, 2), 2).inner_bracket() == (F(1, 4), F(1, 4))
    a = annulus_mass(t2_tree, (F(3, 4), F(3, 4)), F(1, 8), F(5, 2))
    assert (a.lower, a.upper) == (0, 0)


def test_check_P_examples():
    tree = uniform_tree(4)
    assert check_P(tree, (F(1, 3), F(1, 3)), F(1, 5), 1, F(1, 2)) is Verdict.HOLDS
    chain = chain_tree(6)
    # all mass sits in [0, 1/64)^2, inside the removed inner ball of radius 1/4
    assert annulus_mass(chain, (F(0), F(0)), F(1, 2), 2).upper == 0
    assert check_P(chain, (F(0), F(0)), F(1, 2), 2, 1) is Verdict.FAILS


def test_scan_outside_support_is_empty(t2_tree):
    assert scan_radii_for_P(t2_tree, (F(3, 4), F(3, 4)), F(5, 2), F(9, 16), F(1, 64), F(1, 32)) == []


def test_scan_rejects_bad_window(t2_tree):
    with pytest.raises(ValueError):
        scan_verdicts(t2_tree, (F(1, 4), F(1, 4)), 2, F(1, 2), F(1, 8), F(1, 16))


def test_depth_errors(t2_tree):
    with pytest.raises(ValueError):
        ball_mass(t2_tree, (F(1, 4), F(1, 4)), F(1, 8), depth=t2_tree.max_generation + 1)
    with pytest.raises(ValueError):
        ball_mass(t2_tree, (F(5, 4), F(1, 4)), F(1, 8))


def test_aligned_radii_are_grid_distances():
    x = (F(5, 17), F(3, 11))
    rs = aligned_radii(x, F(1, 64), F(1, 32), 16)
    assert rs and all(F(1, 64) <= r < F(1, 32) for r in rs)
    for r in rs:
        assert any(((c + s * r) * 2 ** g).denominator == 1 for c in x for s in (1, -1) for g in range(12))


coord = st.integers(0, 255).map(lambda k: F(k, 256))
radius = st.integers(1, 200).map(lambda k: F(k, 256))


@slow
@given(coord, coord, radius, st.integers(0, 5))
def test_sup_ball_contains_lebesgue_area(cx, cy, r, depth):
    tree = uniform_tree(depth)
    b = ball_mass(tree, (cx, cy), r, Norm.SUP)
    assert b.lower <= _box_area((cx, cy), r) <= b.upper


@slow
@given(coord, coord, st.integers(2, 200).map(lambda k: F(k, 256)), st.sampled_from([2, 3]), st.integers(0, 5))
def test_sup_annulus_contains_lebesgue_area(cx, cy, r, delta, depth):
    tree = uniform_tree(depth)
    a = annulus_mass(tree, (cx, cy), r, delta, Norm.SUP)
    true = _box_area((cx, cy), r) - _box_area((cx, cy), r - r ** delta)
    assert a.lower <= true <= a.upper


@slow
@given(coord, coord, radius, st.sampled_from([Norm.L1, Norm.EUCLID, Norm.SUP]), st.integers(0, 4))
def test_ball_matches_cube_enumeration(cx, cy, r, norm, depth):
    tree = uniform_tree(depth)
    b = ball_mass(tree, (cx, cy), r, norm)
    assert (b.lower, b.upper) == _brute_ball(tree, (cx, cy), r, norm, depth)


@slow
@given(st.data(), st.sampled_from([Norm.SUP, Norm.EUCLID, Norm.L1]))
def test_brackets_shrink_with_depth(t3_tree, data, norm):
    from thin_annuli.dimension import sample_support_points

    seed = data.draw(st.integers(0, 10 ** 6))
    x = sample_support_points(t3_tree, 1, seed)[0]
    k = data.draw(st.integers(2, 12))
    r = F(data.draw(st.integers(1, 2 ** k - 1)), 2 ** k)
    delta = data.draw(st.sampled_from([F(2), F(3, 2), F(1)]))
    prev_b = prev_a = None
    prev_v = None
    for depth in range(0, t3_tree.max_generation + 1, 3):
        b = ball_mass(t3_tree, x, r, norm, depth)
        a = annulus_mass(t3_tree, x, r, delta, norm, depth)
        v = check_P(t3_tree, x, r, delta, F(1, 2), norm, depth)
        assert 0 <= b.lower <= b.upper <= 1
        assert a.upper <= b.upper
        if prev_b is not None:
            assert prev_b.lower <= b.lower and b.upper <= prev_b.upper
            assert prev_a.lower <= a.lower and a.upper <= prev_a.upper
            if prev_v is not Verdict.UNRESOLVED:
                assert v is prev_v
        prev_b, prev_a, prev_v = b, a, v


def test_covering_examples():
    for r in (F(1, 4), F(1, 16), F(3, 32)):
        assert covering_count((F(1, 2),), r, 2, 1) <= 2
    for norm in (Norm.SUP, Norm.EUCLID):
        scaled = [covering_count((F(1, 2), F(1, 2)), F(1, 2 ** k), 2, 2, norm) * F(1, 2 ** k) for k in range(4, 11)]
        assert max(scaled) / min(scaled) <= 4


def test_covering_is_a_cover():
    # every lattice point of the annulus is inside one of the counted cells' balls: check a dense sample
    import itertools

    x = (F(1, 2), F(1, 2))
    r = F(1, 8)
    n = covering_count(x, r, 2, 2, Norm.SUP)
    # oracle: cells of side 2 r^2 meeting the annulus, counted by brute force
    side = 2 * r ** 2
    cells = 0
    m = int(2 * r / side) + 1
    for i, j in itertools.product(range(m + 1), repeat=2):
        lo = (x[0] - r + i * side, x[1] - r + j * side)
        near = max(max(lo[0] - x[0], x[0] - lo[0] - side, 0), max(lo[1] - x[1], x[1] - lo[1] - side, 0))
        far = max(abs(lo[0] - x[0]), abs(lo[0] + side - x[0]), abs(lo[1] - x[1]), abs(lo[1] + side - x[1]))
        if near < r and far > r - r ** 2:
            cells += 1
    assert n == cells
