from fractions import Fraction as F

import pytest
from hypothesis import given, settings, strategies as st

from thin_annuli.builder import CENTRAL_TAGS, MeasureTree, Tag
from thin_annuli.dimension import (
    SupportError,
    central_event_product,
    dim_estimate,
    mass_envelope_check,
    sample_support_points,
    subsequence_witnesses,
    tagged_weight,
    trace,
)
from thin_annuli.dyadic import cube_of_point
from thin_annuli.exact import Ordering, threshold_compare

from conftest import uniform_tree


@pytest.mark.parametrize("which", ["t2_tree", "t3_tree", "cascade_tree", "t2_deep"])
def test_envelope_clean(which, request):
    rep = mass_envelope_check(request.getfixturevalue(which))
    assert rep.ok and rep.checked_classes > 0


def test_envelope_fault_injection(t2_tree):
    tree = MeasureTree.loads(t2_tree.dumps())
    node = tree.levels[20][0]
    node.mass = node.mass / tree.params.c_d ** 3
    rep = mass_envelope_check(tree)
    assert len(rep.violations) == 1
    v = rep.violations[0]
    assert (v.generation, v.node, v.side) == (20, node.id, "lower")


def test_trace_is_monotone_and_in_envelope(t2_tree):
    p = t2_tree.params
    for x in sample_support_points(t2_tree, 5, 11):
        tr = trace(t2_tree, x)
        masses = [e.mass for e in tr.entries]
        assert all(a >= b for a, b in zip(masses, masses[1:]))
        for e in tr.entries:
            assert e.ratio_lo <= e.ratio_hi
            assert threshold_compare(e.mass * p.c_d ** 2, e.generation * p.d_upper) is not Ordering.LESS
            assert threshold_compare(e.mass / p.c_d ** 2, e.generation * p.d_lower) is not Ordering.GREATER


def test_trace_off_support(t2_tree):
    with pytest.raises(SupportError):
        trace(t2_tree, (F(3, 4), F(3, 4)))


def test_witness_generations(t2_deep):
    p = t2_deep.params
    band = 2 * 21
    for rec in t2_deep.b_steps:
        g = rec.geometry
        border = tagged_weight(t2_deep, [Tag.BORDER], rec.index, g.psi)
        for x in sample_support_points(t2_deep, 3, rec.index, g.psi, border):
            upper, lower = subsequence_witnesses(t2_deep, x, g.psi)
            assert g.psi in lower
            e = trace(t2_deep, x, g.psi).entries[-1]
            assert p.d_lower - F(band, g.psi) <= e.ratio_lo and e.ratio_hi <= p.d_lower + F(band, g.psi)
        central = tagged_weight(t2_deep, CENTRAL_TAGS, rec.index, g.Psi)
        for x in sample_support_points(t2_deep, 3, rec.index, g.Psi, central):
            _, lower = subsequence_witnesses(t2_deep, x, g.Psi)
            assert g.psi_prime in lower


def test_upper_witness_after_A_phase(t2_deep):
    for x in sample_support_points(t2_deep, 6, 5):
        upper, lower = subsequence_witnesses(t2_deep, x)
        assert upper and lower
        for rec in t2_deep.schedule:
            if rec.kind != "A":
                continue
            cube = cube_of_point(x, rec.start)
            root = t2_deep.node_at(cube)
            assert rec.phi[root.id] in upper


def test_degenerate_dimensions_every_generation():
    from thin_annuli.builder import ConstructionParams, build_measure

    tree = build_measure(ConstructionParams.theorem3(2, "1", "1", "2", "3/4", 60))
    for x in sample_support_points(tree, 3, 2):
        upper, lower = subsequence_witnesses(tree, x)
        everything = list(range(1, tree.max_generation + 1))
        assert upper == everything and lower == everything


def test_central_event_products(t2_tree, t2_deep):
    assert central_event_product(t2_tree, [1]) == F(1, 4)
    assert central_event_product(t2_tree, [1, 2]) == F(1, 16)
    assert central_event_product(t2_tree, []) == 1
    assert central_event_product(t2_tree, [1, 2], complement=True) == F(9, 16)
    with pytest.raises(ValueError):
        central_event_product(t2_tree, [3])
    assert central_event_product(t2_deep, [1, 2, 3]) == F(1, 64)


def test_dim_estimate_lebesgue():
    tree = uniform_tree(8)
    pts = [(F(k, 11), F(k, 13)) for k in range(1, 9)]
    s = dim_estimate(tree, pts, 8, bits=12)
    assert s.count == 8
    assert abs(s.minimum - 2) < 1e-3 and abs(s.maximum - 2) < 1e-3


def test_dim_estimate_bands(t2_deep):
    rec = t2_deep.b_steps[2]
    g = rec.geometry
    border = tagged_weight(t2_deep, [Tag.BORDER], rec.index, g.psi)
    central = tagged_weight(t2_deep, CENTRAL_TAGS, rec.index, g.psi)
    pts = sample_support_points(t2_deep, 4, 1, g.psi, border) + sample_support_points(t2_deep, 4, 2, g.psi, central)
    s = dim_estimate(t2_deep, pts, g.psi)
    eps = 42 / g.psi
    assert s.minimum <= 1.2 + eps and s.maximum >= 1.5 - eps


def test_sampling_is_reproducible(t2_tree):
    assert sample_support_points(t2_tree, 4, 9) == sample_support_points(t2_tree, 4, 9)
    assert sample_support_points(t2_tree, 4, 9) != sample_support_points(t2_tree, 4, 10)


def test_tagged_sampling_lands_in_central_cubes(t2_tree):
    rec = t2_tree.b_steps[0]
    g = rec.geometry
    w = tagged_weight(t2_tree, CENTRAL_TAGS, rec.index, g.Psi)
    for x in sample_support_points(t2_tree, 10, 3, g.Psi, w):
        node = t2_tree.node_at(cube_of_point(x, g.Psi))
        assert node.tag in CENTRAL_TAGS and node.step == rec.index


@settings(max_examples=30, deadline=None)
@given(st.sets(st.integers(1, 3), max_size=3), st.booleans())
def test_products_over_subsets(t2_deep, steps, complement):
    eta = t2_deep.params.eta_star
    base = eta if complement else 1 - eta
    assert central_event_product(t2_deep, steps, complement) == base ** len(steps)
