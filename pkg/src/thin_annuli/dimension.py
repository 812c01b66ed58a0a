"""Local dimension traces, mass envelopes and central-event products."""
from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Sequence

import numpy as np

from .builder import CENTRAL_TAGS, MeasureTree, Node, envelope_violation
from .dyadic import cube_of_point
from .exact import Ordering, log2_bracket, threshold_compare, to_fraction


class SupportError(ValueError):
    """The query point carries no mass at the requested depth."""


@dataclass(frozen=True)
class TraceEntry:
    generation: int
    mass: Fraction
    ratio_lo: Fraction
    ratio_hi: Fraction

    @property
    def ratio(self) -> float:
        return float((self.ratio_lo + self.ratio_hi) / 2)


@dataclass(frozen=True)
class DimTrace:
    point: tuple[Fraction, ...]
    entries: tuple[TraceEntry, ...]


def _path(tree: MeasureTree, x, depth: int) -> list[Node]:
    cube = cube_of_point(x, depth)
    node = tree.root
    out = [node]
    for g in range(1, depth + 1):
        off = cube.ancestor(g).offset_in_parent()
        nxt = next((c for o, c in node.children if o == off), None)
        if nxt is None:
            raise SupportError(f"point {tuple(map(str, x))} leaves the support at generation {g}")
        node = nxt
        out.append(node)
    return out


def trace(tree: MeasureTree, x: Sequence, depth: int | None = None, bits: int = 8) -> DimTrace:
    """log2 mu(Q_n(x)) / log2 2^-n along the cubes containing x.

    Each ratio is given as an exact bracket of width at most 2^-bits / n.
    """
    depth = tree.max_generation if depth is None else depth
    pts = tuple(to_fraction(v) for v in x)
    entries = []
    for node in _path(tree, pts, depth)[1:]:
        n = node.generation
        lo, hi = log2_bracket(node.mass, bits)
        # ratio = -log2(mass)/n, so the bracket flips
        entries.append(TraceEntry(n, node.mass, -hi / n, -lo / n))
    return DimTrace(pts, tuple(entries))


@dataclass(frozen=True)
class EnvelopeViolation:
    generation: int
    node: int
    mass: Fraction
    side: str
    cubes: int


@dataclass(frozen=True)
class EnvelopeReport:
    violations: tuple[EnvelopeViolation, ...]
    checked_classes: int

    @property
    def ok(self) -> bool:
        return not self.violations


def mass_envelope_check(tree: MeasureTree) -> EnvelopeReport:
    """Check c_d^-2 2^(-n d_upper) <= mu(Q) <= c_d^2 2^(-n d_lower) for every charged cube."""
    mult = tree.multiplicities()
    bad = []
    checked = 0
    for node in tree.nodes():
        if node.generation == 0:
            continue
        checked += 1
        side = envelope_violation(tree.params, node.generation, node.mass)
        if side:
            bad.append(EnvelopeViolation(node.generation, node.id, node.mass, side, mult.get(node.id, 0)))
    return EnvelopeReport(tuple(bad), checked)


def subsequence_witnesses(tree: MeasureTree, x: Sequence, depth: int | None = None) -> tuple[list[int], list[int]]:
    """Generations where mu(Q_n(x)) sits in the upper band and in the lower band.

    Upper band: 2^(-n d_upper) <= mu < c_d 2^(-n d_upper).
    Lower band: c_d^-2 2^(-n d_lower) <= mu < c_d^2 2^(-n d_lower).
    """
    p = tree.params
    depth = tree.max_generation if depth is None else depth
    pts = tuple(to_fraction(v) for v in x)
    upper, lower = [], []
    c2 = p.c_d ** 2
    for node in _path(tree, pts, depth)[1:]:
        n, m = node.generation, node.mass
        if (threshold_compare(m, n * p.d_upper) != Ordering.LESS
                and threshold_compare(m / p.c_d, n * p.d_upper) == Ordering.LESS):
            upper.append(n)
        if (threshold_compare(m * c2, n * p.d_lower) != Ordering.LESS
                and threshold_compare(m / c2, n * p.d_lower) == Ordering.LESS):
            lower.append(n)
    return upper, lower


@dataclass(frozen=True)
class DimSummary:
    depth: int
    count: int
    minimum: float
    maximum: float
    quantiles: dict[str, float]


def dim_estimate(tree: MeasureTree, points: Sequence[Sequence], depth: int, bits: int = 8) -> DimSummary:
    """Spread of the trace ratio at one generation across sample points."""
    vals = [trace(tree, x, depth, bits).entries[-1].ratio for x in points]
    if not vals:
        raise ValueError("dim_estimate needs at least one point")
    arr = np.array(vals)
    qs = {f"q{int(q * 100):02d}": float(np.quantile(arr, q)) for q in (0.1, 0.25, 0.5, 0.75, 0.9)}
    return DimSummary(depth, len(vals), float(arr.min()), float(arr.max()), qs)


def central_event_product(tree: MeasureTree, steps: Sequence[int], complement: bool = False) -> Fraction:
    """Mass of the points that are central at each of the listed B/C steps.

    Steps are 1-based ordinals into ``tree.b_steps``. With ``complement`` the
    event is "never central" at the listed steps instead.
    """
    b_steps = tree.b_steps
    order = sorted(set(steps))
    if not order:
        return Fraction(1)
    if order[0] < 1 or order[-1] > len(b_steps):
        raise ValueError(f"steps must lie in 1..{len(b_steps)}")
    targets = [(b_steps[k - 1].geometry.Psi, b_steps[k - 1].index) for k in order]
    # after[id] = mass of the node's points satisfying the later targets; bottom-up, one target at a time
    after: dict[int, Fraction] | None = None
    for gen, index in reversed(targets):
        cur: dict[int, Fraction] = {}
        for node in tree.levels[gen]:
            hit = node.tag in CENTRAL_TAGS and node.step == index
            if hit == complement:
                cur[node.id] = Fraction(0)
            else:
                cur[node.id] = node.mass if after is None else after[node.id]
        for lvl in reversed(tree.levels[:gen]):
            for node in lvl:
                cur[node.id] = sum((cur[c.id] for _, c in node.children), Fraction(0))
        after = cur
    return after[tree.root.id]


def sample_support_points(tree: MeasureTree, count: int, seed: int, depth: int | None = None,
                          weight=None, extra_bits: int = 40) -> list[tuple[Fraction, ...]]:
    """Draw points distributed like mu, optionally restricted to an event.

    ``weight`` maps a node to the mass it keeps under the event (for instance a
    memo of central-descendant masses); children are chosen proportionally.
    The returned point is uniform inside the depth-level cube, to extra_bits
    binary digits. Uses numpy's PCG64 generator so runs are reproducible.
    """
    rng = np.random.Generator(np.random.PCG64(seed))
    depth = tree.max_generation if depth is None else depth
    d = tree.params.d
    wt = weight or (lambda node: node.mass)
    out = []
    for _ in range(count):
        node = tree.root
        coords = [0] * d
        while node.generation < depth:
            kids = [(off, c) for off, c in node.children if wt(c) > 0]
            if not kids:
                raise SupportError("sampling weight vanishes before the requested depth")
            total = sum(wt(c) for _, c in kids)
            u = Fraction(int(rng.integers(0, 1 << 62)), 1 << 62) * total
            acc = Fraction(0)
            pick = kids[-1]
            for item in kids:
                acc += wt(item[1])
                if u < acc:
                    pick = item
                    break
            off, node = pick
            coords = [2 * k + b for k, b in zip(coords, off)]
        side = 1 << depth
        point = tuple(
            Fraction(k, side) + Fraction(int(rng.integers(0, 1 << extra_bits)), side << extra_bits) for k in coords
        )
        out.append(point)
    return out


def tagged_weight(tree: MeasureTree, tags, step_index: int, generation: int):
    """Weight function for sample_support_points: mass of tagged descendants at one generation."""
    tags = tuple(tags)
    memo: dict[int, Fraction] = {}
    for lvl in reversed(tree.levels[: generation + 1]):
        for node in lvl:
            if node.generation == generation:
                memo[node.id] = node.mass if (node.tag in tags and node.step == step_index) else Fraction(0)
            else:
                memo[node.id] = sum((memo[c.id] for _, c in node.children), Fraction(0))
    return lambda node: memo.get(node.id, node.mass if node.generation > generation else Fraction(0))
