"""Exact mass brackets for balls and thin annuli, and the annulus property P."""
from __future__ import annotations

import enum
from dataclasses import dataclass
from fractions import Fraction
from math import isqrt
from typing import Sequence

from .builder import MeasureTree
from .dyadic import BallTester, Norm
from .exact import lcm, pow_bracket, to_fraction


class Verdict(str, enum.Enum):
    HOLDS = "holds"
    FAILS = "fails"
    UNRESOLVED = "unresolved"


@dataclass(frozen=True)
class MassBracket:
    lower: Fraction
    upper: Fraction
    resolved_depth: int

    def __post_init__(self):
        assert self.lower <= self.upper


@dataclass(frozen=True)
class AnnulusQuery:
    """A(x, r, delta) = B(x, r) minus B(x, r - r^delta)."""

    center: tuple[Fraction, ...]
    r: Fraction
    delta: Fraction
    norm: Norm = Norm.SUP

    def __post_init__(self):
        object.__setattr__(self, "center", tuple(to_fraction(c) for c in self.center))
        object.__setattr__(self, "r", to_fraction(self.r))
        object.__setattr__(self, "delta", to_fraction(self.delta))
        object.__setattr__(self, "norm", Norm(self.norm))
        if not (0 < self.r < 1):
            raise ValueError("annulus radius must lie in (0, 1)")
        if self.delta < 1:
            raise ValueError("annulus exponent must be at least 1")

    def width_bracket(self, bits: int = 64) -> tuple[Fraction, Fraction]:
        lo, hi = pow_bracket(self.r, self.delta, bits)
        return lo, min(hi, self.r)

    def inner_bracket(self, bits: int = 64) -> tuple[Fraction, Fraction]:
        """Bracket of the inner radius r - r^delta, clamped at 0."""
        w_lo, w_hi = self.width_bracket(bits)
        return max(self.r - w_hi, Fraction(0)), self.r - w_lo

    def removes_only_center(self) -> bool:
        w_lo, w_hi = self.width_bracket()
        return w_lo == w_hi == self.r


def _check_depth(tree: MeasureTree, depth: int | None) -> int:
    if depth is None:
        return tree.max_generation
    if depth < 0 or depth > tree.max_generation:
        raise ValueError(f"depth {depth} is outside 0..{tree.max_generation}")
    return depth


def _x(x) -> tuple[Fraction, ...]:
    pts = tuple(to_fraction(v) for v in x)
    if any(not (0 <= v < 1) for v in pts):
        raise ValueError(f"query point {x} is outside [0,1)^d")
    return pts


MAX_FRONTIER = 1 << 14


def _brackets(tree: MeasureTree, x, r: Fraction, inner: tuple[Fraction, Fraction] | None, norm, depth):
    """One descent of the DAG giving the ball bracket and, if requested, the annulus bracket.

    ``inner`` is (smallest, largest) possible inner radius of the annulus.
    The descent goes one generation at a time; when more than MAX_FRONTIER
    straddling cubes would be refined, it stops there and the bracket is
    reported at that coarser resolved depth.
    """
    radii = [r] if inner is None else [r, inner[0], inner[1]]
    tester = BallTester(x, radii, norm)
    ball_lo = ball_extra = ann_lo = ann_extra = Fraction(0)
    d = tree.params.d
    frontier = [(tree.root, (0,) * d, True, inner is not None)]
    gen = 0
    while frontier:
        stop = gen >= depth or len(frontier) > MAX_FRONTIER
        nxt = []
        for node, coords, want_ball, want_ann in frontier:
            rel = tester.relations(node.generation, coords, radii)
            in_b, hit_b = rel[0]
            leaf = stop or not node.children
            go_ball = go_ann = False
            if want_ball:
                if in_b:
                    ball_lo += node.mass
                elif hit_b:
                    if leaf:
                        ball_extra += node.mass
                    else:
                        go_ball = True
            if want_ann:
                in_small, _ = rel[1]
                _, hit_big = rel[2]
                inside = in_b and not hit_big
                outside = (not hit_b) or in_small
                if inside:
                    ann_lo += node.mass
                elif not outside:
                    if leaf:
                        ann_extra += node.mass
                    else:
                        go_ann = True
            if go_ball or go_ann:
                for off, child in node.children:
                    nxt.append((child, tuple(2 * k + b for k, b in zip(coords, off)), go_ball, go_ann))
        if stop:
            break
        frontier = nxt
        gen += 1
    resolved = min(gen, depth)
    ball = MassBracket(ball_lo, ball_lo + ball_extra, resolved)
    ann = MassBracket(ann_lo, ann_lo + ann_extra, resolved) if inner is not None else None
    return ball, ann


def _sup_box(tree: MeasureTree, x, radius: Fraction, depth: int) -> MassBracket:
    """Bracket of the mass of the closed sup-ball (an axis box) B(x, radius).

    The box is a product of intervals, so once a cube's coordinate interval is
    inside the box it stays inside for every descendant. A node's contribution
    therefore only depends on the node and on its straddling coordinates, which
    lets whole columns of identical cubes share one computation.
    """
    lo = [c - radius for c in x]
    hi = [c + radius for c in x]
    memo: dict[tuple, tuple[Fraction, Fraction]] = {}

    def status(k: int, n: int, i: int) -> int:
        a = Fraction(k, 1 << n)
        b = Fraction(k + 1, 1 << n)
        if lo[i] <= a and b <= hi[i]:
            return 1
        if b <= lo[i] or a > hi[i]:
            return -1
        return 0

    def visit(node, key):
        if all(k is None for k in key):
            return node.mass, Fraction(0)
        if node.generation >= depth or not node.children:
            return Fraction(0), node.mass
        mk = (node.id, key)
        hit = memo.get(mk)
        if hit is not None:
            return hit
        inner = extra = Fraction(0)
        n = node.generation + 1
        for off, child in node.children:
            ckey = []
            dropped = False
            for i, (k, b) in enumerate(zip(key, off)):
                if k is None:
                    ckey.append(None)
                    continue
                kk = 2 * k + b
                st = status(kk, n, i)
                if st < 0:
                    dropped = True
                    break
                ckey.append(None if st > 0 else kk)
            if dropped:
                continue
            a, e = visit(child, tuple(ckey))
            inner += a
            extra += e
        memo[mk] = (inner, extra)
        return inner, extra

    root_key = []
    for i in range(len(x)):
        st = status(0, 0, i)
        if st < 0:
            return MassBracket(Fraction(0), Fraction(0), depth)
        root_key.append(None if st > 0 else 0)
    inner, extra = visit(tree.root, tuple(root_key))
    return MassBracket(inner, inner + extra, depth)


def _ball_and_annulus(tree: MeasureTree, x, r: Fraction, inner: tuple[Fraction, Fraction] | None, norm: Norm,
                      depth: int):
    if norm is not Norm.SUP:
        return _brackets(tree, x, r, inner, norm, depth)
    ball = _sup_box(tree, x, r, depth)
    if inner is None:
        return ball, None
    small = _sup_box(tree, x, inner[0], depth)
    big = _sup_box(tree, x, inner[1], depth)
    # mu(A) = mu(B) - mu(B') with B' the inner ball, whose radius lies in [small, big]
    lower = max(ball.lower - big.upper, Fraction(0))
    upper = ball.upper - small.lower
    return ball, MassBracket(lower, upper, depth)


def ball_mass(tree: MeasureTree, x: Sequence, r, norm: Norm | str = Norm.SUP, depth: int | None = None) -> MassBracket:
    """Bracket of mu(B(x, r)) from the generations up to depth."""
    r = to_fraction(r)
    if r < 0:
        raise ValueError("radius must be non-negative")
    ball, _ = _ball_and_annulus(tree, _x(x), r, None, Norm(norm), _check_depth(tree, depth))
    return ball


def annulus_mass(tree: MeasureTree, x: Sequence, r, delta, norm: Norm | str = Norm.SUP, depth: int | None = None,
                 bits: int = 64) -> MassBracket:
    """Bracket of mu(A(x, r, delta)).

    When r^delta equals r the annulus is the ball minus its center, which has
    the same mass because the constructed measures have no atoms.
    """
    q = AnnulusQuery(x, r, delta, norm)
    depth = _check_depth(tree, depth)
    if q.removes_only_center():
        ball, _ = _ball_and_annulus(tree, _x(x), q.r, None, q.norm, depth)
        return ball
    _, ann = _ball_and_annulus(tree, _x(x), q.r, q.inner_bracket(bits), q.norm, depth)
    return ann


def check_P(tree: MeasureTree, x: Sequence, r, delta, eta, norm: Norm | str = Norm.SUP, depth: int | None = None,
            bits: int = 64) -> Verdict:
    """Decide mu(A(x, r, delta)) >= eta mu(B(x, r)) from exact brackets."""
    q = AnnulusQuery(x, r, delta, norm)
    eta = to_fraction(eta)
    if q.removes_only_center():
        return Verdict.HOLDS
    ball, ann = _ball_and_annulus(tree, _x(x), q.r, q.inner_bracket(bits), q.norm, _check_depth(tree, depth))
    if ball.upper == 0:
        # off the support P only holds vacuously; such points are never counted
        return Verdict.FAILS
    if ann.lower >= eta * ball.upper:
        return Verdict.HOLDS
    if ann.upper < eta * ball.lower:
        return Verdict.FAILS
    return Verdict.UNRESOLVED


def aligned_radii(x: Sequence, r_lo, r_hi, max_count: int) -> list[Fraction]:
    """Radii in [r_lo, r_hi) at which a sup-ball about x has a face on a dyadic grid line.

    These are the distances |x_i - j 2^-g|. The sup-norm mass of B(x, r) as a
    function of r only changes at such radii, so they are natural probes. Grid
    generations are used while each coordinate side has at most max_count lines
    inside the window.
    """
    pts = _x(x)
    r_lo, r_hi = to_fraction(r_lo), to_fraction(r_hi)
    width = r_hi - r_lo
    out = set()
    g = 0
    while width * 2 ** g <= max_count:
        step = Fraction(1, 2 ** g)
        for c in pts:
            # lines below c at distance in [r_lo, r_hi)
            j_hi = (c - r_lo) // step
            j = j_hi
            while j >= 0 and c - j * step < r_hi:
                if c - j * step >= r_lo:
                    out.add(c - j * step)
                j -= 1
            # lines above c
            j = -((-c - r_lo) // step)
            while j * step - c < r_hi and j * step <= 1:
                if j * step - c >= r_lo:
                    out.add(j * step - c)
                j += 1
        g += 1
    return sorted(out)


def scan_verdicts(tree: MeasureTree, x: Sequence, delta, eta, r_lo, r_hi, grid_count: int = 16,
                  norm: Norm | str = Norm.SUP, depth: int | None = None, aligned: bool = True,
                  bits: int = 64) -> list[tuple[Fraction, Verdict]]:
    """check_P over an equispaced grid of [r_lo, r_hi), plus aligned radii if requested."""
    r_lo, r_hi = to_fraction(r_lo), to_fraction(r_hi)
    if not (0 < r_lo < r_hi < 1):
        raise ValueError("need 0 < r_lo < r_hi < 1")
    radii = {r_lo + (r_hi - r_lo) * Fraction(i, grid_count) for i in range(grid_count)}
    if aligned:
        radii.update(aligned_radii(x, r_lo, r_hi, grid_count))
    return [(r, check_P(tree, x, r, delta, eta, norm, depth, bits)) for r in sorted(radii)]


def scan_radii_for_P(tree: MeasureTree, x: Sequence, delta, eta, r_lo, r_hi, grid_count: int = 16,
                     norm: Norm | str = Norm.SUP, depth: int | None = None, aligned: bool = True,
                     bits: int = 64) -> list[Fraction]:
    """Radii in the window for which P is certified to hold."""
    rows = scan_verdicts(tree, x, delta, eta, r_lo, r_hi, grid_count, norm, depth, aligned, bits)
    return [r for r, v in rows if v is Verdict.HOLDS]


# ---------------------------------------------------------------- coverings


def _closed_box_extremes(lo, hi, c, norm: Norm):
    near = [max(a - ci, ci - b, 0) for a, b, ci in zip(lo, hi, c)]
    far = [max(ci - a, b - ci) for a, b, ci in zip(lo, hi, c)]
    if norm is Norm.SUP:
        return max(near), max(far)
    if norm is Norm.L1:
        return sum(near), sum(far)
    return sum(v * v for v in near), sum(v * v for v in far)


def covering_count(x: Sequence, r, delta, d: int, norm: Norm | str = Norm.SUP, bits: int = 64) -> int:
    """Number of balls of radius r^delta used by a grid cover of A(x, r, delta).

    The annulus is covered by the cells of a lattice whose closed cells each
    fit in a ball of radius r^delta about their center; the count is the
    number of cells meeting the (slightly thickened) annulus.
    """
    norm = Norm(norm)
    q = AnnulusQuery(x, r, delta, norm)
    if len(q.center) != d:
        raise ValueError("center dimension does not match d")
    rho, _ = q.width_bracket(bits)
    r_in, _ = q.inner_bracket(bits)
    if norm is Norm.SUP:
        side = 2 * rho
    elif norm is Norm.L1:
        side = 2 * rho / d
    else:
        N = 1 << 30
        side = 2 * rho * Fraction(isqrt(N * N // d), N)
    count = -(-(2 * q.r) // side) + 1
    origin = [c - q.r for c in q.center]
    # integer frame: cell i spans [origin + i side, origin + (i+1) side]
    denom = lcm(*(v.denominator for v in origin + [side, q.r, r_in] + list(q.center)))
    S = int(side * denom)
    O = [int(v * denom) for v in origin]
    C = [int(v * denom) for v in q.center]
    R = int(q.r * denom)
    Rin = int(r_in * denom)
    if norm is Norm.EUCLID:
        R, Rin = R * R, Rin * Rin

    total = 0
    stack = [tuple((0, count) for _ in range(d))]
    while stack:
        block = stack.pop()
        lo = [o + a * S for o, (a, _) in zip(O, block)]
        hi = [o + b * S for o, (_, b) in zip(O, block)]
        near, far = _closed_box_extremes(lo, hi, C, norm)
        # a cell touching the ball only at its surface is not needed: a neighbour covers that point
        if near >= R or far <= Rin:
            continue
        size = 1
        for a, b in block:
            size *= b - a
        if size == 1:
            total += 1
            continue
        if far <= R and near > Rin:
            total += size
            continue
        axis = max(range(d), key=lambda i: block[i][1] - block[i][0])
        a, b = block[axis]
        mid = (a + b) // 2
        for part in ((a, mid), (mid, b)):
            new = list(block)
            new[axis] = part
            stack.append(tuple(new))
    return total
