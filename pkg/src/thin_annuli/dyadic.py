"""Half-open dyadic cubes in [0, 1)^d and their relation to balls.

A cube of generation n with integer coordinates k is the product of the
intervals [k_i 2^-n, (k_i + 1) 2^-n).
"""
from __future__ import annotations

import enum
import itertools
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterator, Sequence

from .exact import lcm, to_fraction


class Norm(str, enum.Enum):
    SUP = "sup"
    L1 = "l1"
    EUCLID = "euclid"


class Relation(enum.Enum):
    INSIDE = "inside"
    OUTSIDE = "outside"
    STRADDLES = "straddles"


@dataclass(frozen=True, order=True)
class CubeIndex:
    generation: int
    coords: tuple[int, ...]

    def __post_init__(self):
        if self.generation < 0:
            raise ValueError("generation must be non-negative")
        coords = tuple(int(k) for k in self.coords)
        top = 1 << self.generation
        if any(k < 0 or k >= top for k in coords):
            raise ValueError(f"coordinates {coords} fall outside generation {self.generation}")
        object.__setattr__(self, "coords", coords)

    @property
    def dim(self) -> int:
        return len(self.coords)

    @property
    def side(self) -> Fraction:
        return Fraction(1, 1 << self.generation)

    def child(self, offset: Sequence[int]) -> "CubeIndex":
        return CubeIndex(self.generation + 1, tuple(2 * k + b for k, b in zip(self.coords, offset)))

    def children(self) -> list["CubeIndex"]:
        return [self.child(off) for off in offsets(self.dim)]

    def parent(self) -> "CubeIndex":
        if self.generation == 0:
            raise ValueError("the unit cube has no parent")
        return CubeIndex(self.generation - 1, tuple(k >> 1 for k in self.coords))

    def ancestor(self, generation: int) -> "CubeIndex":
        shift = self.generation - generation
        if shift < 0:
            raise ValueError("ancestor generation is deeper than the cube")
        return CubeIndex(generation, tuple(k >> shift for k in self.coords))

    def contains_cube(self, other: "CubeIndex") -> bool:
        return other.generation >= self.generation and other.ancestor(self.generation) == self

    def contains_point(self, x) -> bool:
        lo = smallest_vertex(self)
        return all(a <= to_fraction(xi) < a + self.side for a, xi in zip(lo, x))

    def offset_in_parent(self) -> tuple[int, ...]:
        return tuple(k & 1 for k in self.coords)


def offsets(d: int) -> list[tuple[int, ...]]:
    """Child offsets in lexicographic order. Offset (0,...,0) is the smallest-vertex child."""
    return list(itertools.product((0, 1), repeat=d))


def cube_of_point(x: Sequence, n: int) -> CubeIndex:
    pts = [to_fraction(v) for v in x]
    if any(v < 0 or v >= 1 for v in pts):
        raise ValueError(f"point {x} is outside [0,1)^d")
    return CubeIndex(n, tuple((v.numerator << n) // v.denominator for v in pts))


def smallest_vertex(Q: CubeIndex) -> tuple[Fraction, ...]:
    return tuple(Fraction(k, 1 << Q.generation) for k in Q.coords)


def vertex_coord_sum(Q: CubeIndex) -> Fraction:
    return sum(smallest_vertex(Q), Fraction(0))


def boundary_cubes(Q: CubeIndex, n: int) -> frozenset[CubeIndex]:
    """Generation-n subcubes of Q that are face-adjacent to the complement of Q."""
    if n <= Q.generation:
        raise ValueError("boundary cubes need a strictly deeper generation")
    span = 1 << (n - Q.generation)
    base = [k * span for k in Q.coords]
    out = set()
    for local in itertools.product(range(span), repeat=Q.dim):
        if any(j == 0 or j == span - 1 for j in local):
            out.add(CubeIndex(n, tuple(b + j for b, j in zip(base, local))))
    return frozenset(out)


def smallest_face_cubes(Q: CubeIndex, n: int) -> list[CubeIndex]:
    """Generation-n subcubes of Q touching the face where the first coordinate is smallest."""
    if n <= Q.generation:
        raise ValueError("face cubes need a strictly deeper generation")
    span = 1 << (n - Q.generation)
    base = [k * span for k in Q.coords]
    out = []
    for local in itertools.product(range(span), repeat=Q.dim - 1):
        out.append(CubeIndex(n, (base[0],) + tuple(b + j for b, j in zip(base[1:], local))))
    return out


def iter_subcubes(Q: CubeIndex, n: int) -> Iterator[CubeIndex]:
    span = 1 << (n - Q.generation)
    base = [k * span for k in Q.coords]
    for local in itertools.product(range(span), repeat=Q.dim):
        yield CubeIndex(n, tuple(b + j for b, j in zip(base, local)))


class BallTester:
    """Exact relation tests between dyadic cubes and closed balls about one center.

    All rationals are put over one common denominator so each test is a few
    integer comparisons. ``radii`` lists every radius the caller will ask about.
    """

    def __init__(self, center: Sequence, radii: Sequence, norm: Norm | str = Norm.SUP):
        self.norm = Norm(norm)
        self.center = tuple(to_fraction(c) for c in center)
        self.radii = tuple(to_fraction(r) for r in radii)
        if any(r < 0 for r in self.radii):
            raise ValueError("radii must be non-negative")
        self.scale = lcm(*(q.denominator for q in self.center + self.radii))
        self._c = [c.numerator * (self.scale // c.denominator) for c in self.center]
        self._r = {r: r.numerator * (self.scale // r.denominator) for r in self.radii}

    def _geometry(self, generation: int, coords: Sequence[int]):
        L = self.scale
        near = []
        far = []
        open_side = False
        for k, c in zip(coords, self._c):
            lo = k * L
            hi = lo + L
            c <<= generation
            near.append(max(lo - c, c - hi, 0))
            far.append(max(c - lo, hi - c))
            if c >= hi:
                open_side = True
        return near, far, open_side

    def _combine(self, parts: list[int]) -> int:
        if self.norm is Norm.SUP:
            return max(parts)
        if self.norm is Norm.L1:
            return sum(parts)
        return sum(p * p for p in parts)

    def _radius(self, r: Fraction, generation: int) -> int:
        R = self._r[r] << generation
        return R * R if self.norm is Norm.EUCLID else R

    def relations(self, generation: int, coords: Sequence[int], radii: Sequence[Fraction]):
        """For each radius return (contained, intersects) for the closed ball of that radius."""
        near, far, open_side = self._geometry(generation, coords)
        n_val = self._combine(near)
        f_val = self._combine(far)
        out = []
        for r in radii:
            R = self._radius(r, generation)
            contained = f_val <= R
            if self.norm is Norm.SUP:
                L = self.scale
                Rl = self._r[r] << generation
                hits = True
                for k, c in zip(coords, self._c):
                    c <<= generation
                    if not (k * L <= c + Rl and k * L + L > c - Rl):
                        hits = False
                        break
            else:
                hits = n_val < R or (n_val == R and not open_side)
            out.append((contained, hits))
        return out

    def ball(self, generation: int, coords: Sequence[int], r: Fraction) -> Relation:
        (contained, hits), = self.relations(generation, coords, (r,))
        if contained:
            return Relation.INSIDE
        if not hits:
            return Relation.OUTSIDE
        return Relation.STRADDLES


def cube_ball_relation(Q: CubeIndex, center: Sequence, r, norm: Norm | str = Norm.SUP) -> Relation:
    """Classify Q against the closed ball B(center, r).

    INSIDE means the closure of Q lies in the ball, OUTSIDE means Q and the
    ball are disjoint. The half-open faces of Q are respected.
    """
    r = to_fraction(r)
    tester = BallTester(center, (r,), norm)
    return tester.ball(Q.generation, Q.coords, r)
