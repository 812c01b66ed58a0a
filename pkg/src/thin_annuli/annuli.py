"""Intersections of two thin Euclidean annuli in the plane.

Inputs are exact rationals. Intersection points of two circles have the form
c1 + lam v +- (sqrt(K) / D2) J v with rational lam, K, D2, so the only inexact
step is one square root, which is bracketed with integer arithmetic. Every
reported distance is an interval that contains the true value.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterator, Sequence

import numpy as np

from .exact import floor_log2, sqrt_bracket, to_fraction


class PrecisionError(ArithmeticError):
    """The working precision cannot certify the requested decision."""


class HypothesisError(ValueError):
    """The configuration violates the standing assumptions of the diameter estimate."""


@dataclass(frozen=True)
class Interval:
    lo: Fraction
    hi: Fraction

    def __post_init__(self):
        if self.lo > self.hi:
            raise ValueError("empty interval")

    @classmethod
    def point(cls, v) -> "Interval":
        v = to_fraction(v)
        return cls(v, v)

    @property
    def width(self) -> Fraction:
        return self.hi - self.lo

    @property
    def mid(self) -> Fraction:
        return (self.lo + self.hi) / 2

    def __add__(self, other):
        other = _iv(other)
        return Interval(self.lo + other.lo, self.hi + other.hi)

    __radd__ = __add__

    def __neg__(self):
        return Interval(-self.hi, -self.lo)

    def __sub__(self, other):
        return self + (-_iv(other))

    def __rsub__(self, other):
        return _iv(other) - self

    def __mul__(self, other):
        other = _iv(other)
        ps = (self.lo * other.lo, self.lo * other.hi, self.hi * other.lo, self.hi * other.hi)
        return Interval(min(ps), max(ps))

    __rmul__ = __mul__

    def square(self) -> "Interval":
        if self.lo >= 0:
            return Interval(self.lo ** 2, self.hi ** 2)
        if self.hi <= 0:
            return Interval(self.hi ** 2, self.lo ** 2)
        return Interval(Fraction(0), max(self.lo ** 2, self.hi ** 2))

    def sqrt(self, bits: int) -> "Interval":
        if self.hi < 0:
            raise ValueError("sqrt of a negative interval")
        lo = sqrt_bracket(max(self.lo, Fraction(0)), bits)[0]
        hi = sqrt_bracket(self.hi, bits)[1]
        return Interval(lo, hi)

    def round_out(self, bits: int) -> "Interval":
        """Widen to dyadic endpoints carrying about ``bits`` significant bits."""
        mag = max(abs(self.lo), abs(self.hi))
        if mag == 0:
            return self
        e = floor_log2(mag) - bits
        unit = Fraction(2) ** e
        lo = (self.lo / unit).__floor__() * unit
        hi = -((-self.hi / unit).__floor__()) * unit
        return Interval(lo, hi)

    def __contains__(self, v) -> bool:
        return self.lo <= to_fraction(v) <= self.hi


def _iv(v) -> Interval:
    return v if isinstance(v, Interval) else Interval.point(v)


@dataclass(frozen=True)
class PrecisionContext:
    bits: int = 512

    def __post_init__(self):
        if self.bits < 16:
            raise ValueError("precision must be at least 16 bits")


@dataclass(frozen=True)
class AnnulusSpec:
    """Closed annulus {y : r - r^delta_g <= |y - center| <= r}."""

    center: tuple[Fraction, Fraction]
    radius: Fraction
    delta_g: int = 30

    def __post_init__(self):
        object.__setattr__(self, "center", tuple(to_fraction(c) for c in self.center))
        object.__setattr__(self, "radius", to_fraction(self.radius))
        if len(self.center) != 2:
            raise ValueError("annuli live in the plane")
        if not (0 < self.radius < 1):
            raise ValueError("radius must lie in (0, 1)")
        if int(self.delta_g) != self.delta_g or self.delta_g < 1:
            raise ValueError("delta_g must be a positive integer")

    @property
    def width(self) -> Fraction:
        return self.radius ** self.delta_g

    @property
    def inner(self) -> Fraction:
        return self.radius - self.width


@dataclass(frozen=True)
class IntervalPoint:
    x: Interval
    y: Interval
    side: int  # +1 / -1 relative to the oriented center line, 0 on it
    circles: tuple[str, str]
    offset_sq: Fraction  # exact squared distance to the center line


def _sub(a, b):
    return (a[0] - b[0], a[1] - b[1])


def circle_circle_intersections(c1, r1, c2, r2, ctx: PrecisionContext = PrecisionContext(),
                                labels: tuple[str, str] = ("c1", "c2")) -> list[IntervalPoint]:
    """Intersection points of two circles with exact rational data.

    The number of points (0, 1 or 2) is decided exactly. Concentric circles
    give no points, including the coincident case.
    """
    c1 = tuple(to_fraction(v) for v in c1)
    c2 = tuple(to_fraction(v) for v in c2)
    r1, r2 = to_fraction(r1), to_fraction(r2)
    v = _sub(c2, c1)
    D2 = v[0] ** 2 + v[1] ** 2
    if D2 == 0:
        return []
    s = (D2 + r1 ** 2 - r2 ** 2) / 2
    K = r1 ** 2 * D2 - s ** 2
    if K < 0:
        return []
    lam = s / D2
    base = (c1[0] + lam * v[0], c1[1] + lam * v[1])
    if K == 0:
        return [IntervalPoint(Interval.point(base[0]), Interval.point(base[1]), 0, labels, Fraction(0))]
    root = Interval(*sqrt_bracket(K, ctx.bits))
    mu = Interval(root.lo / D2, root.hi / D2)
    jv = (-v[1], v[0])
    out = []
    for sign in (1, -1):
        sm = mu if sign > 0 else -mu
        px = (base[0] + sm * jv[0]).round_out(ctx.bits)
        py = (base[1] + sm * jv[1]).round_out(ctx.bits)
        out.append(IntervalPoint(px, py, sign, labels, K / D2))
    return out


def interval_distance(p: IntervalPoint, q: IntervalPoint, bits: int) -> Interval:
    dx = p.x - q.x
    dy = p.y - q.y
    return (dx.square() + dy.square()).sqrt(bits)


@dataclass
class Component:
    vertices: list[IntervalPoint]
    sides: tuple[int, ...]
    diameter: Interval  # certified bracket of the diameter
    pad: Fraction  # arc bulge allowance already included in diameter.hi
    wraps: bool = False  # the piece goes all the way around the centers

    @property
    def error_radius(self) -> Fraction:
        return self.diameter.width


@dataclass
class IntersectionResult:
    components: list[Component]
    degenerate: bool = False
    hypotheses_ok: bool = True
    notes: list[str] = field(default_factory=list)

    @property
    def max_diameter(self) -> Interval | None:
        if not self.components:
            return None
        return Interval(max(c.diameter.lo for c in self.components), max(c.diameter.hi for c in self.components))


def scale_index(radius: Fraction) -> int:
    """The n with 2^(-n-1) < radius <= 2^-n."""
    t = floor_log2(radius)
    n = -t
    if Fraction(2) ** t == radius:
        return n
    return n - 1


def hypotheses_hold(a1: AnnulusSpec, a2: AnnulusSpec, n: int) -> list[str]:
    """Standing assumptions: radii in [2^(-n-1), 2^-n] and 2^(-5n) <= |z1 - z2| <= 2^-n / 30."""
    out = []
    lo, hi = Fraction(1, 2 ** (n + 1)), Fraction(1, 2 ** n)
    for name, a in (("first", a1), ("second", a2)):
        if not (lo <= a.radius <= hi):
            out.append(f"{name} radius outside [2^-(n+1), 2^-n]")
    v = _sub(a2.center, a1.center)
    D2 = v[0] ** 2 + v[1] ** 2
    if D2 < Fraction(1, 2 ** (10 * n)):
        out.append("centers closer than 2^(-5n)")
    if D2 > Fraction(1, 900 * 2 ** (2 * n)):
        out.append("centers farther apart than 2^-n / 30")
    return out


def _line_meets_region(a1: AnnulusSpec, a2: AnnulusSpec) -> set[int]:
    """Rays of the center line met by the intersection of the annuli.

    Ray +1 points from z1 towards z2, ray -1 away from it.

    On that line the distance to z1 is |s| and to z2 is |s - D|. The question
    reduces to comparing rational interval ends with +-D, done on squares.
    """
    v = _sub(a2.center, a1.center)
    D2 = v[0] ** 2 + v[1] ** 2

    def le_shift(p, q):
        # p <= q + D  (D = sqrt(D2) > 0)
        t = p - q
        return t <= 0 or t * t <= D2

    def ge_shift(p, q):
        # p >= q + D
        t = p - q
        return t >= 0 and t * t >= D2

    rays = set()
    ints1 = [(1, a1.inner, a1.radius), (-1, -a1.radius, -a1.inner)]
    # second annulus on the line: s in D + [inner, radius] or D - [inner, radius]
    for ray, lo1, hi1 in ints1:
        for sgn in (1, -1):
            lo2, hi2 = (a2.inner, a2.radius) if sgn > 0 else (-a2.radius, -a2.inner)
            # intervals [lo1, hi1] and [D + lo2, D + hi2] overlap?
            if le_shift(lo1, hi2) and ge_shift(hi1, lo2):
                rays.add(ray)
    return rays


def annuli_intersection_components(a1: AnnulusSpec, a2: AnnulusSpec, ctx: PrecisionContext = PrecisionContext(),
                                   n: int | None = None) -> IntersectionResult:
    """Connected pieces of the intersection of two annuli with certified diameters.

    Boundary vertices are the crossings between a circle of one annulus and a
    circle of the other. Vertices are grouped by the side of the center line;
    the two groups form one component when the region meets that line. The
    diameter is the largest vertex distance plus an allowance for the bulge of
    the boundary arcs, which is at most M^2 / (4 R) per arc for chord M on a
    circle of radius R.

    In polar coordinates about z1 the region is, on each side of the line, an
    angular interval with a radial segment per angle. So if it meets both rays
    of the line it is a single ring-like piece; its diameter is bracketed by
    the radii instead. If it meets one ray, the vertices must lie on that
    ray's side, else the piece spans most of the turn and the vertex model
    does not apply.
    """
    if n is None:
        n = scale_index(max(a1.radius, a2.radius))
    bad = hypotheses_hold(a1, a2, n)
    if a1.center == a2.center:
        return IntersectionResult([], degenerate=True, hypotheses_ok=not bad,
                                  notes=["concentric annuli: the intersection is an annulus, no diameter claim"])
    circles1 = (("outer1", a1.radius), ("inner1", a1.inner))
    circles2 = (("outer2", a2.radius), ("inner2", a2.inner))
    verts: list[IntervalPoint] = []
    for (l1, r1), (l2, r2) in itertools.product(circles1, circles2):
        verts.extend(circle_circle_intersections(a1.center, r1, a2.center, r2, ctx, (l1, l2)))
    result = IntersectionResult([], hypotheses_ok=not bad, notes=list(bad))
    if not verts:
        result.notes.append("no boundary crossings")
        return result
    groups: dict[int, list[IntervalPoint]] = {1: [], -1: []}
    for p in verts:
        if p.side == 0:
            groups[1].append(p)
            groups[-1].append(p)
        else:
            groups[p.side].append(p)
    rays = _line_meets_region(a1, a2)
    merged = list({p.circles + (p.side,): p for p in groups[1] + groups[-1]}.values())
    if len(rays) == 2:
        diam = Interval(2 * max(a1.inner, a2.inner), 2 * min(a1.radius, a2.radius))
        result.components.append(Component(merged, (1, -1), diam, Fraction(0), wraps=True))
        result.notes.append("intersection wraps around the centers")
        return result
    if rays:
        (ray,) = rays
        v = _sub(a2.center, a1.center)
        for p in merged:
            proj = (p.x - a1.center[0]) * Interval.point(v[0]) + (p.y - a1.center[1]) * Interval.point(v[1])
            if not (proj.lo > 0 if ray > 0 else proj.hi < 0):
                raise PrecisionError("component spans more than a quarter turn; vertex model not certified")
        parts = [((1, -1), merged)]
    else:
        parts = [((s,), g) for s, g in groups.items() if g]
    r_min = min(a1.inner, a2.inner)
    for sides, pts in parts:
        dmax = Interval(Fraction(0), Fraction(0))
        for p, q in itertools.combinations(pts, 2):
            dist = interval_distance(p, q, ctx.bits)
            dmax = Interval(max(dmax.lo, dist.lo), max(dmax.hi, dist.hi))
        if 2 * dmax.hi >= r_min:
            raise PrecisionError("component is not small against the radii; arc allowance not certified")
        pad = dmax.hi ** 2 / (2 * r_min)
        diam = Interval(dmax.lo, dmax.hi + pad).round_out(ctx.bits)
        result.components.append(Component(pts, sides, diam, pad))
    return result


@dataclass(frozen=True)
class DiameterCheck:
    n: int
    diameter: Interval | None
    bound_coefficient: int
    passes: bool
    hypotheses: list[str]
    components: int


def below_scaled_bound(value: Fraction, coefficient: int, n: int) -> bool:
    """value <= coefficient * 2^(-13.5 n), decided exactly on squares."""
    if value <= 0:
        return True
    return (value / coefficient) ** 2 <= Fraction(1, 2 ** (27 * n))


def diameter_bound_check(n: int, a1: AnnulusSpec, a2: AnnulusSpec, ctx: PrecisionContext = PrecisionContext(),
                         coefficient: int = 24) -> DiameterCheck:
    """Whether every component has diameter at most coefficient * 2^(-13.5 n)."""
    bad = hypotheses_hold(a1, a2, n)
    if bad:
        raise HypothesisError("; ".join(bad))
    res = annuli_intersection_components(a1, a2, ctx, n)
    diam = res.max_diameter
    ok = diam is None or below_scaled_bound(diam.hi, coefficient, n)
    return DiameterCheck(n, diam, coefficient, ok, bad, len(res.components))


def heron_altitude_sq(a, b, c) -> Fraction:
    """Square of the altitude onto side b of the triangle with sides a, b, c."""
    a, b, c = (to_fraction(v) for v in (a, b, c))
    if b == 0:
        raise ValueError("the base of the triangle has zero length")
    s = (a + b + c) / 2
    area_sq = s * (s - a) * (s - b) * (s - c)
    if area_sq < 0:
        raise ValueError("side lengths violate the triangle inequality")
    return 4 * area_sq / b ** 2


def heron_lower_bound(n: int, ctx: PrecisionContext = PrecisionContext()) -> tuple[Interval, Interval]:
    """Altitude for the tangent optimality triangle and its ratio to 2^(-13.5 n)."""
    if n < 1:
        raise ValueError("n must be positive")
    a = Fraction(1, 2 ** n) - Fraction(1, 2 ** (5 * n))
    b = Fraction(1, 2 ** (5 * n))
    c = Fraction(1, 2 ** n) - Fraction(1, 2 ** (30 * n))
    m_sq = heron_altitude_sq(a, b, c)
    alt = Interval.point(m_sq).sqrt(ctx.bits)
    ratio = Interval.point(m_sq * 2 ** (27 * n)).sqrt(ctx.bits)
    return alt, ratio


def optimality_family(n: int, delta_g: int = 30) -> tuple[AnnulusSpec, AnnulusSpec]:
    """Two annuli whose outer circles are internally tangent at the origin."""
    r1 = Fraction(1, 2 ** n)
    r2 = r1 - Fraction(1, 2 ** (5 * n))
    return AnnulusSpec((0, r1), r1, delta_g), AnnulusSpec((0, r2), r2, delta_g)


def implicit_derivative_x(r, r1, x, y1, y2, delta_g: int = 30, ctx: PrecisionContext = PrecisionContext()) -> Interval:
    """d x/d r along the crossing of C(z1, r1 - r1^delta_g) with C(z2, r), centers on the vertical axis."""
    r, r1, x, y1, y2 = (to_fraction(v) for v in (r, r1, x, y1, y2))
    if x == 0 or y1 == y2:
        raise ZeroDivisionError("implicit derivative undefined at x = 0 or y1 = y2")
    rho = r1 - r1 ** delta_g
    rad = Interval.point(rho ** 2 - x ** 2).sqrt(ctx.bits)
    val = rad * Fraction(r, x * (y1 - y2))
    return val.round_out(ctx.bits)


def implicit_derivative_y(r, y1, y2) -> Fraction:
    """d y/d r along the same crossing."""
    r, y1, y2 = (to_fraction(v) for v in (r, y1, y2))
    if y1 == y2:
        raise ZeroDivisionError("implicit derivative undefined for y1 = y2")
    return r / (y1 - y2)


def random_admissible_configs(n: int, count: int, seed: int, delta_g: int = 30,
                              near_tangent_share: float = 0.75) -> Iterator[tuple[AnnulusSpec, AnnulusSpec]]:
    """Seeded annulus pairs satisfying the standing assumptions at scale n.

    Centers are separated by an exact rational distance along a rational
    direction ((1-t^2)/(1+t^2), 2t/(1+t^2)). Most pairs are pushed towards
    internal tangency of the outer circles, the regime where the intersection
    is longest. Uses numpy's PCG64 generator.
    """
    rng = np.random.Generator(np.random.PCG64(seed))
    lo, hi = Fraction(1, 2 ** (n + 1)), Fraction(1, 2 ** n)
    d_min, d_max = Fraction(1, 2 ** (5 * n)), Fraction(1, 30 * 2 ** n)
    if d_min > d_max:
        raise HypothesisError(f"no admissible center distance at n = {n}: 2^(-5n) > 2^-n / 30")
    bits = 40
    unit = Fraction(1, 1 << bits)
    for _ in range(count):
        # distance: log-uniform in [d_min, d_max]
        while True:
            e = rng.uniform(np.log2(float(d_min)), np.log2(float(d_max)))
            k = int(np.floor(e))
            dist = Fraction(2) ** k * (1 + unit * int(rng.integers(0, 1 << bits)))
            if d_min <= dist <= d_max:
                break
        t = Fraction(int(rng.integers(-(1 << 20), 1 << 20)), 1 << 20)
        u = ((1 - t * t) / (1 + t * t), 2 * t / (1 + t * t))
        r1 = lo + (hi - lo) * unit * int(rng.integers(0, 1 << bits))
        if rng.random() < near_tangent_share:
            gap = Fraction(2) ** -int(rng.integers(0, 30 * n)) * (unit * int(rng.integers(1, 1 << bits)))
            sign = 1 if rng.random() < 0.5 else -1
            r2 = r1 + sign * dist * (1 - gap)
            if not (lo <= r2 <= hi):
                r2 = r1 - sign * dist * (1 - gap)
        else:
            r2 = lo + (hi - lo) * unit * int(rng.integers(0, 1 << bits))
        if not (lo <= r2 <= hi):
            r2 = r1
        base = Fraction(1, 2)
        z1 = (base, base)
        z2 = (base + dist * u[0], base + dist * u[1])
        yield AnnulusSpec(z1, r1, delta_g), AnnulusSpec(z2, r2, delta_g)


def sampled_diameter(a1: AnnulusSpec, a2: AnnulusSpec, comp: Component, grid: int = 400) -> tuple[float, float]:
    """Floating-point oracle: sample the bounding box of a component.

    Returns (largest distance between sampled members, distance from the
    farthest vertex to its nearest member), the second being the sampling
    resolution to compare against.
    """
    xs = [float(p.x.mid) for p in comp.vertices]
    ys = [float(p.y.mid) for p in comp.vertices]
    if comp.wraps:
        # sample the whole smaller disk
        a = min((a1, a2), key=lambda a: a.radius)
        cx, cy, r = float(a.center[0]), float(a.center[1]), float(a.radius)
        xs, ys = xs + [cx - r, cx + r], ys + [cy - r, cy + r]
    pad = float(comp.pad) + 1e-3 * max(max(xs) - min(xs), max(ys) - min(ys))
    gx = np.linspace(min(xs) - pad, max(xs) + pad, grid)
    gy = np.linspace(min(ys) - pad, max(ys) + pad, grid)
    X, Y = np.meshgrid(gx, gy)
    ok = np.ones_like(X, dtype=bool)
    for a in (a1, a2):
        cx, cy = float(a.center[0]), float(a.center[1])
        dist = np.hypot(X - cx, Y - cy)
        ok &= (dist <= float(a.radius)) & (dist >= float(a.inner))
    pts = np.stack([X[ok], Y[ok]], axis=1)
    if len(pts) < 2:
        return 0.0, float("inf")
    hull = _extreme_points(pts)
    diff = hull[:, None, :] - hull[None, :, :]
    diam = float(np.sqrt((diff ** 2).sum(-1)).max())
    res = 0.0
    for vx, vy in zip(xs, ys):
        res = max(res, float(np.hypot(pts[:, 0] - vx, pts[:, 1] - vy).min()))
    return diam, res


def _extreme_points(pts: np.ndarray, directions: int = 256) -> np.ndarray:
    angles = np.linspace(0, np.pi, directions, endpoint=False)
    dirs = np.stack([np.cos(angles), np.sin(angles)], axis=1)
    proj = pts @ dirs.T
    idx = np.unique(np.concatenate([proj.argmax(0), proj.argmin(0)]))
    return pts[idx]


def config_row(a1: AnnulusSpec, a2: AnnulusSpec, check: DiameterCheck, bits: int) -> dict:
    from .exact import approx_log2, fraction_str

    diam = check.diameter
    return {
        "n": check.n,
        "r1": fraction_str(a1.radius),
        "r2": fraction_str(a2.radius),
        "z1": " ".join(fraction_str(c) for c in a1.center),
        "z2": " ".join(fraction_str(c) for c in a2.center),
        "delta_g": a1.delta_g,
        "bits": bits,
        "components": check.components,
        "log2_diameter_upper": "" if diam is None or diam.hi == 0 else f"{approx_log2(diam.hi):.6f}",
        "error_radius_log2": "" if diam is None or diam.width == 0 else f"{approx_log2(diam.width):.3f}",
        "bound": f"{check.bound_coefficient}*2^(-13.5n)",
        "passes": check.passes,
    }
