"""Spatial-side checks of annulus concentration for t-regular planar measures.

Test measures are four-map Cantor sets at the corners of the unit square,
discretised as equal-weight atoms at the centers of the depth-level cells.
Atom coordinates are integers in units of 1/(2 q^depth) for ratio p/q, so
ball and annulus counts are exact.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

import numpy as np
from scipy import integrate
from scipy.spatial.distance import cdist

from .exact import to_fraction

DELTA = 4
CORNERS = ((0, 0), (1, 0), (0, 1), (1, 1))


class RegularityError(ValueError):
    def __init__(self, message, point=None, radius=None):
        super().__init__(message)
        self.point = point
        self.radius = radius


class ResolutionError(ValueError):
    pass


@dataclass
class AtomicMeasure:
    grid: np.ndarray  # integer coordinates, shape (N, 2)
    unit: Fraction  # physical length of one grid unit
    ratio: Fraction
    depth: int
    cell_size: Fraction
    t_nominal: float
    c_t: float = float("nan")
    C_t: float = float("nan")
    extremes: dict = field(default_factory=dict)

    @property
    def size(self) -> int:
        return len(self.grid)

    @property
    def weights(self) -> np.ndarray:
        return np.full(self.size, 1.0 / self.size)

    @property
    def points(self) -> np.ndarray:
        return self.grid.astype(float) * float(self.unit)

    @property
    def diameter(self) -> float:
        span = self.grid.max(0) - self.grid.min(0)
        return float(np.hypot(*span)) * float(self.unit)


def _grid_sq(m: AtomicMeasure, r: Fraction) -> int:
    """Largest integer squared grid distance that is <= r^2, or -1 when r < 0."""
    if r < 0:
        return -1
    q = (r / m.unit) ** 2
    return q.numerator // q.denominator


def _orbit_representatives(grid: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Representatives of the atoms under the symmetries of the square, and the inverse map.

    The corner configuration is invariant under the eight symmetries of the
    square, so ball counts only need to be computed once per orbit.
    """
    S = int(grid.min()) + int(grid.max())
    x, y = grid[:, 0], grid[:, 1]
    images = []
    for a, b in ((x, y), (y, x)):
        for fa in (a, S - a):
            for fb in (b, S - b):
                images.append(fa * (S + 1) + fb)
    keys = np.min(np.stack(images), axis=0)
    uniq, inverse = np.unique(keys, return_inverse=True)
    reps = np.stack([uniq // (S + 1), uniq % (S + 1)], axis=1)
    return reps, inverse


def ball_counts(m: AtomicMeasure, radii: Sequence, chunk: int = 512) -> np.ndarray:
    """counts[i, j] = number of atoms within closed distance radii[j] of atom i.

    Squared grid distances are integers below 2^53, so the float computation
    is exact.
    """
    thresholds = np.array([_grid_sq(m, to_fraction(r)) for r in radii], dtype=float)
    X = m.grid.astype(float)
    reps, inverse = _orbit_representatives(m.grid)
    R = reps.astype(float)
    out = np.empty((len(R), len(thresholds)), dtype=np.int64)
    for start in range(0, len(R), chunk):
        d2 = cdist(R[start:start + chunk], X, "sqeuclidean")
        for j, T in enumerate(thresholds):
            out[start:start + chunk, j] = (d2 <= T).sum(1) if T >= 0 else 0
    return out[inverse.reshape(-1)]


def make_t_regular_cantor(ratio, depth: int, spread_limit: float = 64.0, radii_count: int = 12) -> AtomicMeasure:
    """Equal-weight atoms of the four-corner Cantor set with the given contraction ratio.

    The two-sided regularity bound c r^t <= mu(B(x, r)) <= C r^t is measured
    at every atom over r in [4 cell_size, diameter/4]. Certification fails
    when some ball is empty or C/c exceeds spread_limit.
    """
    ratio = to_fraction(ratio)
    if not (0 < ratio <= Fraction(1, 2)):
        raise ValueError("contraction ratio must lie in (0, 1/2]")
    if depth < 3:
        raise ValueError("depth must be at least 3")
    p, q = ratio.numerator, ratio.denominator
    # cell center = sum_j b_j (1 - ratio) ratio^(j-1) + ratio^depth / 2, scaled by 2 q^depth
    steps = [2 * (q - p) * p ** (j - 1) * q ** (depth - j) for j in range(1, depth + 1)]
    if 2 * q ** depth >= 1 << 30:
        raise ValueError("depth too large for exact integer coordinates")
    coords = np.zeros((1, 2), dtype=np.int64)
    for step in steps:
        corners = np.array(CORNERS, dtype=np.int64) * step
        coords = (coords[:, None, :] + corners[None, :, :]).reshape(-1, 2)
    coords = coords + p ** depth
    unit = Fraction(1, 2 * q ** depth)
    t = math.log(4) / math.log(q / p)
    m = AtomicMeasure(coords, unit, ratio, depth, ratio ** depth, t)
    _certify(m, spread_limit, radii_count)
    return m


def _certify(m: AtomicMeasure, spread_limit: float, radii_count: int):
    lo = 4 * m.cell_size
    hi = Fraction(m.diameter / 4).limit_denominator(1 << 20)
    if hi <= lo:
        raise RegularityError("depth too small: the certification range is empty")
    radii = [lo * (hi / lo) ** Fraction(j, radii_count - 1) for j in range(radii_count)]
    radii = [Fraction(float(r)).limit_denominator(1 << 40) for r in radii]
    counts = ball_counts(m, radii)
    mass = counts / m.size
    rt = np.array([float(r) ** m.t_nominal for r in radii])
    norm = mass / rt[None, :]
    i_min, j_min = np.unravel_index(norm.argmin(), norm.shape)
    i_max, j_max = np.unravel_index(norm.argmax(), norm.shape)
    m.c_t = float(norm.min())
    m.C_t = float(norm.max())
    m.extremes = {
        "min": (tuple(m.points[i_min]), radii[j_min]),
        "max": (tuple(m.points[i_max]), radii[j_max]),
        "radii": (radii[0], radii[-1]),
    }
    if m.c_t <= 0:
        raise RegularityError("an atom has an empty ball", m.points[i_min], radii[j_min])
    if m.C_t / m.c_t > spread_limit:
        raise RegularityError(
            f"regularity spread {m.C_t / m.c_t:.3g} exceeds {spread_limit}", m.points[i_max], radii[j_max]
        )


@dataclass(frozen=True)
class EnergyParams:
    t: float
    s: float
    eta: Fraction
    delta: int = DELTA

    @classmethod
    def for_t(cls, t: float, eta="1/10") -> "EnergyParams":
        if not (0.5 < t <= 2):
            raise ValueError("t must lie in (1/2, 2]")
        return cls(t, (t + 0.5) / 2, to_fraction(eta))

    def __post_init__(self):
        if self.delta != DELTA:
            raise ValueError("only delta = 4 is supported")
        if not (0 < self.eta < 1):
            raise ValueError("eta must lie in (0, 1)")
        if not (0.5 < self.s <= 1.25):
            raise ValueError("s must lie in (1/2, 5/4]")


def pairwise_energy(points: np.ndarray, weights: np.ndarray, s: float, chunk: int = 1024) -> float:
    """sum over distinct pairs i != j of w_i w_j |x_i - x_j|^-s."""
    points = np.asarray(points, dtype=float)
    weights = np.asarray(weights, dtype=float)
    total = 0.0
    for start in range(0, len(points), chunk):
        block = points[start:start + chunk]
        diff = block[:, None, :] - points[None, :, :]
        dist = np.sqrt((diff ** 2).sum(-1))
        idx = np.arange(len(block))
        dist[idx, start + idx] = np.inf
        total += float((weights[start:start + chunk, None] * weights[None, :] * dist ** (-s)).sum())
    return total


def square_self_energy_constant(s: float) -> float:
    """E |U - V|^-s for U, V independent and uniform on the unit square (finite for s < 2)."""
    if s >= 2:
        raise ValueError("the self-energy of a square diverges for s >= 2")

    def radial(theta):
        c, sn = math.cos(theta), math.sin(theta)
        R = 1 / c
        return R ** (2 - s) / (2 - s) - (c + sn) * R ** (3 - s) / (3 - s) + c * sn * R ** (4 - s) / (4 - s)

    val, _ = integrate.quad(radial, 0, math.pi / 4, epsabs=1e-13, epsrel=1e-12)
    return 8 * val


@dataclass(frozen=True)
class EnergyResult:
    value: float  # off-diagonal double sum
    correction: float  # same-cell self-energy estimate, not included in value


def s_energy(m: AtomicMeasure, s: float) -> EnergyResult:
    if s >= 2:
        raise ValueError("s >= 2 is rejected in the plane")
    if s >= m.t_nominal:
        raise ValueError("s must be below the regularity exponent for a finite energy")
    w = 1.0 / m.size
    value = pairwise_energy(m.points, m.weights, s)
    # each cell is a square of side cell_size carrying mass w
    correction = m.size * w * w * float(m.cell_size) ** (-s) * square_self_energy_constant(s)
    return EnergyResult(value, correction)


def annulus_and_ball_counts(m: AtomicMeasure, r) -> tuple[np.ndarray, np.ndarray]:
    r = to_fraction(r)
    inner = r - r ** DELTA
    counts = ball_counts(m, [r, inner])
    return counts[:, 0] - counts[:, 1], counts[:, 0]


def p_fraction(m: AtomicMeasure, r, eta, check_resolution: bool = True) -> Fraction:
    """Weight of the atoms x with mu(A(x, r, 4)) >= eta mu(B(x, r))."""
    r = to_fraction(r)
    eta = to_fraction(eta)
    if r <= 0:
        raise ValueError("radius must be positive")
    if check_resolution and m.cell_size > r ** DELTA / 4:
        raise ResolutionError(f"cell size {m.cell_size} exceeds r^4/4 = {r ** DELTA / 4}")
    ann, ball = annulus_and_ball_counts(m, r)
    # counts are integers, eta = a/b: ann >= eta ball  <=>  b ann >= a ball
    ok = eta.denominator * ann >= eta.numerator * ball
    return Fraction(int(ok.sum()), m.size)


@dataclass(frozen=True)
class DecayFit:
    verdict: str  # "fitted" or "converged"
    slope: float | None
    intercept: float | None
    points_used: int
    zero_radii: tuple


def decay_fit(fractions: Sequence[tuple]) -> DecayFit:
    """Least-squares slope of log(fraction) against log(r)."""
    rows = [(to_fraction(r) if not isinstance(r, float) else r, f) for r, f in fractions]
    if len(rows) < 5:
        raise ValueError("decay_fit needs at least 5 points")
    pos = [(float(r), float(f)) for r, f in rows if f > 0]
    zeros = tuple(r for r, f in rows if f <= 0)
    if not pos:
        return DecayFit("converged", None, None, 0, zeros)
    if len(pos) < 2:
        raise ValueError("fewer than 2 positive fractions")
    x = np.log([r for r, _ in pos])
    y = np.log([f for _, f in pos])
    slope, intercept = np.polyfit(x, y, 1)
    return DecayFit("fitted", float(slope), float(intercept), len(pos), zeros)


@dataclass(frozen=True)
class GapRow:
    k: int
    exponent: float  # the term is 2^exponent
    exact_exponent: Fraction | None
    admissible: bool


def borel_cantelli_gap_table(t, k_range: Sequence[int]) -> list[GapRow]:
    """Union-bound terms 2^(3k) 2^(-k(t - 1/2)) = 2^(k(7/2 - t)) over a range of k."""
    exact = None
    if isinstance(t, (int, str, Fraction)):
        exact = to_fraction(t)
        tv = float(exact)
    else:
        tv = float(t)
    admissible = 0.5 < tv <= 2
    rows = []
    for k in k_range:
        e_exact = k * (Fraction(7, 2) - exact) if exact is not None else None
        rows.append(GapRow(k, k * (3.5 - tv), e_exact, admissible))
    return rows


def normalized_products(rows: Sequence[tuple], t: float, eta) -> list[float]:
    """eta * fraction(r) * r^-(t - 1/2) for each (r, fraction)."""
    eta = float(to_fraction(eta))
    return [eta * float(f) * float(r) ** (-(t - 0.5)) for r, f in rows]
