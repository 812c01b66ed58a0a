"""Scheme-level construction of the multifractal measures.

The measure at generation n is stored as a DAG of cube classes: two cubes of
the same generation carrying the same mass, role and tag have identical
subtrees, so they share one node. Children are stored as (offset, node) pairs,
which keeps the geometry exact while the number of charged cubes grows like
2^(d n).
"""
from __future__ import annotations

import enum
import hashlib
import json
from dataclasses import dataclass, field
from fractions import Fraction
from math import floor
from typing import Iterator, Sequence

from .dyadic import CubeIndex, offsets
from .exact import Ordering, fraction_str, pow2_ge, threshold_compare, to_fraction

FORMAT_NAME = "thin-annuli-measure-tree"
FORMAT_VERSION = 1


class ConstructionError(Exception):
    """Base class for construction failures."""


class ParameterError(ConstructionError, ValueError):
    pass


class PreconditionError(ConstructionError):
    def __init__(self, message, generation=None, mass=None, inequality=None):
        super().__init__(message)
        self.generation = generation
        self.mass = mass
        self.inequality = inequality


class InfeasibleError(ConstructionError):
    pass


class BudgetError(ConstructionError):
    pass


class Mode(str, enum.Enum):
    THEOREM2 = "theorem2"
    THEOREM3 = "theorem3"


class Tag(str, enum.Enum):
    BORDER = "border"
    B_CENTRAL = "b_central"
    C_CENTRAL = "c_central"
    ISOLATED = "isolated"


CENTRAL_TAGS = (Tag.B_CENTRAL, Tag.C_CENTRAL)


class Role(str, enum.Enum):
    A = "A"  # refined by scheme A
    ROOT = "root"  # starts a scheme B/C step
    FACE = "face"  # face cube inside a B/C step
    CPATH = "cpath"  # on the way from the step root down to the central cube
    CENTRAL = "central"  # the central cube and its scheme A refinement
    FACE_A = "face_a"  # face cube refined by scheme A after generation psi


def _frac(v) -> Fraction:
    return to_fraction(v)


@dataclass(frozen=True)
class ConstructionParams:
    d: int
    d_lower: Fraction
    d_upper: Fraction
    delta: Fraction
    eta_star: Fraction
    c_d: Fraction
    depth_budget: int
    mode: Mode = Mode.THEOREM2

    def __post_init__(self):
        for name in ("d_lower", "d_upper", "delta", "eta_star", "c_d"):
            object.__setattr__(self, name, _frac(getattr(self, name)))
        object.__setattr__(self, "mode", Mode(self.mode))
        object.__setattr__(self, "d", int(self.d))
        object.__setattr__(self, "depth_budget", int(self.depth_budget))
        self.validate()

    @property
    def eta(self) -> Fraction:
        return self.eta_star ** 2

    @staticmethod
    def theorem2_delta(d: int, d_lower, d_upper) -> Fraction:
        d_lower, d_upper = _frac(d_lower), _frac(d_upper)
        if d_lower <= d - 1:
            raise ParameterError("the Theorem 2 exponent needs d - 1 < d_lower")
        return (d_upper - (d - 1)) / (d_lower - (d - 1))

    @classmethod
    def theorem2(cls, d, d_lower, d_upper, eta_star, depth_budget, c_d=None) -> "ConstructionParams":
        delta = cls.theorem2_delta(d, d_lower, d_upper)
        if c_d is None:
            c_d = default_c_d(d, _frac(eta_star), delta)
        return cls(d, d_lower, d_upper, delta, eta_star, c_d, depth_budget, Mode.THEOREM2)

    @classmethod
    def theorem3(cls, d, d_lower, d_upper, delta, eta_star, depth_budget, c_d=None) -> "ConstructionParams":
        if c_d is None:
            c_d = default_c_d(d, _frac(eta_star), _frac(delta))
        return cls(d, d_lower, d_upper, delta, eta_star, c_d, depth_budget, Mode.THEOREM3)

    def validate(self):
        d = self.d
        if d < 1:
            raise ParameterError("d must be at least 1")
        if not (0 < self.d_lower <= self.d_upper <= d):
            raise ParameterError("need 0 < d_lower <= d_upper <= d")
        if self.delta <= 1:
            raise ParameterError("delta must exceed 1")
        if not (0 < self.eta_star < 1):
            raise ParameterError("eta_star must lie in (0, 1)")
        if self.depth_budget < 0:
            raise ParameterError("depth budget must be non-negative")
        errors = param_constraint_failures(d, self.eta_star, self.c_d, self.delta)
        if errors:
            raise ParameterError("; ".join(errors))
        if self.mode is Mode.THEOREM2:
            if not (d - 1 < self.d_lower < self.d_upper < d):
                raise ParameterError("Theorem 2 mode needs d - 1 < d_lower < d_upper < d")
            if self.delta != self.theorem2_delta(d, self.d_lower, self.d_upper):
                raise ParameterError("Theorem 2 mode fixes delta = (d_upper-(d-1))/(d_lower-(d-1))")
        else:
            if d < 2 or self.d_lower > d - 1:
                raise ParameterError("Theorem 3 mode needs d >= 2 and d_lower <= d - 1")

    def to_dict(self) -> dict:
        return {
            "d": self.d,
            "d_lower": fraction_str(self.d_lower),
            "d_upper": fraction_str(self.d_upper),
            "delta": fraction_str(self.delta),
            "eta_star": fraction_str(self.eta_star),
            "c_d": fraction_str(self.c_d),
            "depth_budget": self.depth_budget,
            "mode": self.mode.value,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ConstructionParams":
        known = {"d", "d_lower", "d_upper", "delta", "eta_star", "c_d", "depth_budget", "mode"}
        extra = set(data) - known
        if extra:
            raise ParameterError(f"unknown parameter keys: {sorted(extra)}")
        mode = Mode(data.get("mode", "theorem2"))
        try:
            d = int(data["d"])
            args = (d, data["d_lower"], data["d_upper"])
            budget = int(data["depth_budget"])
            eta_star = data["eta_star"]
        except KeyError as exc:
            raise ParameterError(f"missing parameter {exc.args[0]!r}") from exc
        c_d = data.get("c_d")
        if mode is Mode.THEOREM2:
            p = cls.theorem2(*args, eta_star, budget, c_d)
            if "delta" in data and _frac(data["delta"]) != p.delta:
                raise ParameterError("delta does not match the Theorem 2 formula")
            return p
        if "delta" not in data:
            raise ParameterError("Theorem 3 mode needs an explicit delta")
        return cls.theorem3(*args, data["delta"], eta_star, budget, c_d)


def param_constraint_failures(d: int, eta_star: Fraction, c_d: Fraction, delta: Fraction) -> list[str]:
    out = []
    if c_d < 2 ** (10 * d + 1):
        out.append(f"c_d must be at least 2^(10d+1) = 2^{10 * d + 1}")
    if not eta_star > 1 / c_d:
        out.append("eta_star must exceed 1/c_d")
    if not 1 - eta_star >= 1 / c_d:
        out.append("1 - eta_star must be at least 1/c_d")
    # eta_star * 2^(d+1+delta) <= c_d  <=>  eta_star/c_d <= 2^-(d+1+delta)
    if threshold_compare(eta_star / c_d, -(d + 1 + delta)) == Ordering.GREATER:
        out.append("eta_star * 2^(d+1+delta) must not exceed c_d")
    return out


def default_c_d(d: int, eta_star: Fraction, delta: Fraction) -> Fraction:
    c = Fraction(2 ** (10 * d + 1))
    while param_constraint_failures(d, eta_star, c, delta):
        c *= 2
    return c


# ---------------------------------------------------------------- exponents


def psi(m: int, delta) -> int:
    """floor((m+1) delta) + 1."""
    return floor((m + 1) * _frac(delta)) + 1


def psi_prime(m: int, d_lower, d_upper) -> int:
    """Smallest integer p with m d_upper <= p d_lower <= m d_upper + 1."""
    d_lower, d_upper = _frac(d_lower), _frac(d_upper)
    target = m * d_upper
    q = target / d_lower
    p = q.numerator // q.denominator
    if p * d_lower < target:
        p += 1
    if p * d_lower > target + 1:
        raise InfeasibleError(f"no integer p with {target} <= p*{d_lower} <= {target + 1}")
    return p


@dataclass(frozen=True)
class StepGeometry:
    scheme: str
    m: int
    psi: int
    psi_prime: int
    Psi: int
    cascade: bool = False

    def to_dict(self) -> dict:
        return {
            "scheme": self.scheme,
            "m": self.m,
            "psi": self.psi,
            "psi_prime": self.psi_prime,
            "Psi": self.Psi,
            "cascade": self.cascade,
        }


def largeness_ok(params: ConstructionParams, m: int, p_prime: int, p: int) -> bool:
    """The largeness requirement on (m, psi', psi) before a scheme B or C step."""
    if p_prime <= m:
        return False
    x = Fraction(1, 2 ** (p_prime - m))
    y = Fraction(1, 2 ** (p - m))
    e = params.d - 1
    inner = 1 - 2 * x
    if inner <= 0 or not inner ** e > params.eta_star:
        return False
    if params.mode is Mode.THEOREM2 and e >= 1:
        return (1 - x - y) ** e > inner ** e
    return True


def step_geometry(params: ConstructionParams, m: int) -> StepGeometry:
    """Exponents of the B or C step started at generation m, checked for admissibility."""
    p = psi(m, params.delta)
    if params.mode is Mode.THEOREM2:
        p_prime = psi_prime(m, params.d_lower, params.d_upper)
        scheme = "B"
        cascade = False
    else:
        if params.d_lower == params.d_upper:
            p_prime = m + 10
        else:
            p_prime = psi_prime(m, params.d_lower, params.d_upper)
        scheme = "C"
        cascade = params.d_upper < params.d - 1
    if not largeness_ok(params, m, p_prime, p):
        raise PreconditionError(
            f"generation {m} is too small for a scheme {scheme} step", generation=m, inequality="largeness"
        )
    return StepGeometry(scheme, m, p, p_prime, max(p, p_prime), cascade)


def admissible(params: ConstructionParams, m: int) -> bool:
    try:
        step_geometry(params, m)
    except (PreconditionError, InfeasibleError):
        return False
    return True


# ---------------------------------------------------------------- mass bands


def in_band_m2a(params: ConstructionParams, n: int, mass: Fraction) -> bool:
    """2^(-n d_upper) <= mass < c_d 2^(-n d_upper)."""
    e = n * params.d_upper
    return pow2_ge(mass, e) and threshold_compare(mass / params.c_d, e) == Ordering.LESS


def in_band_m2a_bis(params: ConstructionParams, n: int, mass: Fraction) -> bool:
    """2^(-n d_upper) <= mass < c_d 2^d 2^(-n d_upper)."""
    e = n * params.d_upper
    return pow2_ge(mass, e) and threshold_compare(mass / (params.c_d * 2 ** params.d), e) == Ordering.LESS


def envelope_violation(params: ConstructionParams, n: int, mass: Fraction) -> str | None:
    """Which side of c_d^-2 2^(-n d_upper) <= mass <= c_d^2 2^(-n d_lower) fails, if any."""
    c2 = params.c_d ** 2
    if threshold_compare(mass * c2, n * params.d_upper) == Ordering.LESS:
        return "lower"
    if threshold_compare(mass / c2, n * params.d_lower) == Ordering.GREATER:
        return "upper"
    return None


# ---------------------------------------------------------------- local rules


def _a_children(params: ConstructionParams, n: int, mass: Fraction) -> list[tuple[tuple[int, ...], Fraction]]:
    """Scheme A on a cube of generation n: spread evenly or push into the smallest-vertex child."""
    d = params.d
    share = mass / 2 ** d
    if pow2_ge(share, (n + 1) * params.d_upper):
        return [(off, share) for off in offsets(d)]
    return [((0,) * d, mass)]


def _face_offsets(d: int) -> list[tuple[int, ...]]:
    return [off for off in offsets(d) if off[0] == 0]


def _corner_offset(d: int) -> tuple[int, ...]:
    # the face child whose smallest vertex has the largest coordinate sum
    return (0,) + (1,) * (d - 1)


def _face_children(params, geo: StepGeometry, n: int, mass: Fraction, first: bool):
    d = params.d
    if geo.cascade:
        share = mass / 2 ** (d - 1)
        if first:
            share = params.eta_star * share
            mass = params.eta_star * mass
        if pow2_ge(share, (n + 1) * params.d_upper):
            return [(off, share) for off in _face_offsets(d)]
        return [(_corner_offset(d), mass)]
    if first:
        mass = params.eta_star * mass
    share = mass / 2 ** (d - 1)
    return [(off, share) for off in _face_offsets(d)]


# ---------------------------------------------------------------- DAG


class Node:
    __slots__ = ("id", "generation", "mass", "role", "tag", "step", "children")

    def __init__(self, id, generation, mass, role, tag=None, step=None):
        self.id = id
        self.generation = generation
        self.mass = mass
        self.role = role
        self.tag = tag
        self.step = step
        self.children: tuple[tuple[tuple[int, ...], "Node"], ...] = ()

    def key(self):
        return (self.mass, self.role, self.tag, self.step)

    def __repr__(self):
        tag = f" {self.tag.value}@{self.step}" if self.tag else ""
        return f"Node#{self.id}(g{self.generation} {self.mass} {self.role.value}{tag})"


@dataclass
class StepRecord:
    index: int
    kind: str
    start: int
    end: int
    m_prime: int | None = None
    phi: dict[int, int] = field(default_factory=dict)
    geometry: StepGeometry | None = None

    def to_dict(self) -> dict:
        out = {"index": self.index, "kind": self.kind, "start": self.start, "end": self.end}
        if self.m_prime is not None:
            out["m_prime"] = self.m_prime
            out["phi"] = {str(k): v for k, v in sorted(self.phi.items())}
        if self.geometry is not None:
            out["geometry"] = self.geometry.to_dict()
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "StepRecord":
        geo = data.get("geometry")
        return cls(
            index=data["index"],
            kind=data["kind"],
            start=data["start"],
            end=data["end"],
            m_prime=data.get("m_prime"),
            phi={int(k): v for k, v in data.get("phi", {}).items()},
            geometry=StepGeometry(**geo) if geo else None,
        )


@dataclass(frozen=True)
class MeasureLevel:
    """Sparse map from charged cubes of one generation to their masses."""

    generation: int
    masses: dict

    @property
    def total_mass(self) -> Fraction:
        return sum(self.masses.values(), Fraction(0))

    def __len__(self):
        return len(self.masses)


@dataclass(frozen=True)
class LevelSummary:
    generation: int
    classes: tuple[tuple[Node, int], ...]

    @property
    def total_mass(self) -> Fraction:
        return sum((node.mass * count for node, count in self.classes), Fraction(0))

    @property
    def charged_count(self) -> int:
        return sum(count for _, count in self.classes)

    def mass_histogram(self) -> dict[Fraction, int]:
        out: dict[Fraction, int] = {}
        for node, count in self.classes:
            out[node.mass] = out.get(node.mass, 0) + count
        return out


class MeasureTree:
    def __init__(self, params: ConstructionParams, root: Node, levels: list[list[Node]], schedule: list[StepRecord]):
        self.params = params
        self.root = root
        self.levels = levels
        self.schedule = schedule
        self._mult: dict[int, int] | None = None

    @property
    def max_generation(self) -> int:
        return len(self.levels) - 1

    @property
    def boundaries(self) -> list[int]:
        return [s.end for s in self.schedule]

    @property
    def b_steps(self) -> list[StepRecord]:
        """The completed B or C steps, in order. Step ordinals used elsewhere are 1-based positions here."""
        return [s for s in self.schedule if s.kind in ("B", "C")]

    def nodes(self) -> Iterator[Node]:
        for level in self.levels:
            yield from level

    def node_count(self) -> int:
        return sum(len(level) for level in self.levels)

    def multiplicities(self) -> dict[int, int]:
        """Number of cubes represented by each node."""
        if self._mult is None:
            mult = {self.root.id: 1}
            for level in self.levels:
                for node in level:
                    k = mult.get(node.id, 0)
                    for _, child in node.children:
                        mult[child.id] = mult.get(child.id, 0) + k
            self._mult = mult
        return self._mult

    def summary(self, n: int) -> LevelSummary:
        mult = self.multiplicities()
        return LevelSummary(n, tuple((node, mult.get(node.id, 0)) for node in self.levels[n]))

    def iter_charged(self, n: int, limit: int | None = None) -> Iterator[tuple[CubeIndex, Node]]:
        """Enumerate every charged cube of generation n. Exponential; use on small trees."""
        count = self.summary(n).charged_count
        if limit is not None and count > limit:
            raise BudgetError(f"generation {n} has {count} charged cubes, above the limit {limit}")
        d = self.params.d
        stack = [(self.root, (0,) * d)]
        while stack:
            node, coords = stack.pop()
            if node.generation == n:
                yield CubeIndex(n, coords), node
                continue
            for off, child in reversed(node.children):
                stack.append((child, tuple(2 * k + b for k, b in zip(coords, off))))

    def level(self, n: int, limit: int = 1 << 20) -> MeasureLevel:
        return MeasureLevel(n, {cube: node.mass for cube, node in self.iter_charged(n, limit)})

    def node_at(self, cube: CubeIndex) -> Node | None:
        if cube.generation > self.max_generation:
            raise ValueError(f"generation {cube.generation} is beyond the tree depth {self.max_generation}")
        node = self.root
        for g in range(1, cube.generation + 1):
            off = cube.ancestor(g).offset_in_parent()
            nxt = None
            for o, child in node.children:
                if o == off:
                    nxt = child
                    break
            if nxt is None:
                return None
            node = nxt
        return node

    def mass_of(self, cube: CubeIndex) -> Fraction:
        node = self.node_at(cube)
        return node.mass if node is not None else Fraction(0)

    def to_dict(self) -> dict:
        nodes = []
        for node in self.nodes():
            nodes.append([
                node.id,
                node.generation,
                fraction_str(node.mass),
                node.role.value,
                node.tag.value if node.tag else None,
                node.step,
                [["".join(map(str, off)), child.id] for off, child in node.children],
            ])
        return {
            "format": FORMAT_NAME,
            "version": FORMAT_VERSION,
            "params": self.params.to_dict(),
            "schedule": [s.to_dict() for s in self.schedule],
            "root": self.root.id,
            "nodes": nodes,
        }

    def dumps(self) -> bytes:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":")).encode()

    def digest(self) -> str:
        return hashlib.sha256(self.dumps()).hexdigest()

    @classmethod
    def from_dict(cls, data: dict) -> "MeasureTree":
        if data.get("format") != FORMAT_NAME:
            raise ValueError("not a serialized measure tree")
        if data.get("version") != FORMAT_VERSION:
            raise ValueError(f"unsupported tree format version {data.get('version')}")
        params = ConstructionParams.from_dict(data["params"])
        by_id: dict[int, Node] = {}
        for nid, gen, mass, role, tag, step, _ in data["nodes"]:
            by_id[nid] = Node(nid, gen, Fraction(mass), Role(role), Tag(tag) if tag else None, step)
        levels: list[list[Node]] = []
        for nid, gen, _, _, _, _, kids in data["nodes"]:
            node = by_id[nid]
            node.children = tuple((tuple(int(ch) for ch in off), by_id[cid]) for off, cid in kids)
            while len(levels) <= gen:
                levels.append([])
            levels[gen].append(node)
        schedule = [StepRecord.from_dict(s) for s in data["schedule"]]
        return cls(params, by_id[data["root"]], levels, schedule)

    @classmethod
    def loads(cls, raw: bytes | str) -> "MeasureTree":
        return cls.from_dict(json.loads(raw))


class _Frontier:
    """Hash-consing table for one generation."""

    def __init__(self, generation: int, counter: list[int]):
        self.generation = generation
        self.nodes: dict[tuple, Node] = {}
        self._counter = counter

    def intern(self, mass, role, tag=None, step=None) -> Node:
        key = (mass, role, tag, step)
        node = self.nodes.get(key)
        if node is None:
            node = Node(self._counter[0], self.generation, mass, role, tag, step)
            self._counter[0] += 1
            self.nodes[key] = node
        return node

    def ordered(self) -> list[Node]:
        return list(self.nodes.values())


class _Engine:
    def __init__(self, params: ConstructionParams, root_mass: Fraction = Fraction(1), root_generation: int = 0,
                 root_role: Role = Role.A):
        self.params = params
        self.counter = [0]
        first = _Frontier(root_generation, self.counter)
        self.root = first.intern(root_mass, root_role)
        self.levels = [first.ordered()]
        self.generation = root_generation

    @property
    def frontier(self) -> list[Node]:
        return self.levels[-1]

    def advance(self, rule) -> None:
        nxt = _Frontier(self.generation + 1, self.counter)
        for node in self.frontier:
            kids = []
            for off, mass, role, tag, step in rule(node):
                kids.append((off, nxt.intern(mass, role, tag, step)))
            kids.sort(key=lambda item: item[0])
            node.children = tuple(kids)
        self.levels.append(nxt.ordered())
        self.generation += 1

    # rules -------------------------------------------------------------

    def rule_a(self, node: Node):
        return [(off, mass, Role.A, None, None) for off, mass in _a_children(self.params, node.generation, node.mass)]

    def rule_isolate(self, step_index: int):
        zero = (0,) * self.params.d

        def rule(node: Node):
            return [(zero, node.mass, Role.ROOT, Tag.ISOLATED, step_index)]

        return rule

    def rule_step(self, geo: StepGeometry, step_index: int):
        p = self.params
        d = p.d
        central_tag = Tag.B_CENTRAL if geo.scheme == "B" else Tag.C_CENTRAL

        def finish(role, child_gen, tag=None):
            # roles and tags of a child at generation child_gen
            if child_gen == geo.Psi:
                if role is Role.CENTRAL:
                    return Role.A, central_tag
                if tag is Tag.BORDER:
                    return Role.A, Tag.BORDER
                return Role.A, None
            return role, tag

        def face_role(child_gen):
            if child_gen == geo.psi:
                return finish(Role.FACE_A, child_gen, Tag.BORDER) if geo.Psi > geo.psi else (Role.A, Tag.BORDER)
            return Role.FACE, None

        def rule(node: Node):
            n = node.generation
            child_gen = n + 1
            out = []
            if node.role is Role.ROOT:
                role, tag = face_role(child_gen)
                for off, mass in _face_children(p, geo, n, node.mass, first=True):
                    out.append((off, mass, role, tag, step_index if tag else None))
                crole = Role.CENTRAL if child_gen == geo.psi_prime else Role.CPATH
                crole, ctag = finish(crole, child_gen)
                out.append(((1,) * d, (1 - p.eta_star) * node.mass, crole, ctag, step_index if ctag else None))
            elif node.role is Role.FACE:
                role, tag = face_role(child_gen)
                for off, mass in _face_children(p, geo, n, node.mass, first=False):
                    out.append((off, mass, role, tag, step_index if tag else None))
            elif node.role is Role.CPATH:
                crole = Role.CENTRAL if child_gen == geo.psi_prime else Role.CPATH
                crole, ctag = finish(crole, child_gen)
                out.append(((0,) * d, node.mass, crole, ctag, step_index if ctag else None))
            elif node.role in (Role.CENTRAL, Role.FACE_A):
                for off, mass in _a_children(p, n, node.mass):
                    role, tag = finish(node.role, child_gen)
                    out.append((off, mass, role, tag, step_index if tag else None))
            else:
                raise ConstructionError(f"unexpected role {node.role} inside a step")
            return out

        return rule

    def check_roots(self, geo: StepGeometry):
        for node in self.frontier:
            if not in_band_m2a_bis(self.params, node.generation, node.mass):
                raise PreconditionError(
                    f"step root at generation {node.generation} with mass {node.mass} is outside the m2a-bis band",
                    generation=node.generation,
                    mass=node.mass,
                    inequality="m2a-bis",
                )

    def run_step(self, geo: StepGeometry, step_index: int):
        self.check_roots(geo)
        rule = self.rule_step(geo, step_index)
        while self.generation < geo.Psi:
            self.advance(rule)


# ---------------------------------------------------------------- public scheme operations


def scheme_A_step(params: ConstructionParams, cube: CubeIndex, mass) -> dict[CubeIndex, Fraction]:
    """Children of a charged cube under scheme A."""
    mass = _frac(mass)
    return {cube.child(off): m for off, m in _a_children(params, cube.generation, mass)}


@dataclass(frozen=True)
class UniformResult:
    phi: int
    history: tuple[dict[Fraction, int], ...]


def run_A_until_uniform(params: ConstructionParams, generation: int, mass, budget: int | None = None) -> UniformResult:
    """Iterate scheme A below a cube until every charged descendant is in the m2a band.

    Works on the multiset of descendant masses. ``history[i]`` maps masses to
    cube counts at generation generation + i.
    """
    mass = _frac(mass)
    budget = params.depth_budget if budget is None else budget
    state = {mass: 1}
    history = [dict(state)]
    n = generation
    while True:
        if n >= budget:
            raise BudgetError(f"scheme A below generation {generation} did not reach the m2a band by {budget}")
        nxt: dict[Fraction, int] = {}
        for m, count in state.items():
            for _, cm in _a_children(params, n, m):
                nxt[cm] = nxt.get(cm, 0) + count
        n += 1
        state = nxt
        history.append(dict(state))
        if all(in_band_m2a(params, n, m) for m in state):
            return UniformResult(n, tuple(history))


def isolate_step(level: MeasureLevel) -> MeasureLevel:
    """Move the mass of every charged cube into its smallest-vertex child."""
    out = {}
    for cube, mass in level.masses.items():
        out[cube.child((0,) * cube.dim)] = mass
    return MeasureLevel(level.generation + 1, out)


@dataclass
class StepResult:
    """A single B or C step below one root cube, kept as a small DAG."""

    geometry: StepGeometry
    cube: CubeIndex
    root: Node
    levels: list[list[Node]]
    params: ConstructionParams

    def _tree(self) -> MeasureTree:
        return MeasureTree(self.params, self.root, self.levels, [])

    def summary(self, n: int) -> LevelSummary:
        tree = self._tree()
        mult = tree.multiplicities()
        nodes = self.levels[n - self.geometry.m]
        return LevelSummary(n, tuple((node, mult.get(node.id, 0)) for node in nodes))

    def tagged_mass(self, tags) -> Fraction:
        tags = tuple(tags)
        mult = self._tree().multiplicities()
        return sum((node.mass * mult[node.id] for lvl in self.levels for node in lvl if node.tag in tags), Fraction(0))

    def cubes_at(self, n: int, limit: int = 1 << 16) -> dict[CubeIndex, Fraction]:
        total = self.summary(n).charged_count
        if total > limit:
            raise BudgetError(f"{total} cubes at generation {n} exceed the limit {limit}")
        out = {}
        stack = [(self.root, self.cube)]
        while stack:
            node, cube = stack.pop()
            if node.generation == n:
                out[cube] = node.mass
                continue
            for off, child in node.children:
                stack.append((child, cube.child(off)))
        return out


def _single_step(params: ConstructionParams, cube: CubeIndex, mass, scheme: str) -> StepResult:
    mass = _frac(mass)
    geo = step_geometry(params, cube.generation)
    if geo.scheme != scheme:
        raise ParameterError(f"scheme {scheme} needs {'Theorem 2' if scheme == 'B' else 'Theorem 3'} mode")
    engine = _Engine(params, mass, cube.generation, Role.ROOT)
    engine.run_step(geo, 0)
    return StepResult(geo, cube, engine.root, engine.levels, params)


def scheme_B(params: ConstructionParams, cube: CubeIndex, mass) -> StepResult:
    return _single_step(params, cube, mass, "B")


def scheme_C(params: ConstructionParams, cube: CubeIndex, mass) -> StepResult:
    return _single_step(params, cube, mass, "C")


# ---------------------------------------------------------------- full construction


def build_measure(params: ConstructionParams) -> MeasureTree:
    """Alternate scheme A phases, isolation and B/C steps until the depth budget.

    The tree is cut at the last step boundary not exceeding the budget.
    """
    engine = _Engine(params)
    schedule: list[StepRecord] = []
    budget = params.depth_budget
    index = 1
    while True:
        start = engine.generation
        # odd step: scheme A until every class is uniform, then isolate
        phis = {}
        try:
            for node in engine.frontier:
                phis[node.id] = run_A_until_uniform(params, start, node.mass, budget).phi
        except BudgetError:
            break
        m_prime = max(phis.values())
        while m_prime + 1 <= budget and not admissible(params, m_prime + 1):
            m_prime += 1
        if m_prime + 1 > budget:
            break
        while engine.generation < m_prime:
            engine.advance(engine.rule_a)
        engine.advance(engine.rule_isolate(index))
        schedule.append(StepRecord(index, "A", start, m_prime + 1, m_prime=m_prime, phi=phis))
        index += 1
        # even step: scheme B or C
        geo = step_geometry(params, engine.generation)
        if geo.Psi > budget:
            break
        start = engine.generation
        engine.run_step(geo, index)
        schedule.append(StepRecord(index, geo.scheme, start, geo.Psi, geometry=geo))
        index += 1
    end = schedule[-1].end if schedule else 0
    levels = engine.levels[: end + 1]
    for node in levels[-1]:
        node.children = ()
    return MeasureTree(params, engine.root, levels, schedule)


# ---------------------------------------------------------------- invariants


@dataclass
class Violation:
    check: str
    generation: int
    node: int | None
    detail: str

    def to_dict(self) -> dict:
        return {"check": self.check, "generation": self.generation, "node": self.node, "detail": self.detail}


def _descendant_mass(tree: MeasureTree, predicate, generation: int) -> dict[int, Fraction]:
    """For every node above ``generation``, the mass of its generation-level descendants satisfying predicate."""
    memo: dict[int, Fraction] = {}
    for lvl in reversed(tree.levels[: generation + 1]):
        for node in lvl:
            if node.generation == generation:
                memo[node.id] = node.mass if predicate(node) else Fraction(0)
            else:
                memo[node.id] = sum((memo[c.id] for _, c in node.children), Fraction(0))
    return memo


def invariant_report(tree: MeasureTree) -> list[Violation]:
    """Exact checks of the construction invariants. An empty list means all hold."""
    p = tree.params
    out: list[Violation] = []
    mult = tree.multiplicities()
    for n, lvl in enumerate(tree.levels):
        total = sum((node.mass * mult[node.id] for node in lvl), Fraction(0))
        if total != 1:
            out.append(Violation("total_mass", n, None, f"total mass {total}"))
        for node in lvl:
            if node.mass <= 0:
                out.append(Violation("positive_mass", n, node.id, str(node.mass)))
            if node.children and node.mass != sum((c.mass for _, c in node.children), Fraction(0)):
                out.append(Violation("refinement", n, node.id, "children masses do not add up"))
            offs = [o for o, _ in node.children]
            if len(set(offs)) != len(offs):
                out.append(Violation("refinement", n, node.id, "repeated child offset"))
    for rec in tree.schedule:
        if rec.kind == "A":
            _check_a_phase(tree, rec, out)
        else:
            _check_b_step(tree, rec, out)
    return out


def _check_a_phase(tree: MeasureTree, rec: StepRecord, out: list[Violation]):
    p = tree.params
    roots = {node.id: node for node in tree.levels[rec.start]}
    for nid, phi in rec.phi.items():
        node = roots[nid]
        layer = {node.id: node}
        for _ in range(node.generation, phi):
            layer = {c.id: c for cur in layer.values() for _, c in cur.children}
        masses = {cur.mass for cur in layer.values()}
        if len(masses) != 1:
            out.append(Violation("uniformity", phi, nid, f"{len(masses)} distinct masses at phi"))
        for mass in masses:
            if not in_band_m2a(p, phi, mass):
                out.append(Violation("m2a_band", phi, nid, f"mass {mass}"))
    for node in tree.levels[rec.end - 1]:
        if len(node.children) != 1 or node.children[0][0] != (0,) * p.d:
            out.append(Violation("isolation", rec.end, node.id, "mass not moved to the smallest-vertex child"))
    for node in tree.levels[rec.end]:
        if node.tag is not Tag.ISOLATED:
            out.append(Violation("isolation", rec.end, node.id, "untagged cube at an isolation boundary"))


def _check_b_step(tree: MeasureTree, rec: StepRecord, out: list[Violation]):
    p = tree.params
    geo = rec.geometry
    border = _descendant_mass(tree, lambda n: n.tag is Tag.BORDER and n.step == rec.index, geo.psi)
    central = _descendant_mass(tree, lambda n: n.tag in CENTRAL_TAGS and n.step == rec.index, geo.Psi)
    for root in tree.levels[geo.m]:
        if not in_band_m2a_bis(p, geo.m, root.mass):
            out.append(Violation("m2a_bis", geo.m, root.id, f"mass {root.mass}"))
        if border[root.id] != p.eta_star * root.mass:
            out.append(Violation("face_split", geo.psi, root.id, f"face mass {border[root.id]}"))
        if central[root.id] != (1 - p.eta_star) * root.mass:
            out.append(Violation("central_split", geo.Psi, root.id, f"central mass {central[root.id]}"))
    if geo.cascade:
        for n in range(geo.m + 1, geo.psi + 1):
            for node in tree.levels[n]:
                if node.role is Role.FACE or node.tag is Tag.BORDER:
                    lo = threshold_compare(node.mass / p.eta_star, n * p.d_upper) == Ordering.GREATER
                    hi = threshold_compare(node.mass / (p.c_d * 2 ** p.d), n * p.d_upper) == Ordering.LESS
                    if not (lo and hi):
                        out.append(Violation("cascade_band", n, node.id, f"mass {node.mass}"))
