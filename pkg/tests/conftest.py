import pytest

from thin_annuli.builder import ConstructionParams, build_measure


def theorem2_params(budget=120):
    return ConstructionParams.theorem2(2, "6/5", "3/2", "3/4", budget, 2 ** 21)


def theorem3_params(budget=60):
    return ConstructionParams.theorem3(2, "4/5", "3/2", "2", "3/4", budget)


def cascade_params(budget=40):
    return ConstructionParams.theorem3(2, "1/2", "3/4", "2", "3/4", budget)


@pytest.fixture(scope="session")
def t2_tree():
    return build_measure(theorem2_params())


@pytest.fixture(scope="session")
def t2_deep():
    return build_measure(theorem2_params(400))


@pytest.fixture(scope="session")
def t3_tree():
    return build_measure(theorem3_params())


@pytest.fixture(scope="session")
def cascade_tree():
    return build_measure(cascade_params())


def uniform_tree(depth, d=2):
    """Lebesgue measure on [0,1)^d refined uniformly to the given depth, as a DAG with one node per level."""
    from fractions import Fraction

    from thin_annuli.builder import MeasureTree, Node, Role
    from thin_annuli.dyadic import offsets

    p = theorem2_params() if d == 2 else ConstructionParams.theorem2(1, "1/4", "1/2", "3/4", 100)
    nodes = [Node(g, g, Fraction(1, 2 ** (d * g)), Role.A) for g in range(depth + 1)]
    for a, b in zip(nodes, nodes[1:]):
        a.children = tuple((off, b) for off in offsets(d))
    return MeasureTree(p, nodes[0], [[n] for n in nodes], [])


def chain_tree(depth, coords=(0, 0)):
    """All mass in the single generation-depth cube with the given coordinates."""
    from fractions import Fraction

    from thin_annuli.builder import MeasureTree, Node, Role

    nodes = [Node(g, g, Fraction(1), Role.A) for g in range(depth + 1)]
    for g, (a, b) in enumerate(zip(nodes, nodes[1:])):
        shift = depth - g - 1
        a.children = (((coords[0] >> shift) & 1, (coords[1] >> shift) & 1), b),
    return MeasureTree(theorem2_params(), nodes[0], [[n] for n in nodes], [])


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split("criterion")[1].split(":")[0])):
            terminalreporter.write_line(line)
