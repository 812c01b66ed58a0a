"""Command line driver: build, verify, query, annuli, energy.

Every report embeds the tool version and a digest of the effective
configuration. Wall-clock data goes to meta.json only, so re-running a config
reproduces the other files byte for byte.
"""
from __future__ import annotations

import argparse
import csv
import datetime
import hashlib
import io
import json
import sys
from fractions import Fraction
from pathlib import Path

import jsonschema

from . import __version__
from .annuli import (
    HypothesisError,
    PrecisionContext,
    PrecisionError,
    annuli_intersection_components,
    config_row,
    diameter_bound_check,
    heron_lower_bound,
    optimality_family,
    random_admissible_configs,
)
from .builder import (
    BudgetError,
    CENTRAL_TAGS,
    ConstructionError,
    ConstructionParams,
    InfeasibleError,
    MeasureTree,
    ParameterError,
    PreconditionError,
    build_measure,
    invariant_report,
)
from .dimension import mass_envelope_check, sample_support_points, tagged_weight, trace
from .dyadic import Norm
from .energy import (
    ResolutionError,
    RegularityError,
    decay_fit,
    make_t_regular_cantor,
    normalized_products,
    p_fraction,
    s_energy,
)
from .exact import approx_log2, fraction_str, to_fraction
from .query import annulus_mass, ball_mass, check_P, scan_verdicts

EXIT_OK = 0
EXIT_INTERNAL = 1
EXIT_CONFIG = 2
EXIT_BUDGET = 3
EXIT_PRECISION = 4
EXIT_VERIFY = 5
EXIT_CONSTRUCTION = 6

RATIONAL = {"type": ["string", "integer"]}

CONFIG_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "mode": {"enum": ["build", "verify", "query", "annuli", "energy"]},
        "tree": {"type": "string"},
        "construction": {
            "type": "object",
            "additionalProperties": False,
            "required": ["d", "d_lower", "d_upper", "eta_star", "depth_budget"],
            "properties": {
                "mode": {"enum": ["theorem2", "theorem3"]},
                "d": {"type": "integer", "minimum": 1},
                "d_lower": RATIONAL,
                "d_upper": RATIONAL,
                "delta": RATIONAL,
                "eta_star": RATIONAL,
                "c_d": RATIONAL,
                "depth_budget": {"type": "integer", "minimum": 0},
            },
        },
        "verify": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "trace_points": {"type": "integer", "minimum": 0},
            },
        },
        "query": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "points": {"type": "array", "items": {"type": "array", "items": RATIONAL}},
                "sample": {"type": "integer", "minimum": 0},
                "central_step": {"type": "integer", "minimum": 1},
                "delta": RATIONAL,
                "eta": RATIONAL,
                "norm": {"enum": ["sup", "l1", "euclid"]},
                "radii": {"type": "array", "items": RATIONAL},
                "r_lo": RATIONAL,
                "r_hi": RATIONAL,
                "grid_count": {"type": "integer", "minimum": 1},
                "aligned": {"type": "boolean"},
            },
        },
        "annuli": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "n_values": {"type": "array", "items": {"type": "integer", "minimum": 2}},
                "count": {"type": "integer", "minimum": 0},
                "delta_g": {"type": "integer", "minimum": 1},
                "coefficient": {"type": "integer", "minimum": 1},
                "optimality": {"type": "boolean"},
            },
        },
        "energy": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "ratio": RATIONAL,
                "depth": {"type": "integer", "minimum": 3},
                "eta": RATIONAL,
                "radii": {"type": "array", "items": RATIONAL},
                "s": {"type": "number"},
            },
        },
    },
}


class ConfigError(ValueError):
    pass


def parse_keyvalue(text: str) -> dict:
    """Flat ``section.key = value`` lines; values are JSON when they parse, strings otherwise."""
    out: dict = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value")
        key, value = (part.strip() for part in line.split("=", 1))
        try:
            val = json.loads(value)
        except json.JSONDecodeError:
            val = value
        node = out
        parts = key.split(".")
        for part in parts[:-1]:
            node = node.setdefault(part, {})
        node[parts[-1]] = val
    return out


def load_config(path: str | None) -> dict:
    if path is None:
        return {}
    text = Path(path).read_text()
    try:
        data = json.loads(text)
    except json.JSONDecodeError:
        data = parse_keyvalue(text)
    try:
        jsonschema.validate(data, CONFIG_SCHEMA)
    except jsonschema.ValidationError as exc:
        raise ConfigError(f"config schema violation at {list(exc.absolute_path)}: {exc.message}") from exc
    return data


def canonical(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), default=str).encode()


class Reporter:
    def __init__(self, out: Path, config: dict, command: str, flags: dict | None = None):
        self.out = out
        self.out.mkdir(parents=True, exist_ok=True)
        self.config = config
        self.command = command
        # the digest covers every input that changes results: config plus the effective flags
        effective = {"command": command, "config": config, "flags": flags or {}}
        self.digest = hashlib.sha256(canonical(effective)).hexdigest()

    def header(self) -> dict:
        return {"tool": "thin-annuli", "version": __version__, "command": self.command, "config_digest": self.digest}

    def write_json(self, name: str, payload: dict):
        doc = dict(self.header())
        doc.update(payload)
        (self.out / name).write_text(json.dumps(doc, sort_keys=True, indent=2, default=str) + "\n")

    def write_csv(self, name: str, rows: list[dict], fields: list[str]):
        buf = io.StringIO()
        buf.write(f"# thin-annuli {__version__} config {self.digest}\n")
        writer = csv.DictWriter(buf, fieldnames=fields, lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow(row)
        (self.out / name).write_text(buf.getvalue())

    def write_meta(self, argv: list[str]):
        meta = {
            "argv": argv,
            "finished_utc": datetime.datetime.now(datetime.timezone.utc).isoformat(),
            "config_digest": self.digest,
        }
        (self.out / "meta.json").write_text(json.dumps(meta, sort_keys=True, indent=2) + "\n")


# ---------------------------------------------------------------- commands


def _construction(config: dict, args) -> ConstructionParams:
    if "construction" not in config:
        raise ConfigError("the config needs a construction section")
    data = dict(config["construction"])
    if args.depth is not None and args.command == "build":
        data["depth_budget"] = args.depth
    return ConstructionParams.from_dict(data)


def _tree(config: dict, args) -> MeasureTree:
    path = getattr(args, "tree", None) or config.get("tree")
    if path:
        return MeasureTree.loads(Path(path).read_bytes())
    return build_measure(_construction(config, args))


def cmd_build(config, args, rep: Reporter) -> int:
    tree = build_measure(_construction(config, args))
    (rep.out / "tree.json").write_bytes(tree.dumps())
    rows = []
    for s in tree.schedule:
        geo = s.geometry
        rows.append({
            "step": s.index,
            "kind": s.kind,
            "start": s.start,
            "end": s.end,
            "m_prime": "" if s.m_prime is None else s.m_prime,
            "psi": geo.psi if geo else "",
            "psi_prime": geo.psi_prime if geo else "",
            "Psi": geo.Psi if geo else "",
            "cascade": geo.cascade if geo else "",
        })
    rep.write_csv("schedule.csv", rows, ["step", "kind", "start", "end", "m_prime", "psi", "psi_prime", "Psi", "cascade"])
    levels = []
    for n in tree.boundaries:
        summ = tree.summary(n)
        levels.append({"generation": n, "classes": len(summ.classes), "charged_cubes": str(summ.charged_count)})
    rep.write_json("report.json", {
        "params": tree.params.to_dict(),
        "max_generation": tree.max_generation,
        "node_count": tree.node_count(),
        "tree_sha256": tree.digest(),
        "boundaries": levels,
    })
    return EXIT_OK


def cmd_verify(config, args, rep: Reporter) -> int:
    tree = _tree(config, args)
    violations = [v.to_dict() for v in invariant_report(tree)]
    env = mass_envelope_check(tree)
    for v in env.violations:
        violations.append({"check": f"envelope_{v.side}", "generation": v.generation, "node": v.node,
                           "detail": f"mass {fraction_str(v.mass)} on {v.cubes} cubes"})
    rep.write_csv("violations.csv", violations, ["check", "generation", "node", "detail"])
    count = config.get("verify", {}).get("trace_points", 8)
    seed = 0 if args.seed is None else args.seed
    rows = []
    if count and tree.max_generation > 0:
        for i, x in enumerate(sample_support_points(tree, count, seed)):
            for e in trace(tree, x).entries:
                rows.append({"point": i, "generation": e.generation, "ratio_lo": f"{float(e.ratio_lo):.9f}",
                             "ratio_hi": f"{float(e.ratio_hi):.9f}"})
    rep.write_csv("traces.csv", rows, ["point", "generation", "ratio_lo", "ratio_hi"])
    by_check: dict[str, int] = {}
    for v in violations:
        by_check[v["check"]] = by_check.get(v["check"], 0) + 1
    rep.write_json("report.json", {
        "tree_sha256": tree.digest(),
        "classes_checked": env.checked_classes,
        "violations": len(violations),
        "violations_by_check": by_check,
    })
    return EXIT_VERIFY if violations else EXIT_OK


def cmd_query(config, args, rep: Reporter) -> int:
    tree = _tree(config, args)
    q = config.get("query", {})
    p = tree.params
    delta = to_fraction(q.get("delta", fraction_str(p.delta)))
    eta = to_fraction(q.get("eta", fraction_str(p.eta)))
    norm = Norm(q.get("norm", "sup"))
    depth = args.depth
    bits = args.bits or 64
    points = [tuple(to_fraction(v) for v in pt) for pt in q.get("points", [])]
    seed = 0 if args.seed is None else args.seed
    if q.get("sample"):
        step = q.get("central_step")
        weight = None
        sample_depth = None
        if step:
            if step > len(tree.b_steps):
                raise BudgetError(f"central step {step} requested but the depth budget {p.depth_budget} "
                                  f"completes only {len(tree.b_steps)} B/C steps")
            rec = tree.b_steps[step - 1]
            weight = tagged_weight(tree, CENTRAL_TAGS, rec.index, rec.geometry.Psi)
            sample_depth = rec.geometry.Psi
        points += sample_support_points(tree, q["sample"], seed, sample_depth, weight)
    rows = []
    for i, x in enumerate(points):
        if "radii" in q:
            radii = [(to_fraction(r), None) for r in q["radii"]]
        else:
            r_lo, r_hi = to_fraction(q["r_lo"]), to_fraction(q["r_hi"])
            radii = scan_verdicts(tree, x, delta, eta, r_lo, r_hi, q.get("grid_count", 16), norm, depth,
                                  q.get("aligned", True), bits)
        for r, verdict in radii:
            ball = ball_mass(tree, x, r, norm, depth)
            ann = annulus_mass(tree, x, r, delta, norm, depth, bits)
            if verdict is None:
                verdict = check_P(tree, x, r, delta, eta, norm, depth, bits)
            rows.append({
                "point": i,
                "x": " ".join(fraction_str(c) for c in x),
                "r": fraction_str(r),
                "delta": fraction_str(delta),
                "eta": fraction_str(eta),
                "norm": norm.value,
                "ball_lower": fraction_str(ball.lower),
                "ball_upper": fraction_str(ball.upper),
                "annulus_lower": fraction_str(ann.lower),
                "annulus_upper": fraction_str(ann.upper),
                "verdict": verdict.value,
                "depth": ball.resolved_depth,
            })
    fields = ["point", "x", "r", "delta", "eta", "norm", "ball_lower", "ball_upper", "annulus_lower",
              "annulus_upper", "verdict", "depth"]
    rep.write_csv("query.csv", rows, fields)
    tally: dict[str, int] = {}
    for row in rows:
        tally[row["verdict"]] = tally.get(row["verdict"], 0) + 1
    holds_points = len({row["point"] for row in rows if row["verdict"] == "holds"})
    rep.write_json("report.json", {"tree_sha256": tree.digest(), "points": len(points), "rows": len(rows),
                                   "verdicts": tally, "points_with_holds": holds_points})
    return EXIT_OK


def cmd_annuli(config, args, rep: Reporter) -> int:
    a = config.get("annuli", {})
    bits = args.bits or 512
    ctx = PrecisionContext(bits)
    seed = 0 if args.seed is None else args.seed
    delta_g = a.get("delta_g", 30)
    coef = a.get("coefficient", 24)
    n_values = a.get("n_values", [2, 3, 4, 5, 6, 7, 8])
    count = a.get("count", 200)
    rows = []
    per_n = {}
    for n in n_values:
        fails = 0
        for a1, a2 in random_admissible_configs(n, count, seed + n, delta_g):
            check = diameter_bound_check(n, a1, a2, ctx, coef)
            fails += not check.passes
            row = config_row(a1, a2, check, bits)
            row["family"] = "random"
            rows.append(row)
        per_n[str(n)] = {"configs": count, "failures": fails}
    optimality = []
    if a.get("optimality", True):
        for n in n_values:
            a1, a2 = optimality_family(n, delta_g)
            check = diameter_bound_check(n, a1, a2, ctx, coef)
            row = config_row(a1, a2, check, bits)
            row["family"] = "optimality"
            rows.append(row)
            _, ratio = heron_lower_bound(n, ctx)
            optimality.append({"n": n, "log2_diameter": row["log2_diameter_upper"],
                               "heron_ratio": f"{float(ratio.mid):.12f}"})
    fields = ["family", "n", "r1", "r2", "z1", "z2", "delta_g", "bits", "components", "log2_diameter_upper",
              "error_radius_log2", "bound", "passes"]
    rep.write_csv("annuli.csv", rows, fields)
    passing = [n for n in n_values if per_n[str(n)]["failures"] == 0]
    n_star = None
    for n in sorted(n_values):
        if all(per_n[str(k)]["failures"] == 0 for k in n_values if k >= n):
            n_star = n
            break
    rep.write_json("report.json", {"seed": seed, "bits": bits, "per_n": per_n, "n_star": n_star,
                                   "passing_n": passing, "optimality": optimality})
    return EXIT_OK


def cmd_energy(config, args, rep: Reporter) -> int:
    e = config.get("energy", {})
    depth = args.depth or e.get("depth", 7)
    m = make_t_regular_cantor(to_fraction(e.get("ratio", "1/4")), depth)
    eta = to_fraction(e.get("eta", "1/10"))
    radii = [to_fraction(r) for r in e.get("radii", [f"{k}/32" for k in range(4, 32)])]
    rows = [(r, p_fraction(m, r, eta)) for r in radii]
    fit = decay_fit(rows)
    prods = normalized_products(rows, m.t_nominal, eta)
    out_rows = [{"r": fraction_str(r), "fraction": fraction_str(f), "normalized_product": f"{pr:.12g}"}
                for (r, f), pr in zip(rows, prods)]
    rep.write_csv("fractions.csv", out_rows, ["r", "fraction", "normalized_product"])
    s = e.get("s", (m.t_nominal + 0.5) / 2)
    energy = s_energy(m, s)
    rep.write_json("report.json", {
        "ratio": fraction_str(m.ratio),
        "depth": depth,
        "atoms": m.size,
        "t_nominal": m.t_nominal,
        "c_t": m.c_t,
        "C_t": m.C_t,
        "s": s,
        "energy": energy.value,
        "energy_correction": energy.correction,
        "fit": {"verdict": fit.verdict, "slope": fit.slope, "points_used": fit.points_used,
                "zero_radii": [fraction_str(r) for r in fit.zero_radii]},
        "predicted_slope": m.t_nominal - 0.5,
        "normalized_product_sup": max(prods),
    })
    return EXIT_OK


COMMANDS = {"build": cmd_build, "verify": cmd_verify, "query": cmd_query, "annuli": cmd_annuli,
            "energy": cmd_energy}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="thin-annuli", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="JSON or key = value config file")
        p.add_argument("--out", default="out", help="output directory")
        p.add_argument("--bits", type=int, help="working precision in bits")
        p.add_argument("--depth", type=int, help="depth budget (build), query depth (query) or atom depth (energy)")
        p.add_argument("--seed", type=int, help="seed for sampled points and random annuli")
        if name in ("verify", "query"):
            p.add_argument("--tree", help="serialized tree to load instead of building one")
    return parser


def _status_for(exc: BaseException) -> int:
    if isinstance(exc, (ConfigError, ParameterError, jsonschema.ValidationError, FileNotFoundError)):
        return EXIT_CONFIG
    if isinstance(exc, BudgetError):
        return EXIT_BUDGET
    if isinstance(exc, (PrecisionError, ResolutionError)):
        return EXIT_PRECISION
    if isinstance(exc, (PreconditionError, InfeasibleError, ConstructionError, HypothesisError, RegularityError)):
        return EXIT_CONSTRUCTION
    return EXIT_INTERNAL


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    args = build_parser().parse_args(argv)
    out = Path(args.out)
    try:
        config = load_config(args.config)
        if config.get("mode") not in (None, args.command):
            raise ConfigError(f"config mode {config['mode']!r} does not match command {args.command!r}")
        flags = {k: getattr(args, k, None) for k in ("bits", "depth", "seed", "tree")}
        rep = Reporter(out, config, args.command, flags)
        status = COMMANDS[args.command](config, args, rep)
        rep.write_meta(argv)
        return status
    except Exception as exc:  # every failure leaves a machine-readable record
        status = _status_for(exc)
        record = {"status": status, "error": type(exc).__name__, "message": str(exc)}
        print(json.dumps(record, sort_keys=True), file=sys.stderr)
        try:
            out.mkdir(parents=True, exist_ok=True)
            (out / "error.json").write_text(json.dumps(record, sort_keys=True, indent=2) + "\n")
        except OSError:
            pass
        return status


if __name__ == "__main__":
    sys.exit(main())
