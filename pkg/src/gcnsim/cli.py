"""Command line entry point: run, validate, compare and oracle checks."""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys

from .energy import population_std, tea_allocate, tea_oracle
from .engine import Policy, compare, plan_provisioning, run
from .errors import GcnError, SchemaError, ValidationError
from .model import initial_assignment, load_scenario, nominal_demand
from .network import CoreGraph
from .placement import SlotState, seb_migrate, seb_oracle
from .report import emit_metrics, load_summary

EXIT_OK, EXIT_VALIDATION, EXIT_RUNTIME = 0, 2, 3
LOG_LEVELS = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}

log = logging.getLogger("gcnsim")


def _fmt(x):
    if x is None:
        return "-"
    if isinstance(x, float):
        return f"{x:.6g}"
    return str(x)


def _table(rows, header, out=None):
    out = out or sys.stdout
    print("\t".join(header), file=out)
    for r in rows:
        print("\t".join(_fmt(v) for v in r), file=out)


def cmd_run(args) -> int:
    scenario = load_scenario(args.scenario)
    policy = Policy(seb=args.seb, tea=args.tea, core=args.core)
    seed = args.seed if args.seed is not None else scenario.seed
    report = run(scenario, policy, seed)
    paths = emit_metrics(report, args.out, figures=not args.no_figures)
    log.info("wrote %d files to %s", len(paths), args.out)
    totals = report.totals
    _table(sorted(totals.items()), ("metric", "value"))
    return EXIT_OK


def cmd_validate(args) -> int:
    scenario = load_scenario(args.file)
    print(f"ok\tT={scenario.T}\tgcs={len(scenario.gcs_list)}\tues={len(scenario.ue_list)}"
          f"\thash={scenario.scenario_hash[:16]}")
    return EXIT_OK


def cmd_compare(args) -> int:
    rows = compare(load_summary(args.dir_a), load_summary(args.dir_b))
    _table([(r["metric"], r["a"], r["b"], r["delta"], r["pct"]) for r in rows],
           ("metric", "a", "b", "delta", "pct"))
    return EXIT_OK


def _tea_instances(path):
    with open(path) as fh:
        raw = json.load(fh)
    if not isinstance(raw, dict):
        raise SchemaError("oracle input must be a JSON object")
    if "time" not in raw:
        # bare instance: {"generation": [...], "demand": [...], "b0": x}
        try:
            return [("instance", raw["generation"], raw["demand"], raw.get("b0", 0.0))]
        except KeyError as exc:
            raise SchemaError(f"missing key {exc.args[0]!r}", ()) from exc
    scenario = load_scenario(path)
    return [(g.id, g.generation, nominal_demand(scenario, g.id), g.battery_init)
            for g in scenario.gcs_list]


def cmd_oracle(args) -> int:
    if args.kind == "tea":
        rows = []
        for name, gen, dem, b0 in _tea_instances(args.file):
            res = tea_allocate(gen, dem, b0)
            orc = tea_oracle(gen, dem, b0, grid_step=args.step)
            rows.append((name, res.sigma(dem), orc.sigma, orc.points,
                         " ".join(f"{e:.4g}" for e in res.allocation),
                         " ".join(f"{e:.4g}" for e in orc.allocation)))
        _table(rows, ("gcs", "sigma_tea", "sigma_oracle", "points", "E_tea", "E_oracle"))
        return EXIT_OK
    scenario = load_scenario(args.file)
    graph = CoreGraph.from_scenario(scenario, args.core)
    provision = plan_provisioning(scenario)
    hosts0 = initial_assignment(scenario)
    rows = []
    for slot in range(scenario.T):
        active = scenario.active_avatars(slot)
        prov = {g: r.allocation[slot] for g, r in provision.items()}
        state = SlotState(slot, {a: hosts0[a] for a in active})
        greedy = seb_migrate(state, prov, scenario, graph)
        orc = seb_oracle(state, prov, scenario, graph)
        rows.append((slot, greedy.sigma_before, greedy.sigma_after, orc.sigma, len(greedy.moves),
                     orc.evaluated))
    _table(rows, ("slot", "sigma_noop", "sigma_greedy", "sigma_oracle", "moves", "evaluated"))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="gcnsim", description="Green cloudlet network simulator")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="simulate a scenario and write metrics")
    r.add_argument("--scenario", required=True)
    r.add_argument("--seb", choices=("migrate", "pilot", "both", "off"), default="off")
    r.add_argument("--tea", choices=("equal-ratio", "uniform"), default="equal-ratio")
    r.add_argument("--core", choices=("sdn", "epc"), default="sdn")
    r.add_argument("--seed", type=int, default=None)
    r.add_argument("--out", required=True)
    r.add_argument("--no-figures", action="store_true", help="skip the PNG figures")
    r.set_defaults(func=cmd_run)

    v = sub.add_parser("validate", help="check a scenario file")
    v.add_argument("file")
    v.set_defaults(func=cmd_validate)

    c = sub.add_parser("compare", help="per-metric delta between two run directories")
    c.add_argument("dir_a")
    c.add_argument("dir_b")
    c.set_defaults(func=cmd_compare)

    o = sub.add_parser("oracle", help="brute-force check of the allocators on a small input")
    o.add_argument("kind", choices=("tea", "seb"))
    o.add_argument("file")
    o.add_argument("--step", type=float, default=0.05, help="TEA oracle grid step")
    o.add_argument("--core", choices=("sdn", "epc"), default="sdn")
    o.set_defaults(func=cmd_oracle)
    return p


def main(argv=None) -> int:
    level = LOG_LEVELS.get(os.environ.get("GCNSIM_LOG", "error").lower(), logging.ERROR)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    seed = getattr(args, "seed", None)
    if seed is not None and not 0 <= seed < 2 ** 64:
        print("error: --seed must be an unsigned 64-bit integer", file=sys.stderr)
        return EXIT_VALIDATION
    try:
        return args.func(args)
    except ValidationError as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (GcnError, OSError, ValueError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
