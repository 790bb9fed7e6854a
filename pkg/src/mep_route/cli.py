"""``mep-route`` command-line driver.

Exit status: 0 success, 1 usage or input error, 2 numerical divergence,
3 oracle size limit.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import asdict, dataclass, field
from typing import List, Optional

from .engine import anneal, default_schedule
from .errors import NumericalDivergence, OracleSizeLimit, RouteError
from .formats import (
    generate_rings, generate_uniform, paper59, parse_tsplib, render_svg, write_tsplib,
)
from .instance import Depot, ProblemInstance, Variant, load_instance
from .oracle import cetsp_order_oracle, exact_solve, variant_objective
from .variants import rules_for

log = logging.getLogger("mep_route")

EXIT_OK, EXIT_USAGE, EXIT_DIVERGENCE, EXIT_ORACLE_LIMIT = 0, 1, 2, 3
VARIANTS = [v.cli_name for v in Variant]
SCHEDULE_FLAGS = ("beta_init", "beta_growth", "beta_max", "theta_init", "theta_decay",
                  "theta_min", "max_sweeps")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: error: {message}")


@dataclass
class RunConfig:
    """Fully resolved settings of one invocation, embedded in every output."""

    command: str
    input: Optional[str] = None
    variant: Optional[str] = None
    salesmen: Optional[int] = None
    eta: Optional[float] = None
    radius: Optional[float] = None
    seed: int = 0
    interior_zero: bool = True
    strict_returning_prob: bool = False
    metric: str = "squared"
    schedule: dict = field(default_factory=dict)
    outputs: dict = field(default_factory=dict)
    generator: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)


def _on_off(text: str) -> bool:
    if text not in ("on", "off"):
        raise argparse.ArgumentTypeError("expected 'on' or 'off'")
    return text == "on"


def _add_instance_flags(p, with_input=True):
    if with_input:
        p.add_argument("--input", required=True, help="instance JSON or TSPLIB (.tsp) file")
    p.add_argument("--variant", choices=VARIANTS)
    p.add_argument("--salesmen", type=int)
    p.add_argument("--eta", type=float, help="tour-balance weight (depot tours, two salesmen)")
    p.add_argument("--radius", type=float, help="uniform disk radius (cetsp)")
    p.add_argument("--depot", type=float, nargs=2, metavar=("X", "Y"),
                   help="depot position when switching to mtsp-depot (default: box centre)")


def _add_solver_flags(p):
    p.add_argument("--beta-init", type=float)
    p.add_argument("--beta-growth", type=float)
    p.add_argument("--beta-max", type=float)
    p.add_argument("--theta-init", type=float)
    p.add_argument("--theta-decay", type=float)
    p.add_argument("--theta-min", type=float)
    p.add_argument("--max-sweeps", type=int)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--interior-zero", type=_on_off, default=True, metavar="{on,off}")
    p.add_argument("--strict-returning-prob", type=_on_off, default=False, metavar="{on,off}")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="mep-route", description="Deterministic-annealing route solver.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("solve", help="anneal an instance")
    _add_instance_flags(p)
    _add_solver_flags(p)
    p.add_argument("--output", "-o", help="solution JSON (default: stdout)")
    p.add_argument("--trace", help="trace CSV path")
    p.add_argument("--svg", help="SVG drawing path")

    p = sub.add_parser("oracle", help="exact brute-force optimum of a small instance")
    _add_instance_flags(p)
    p.add_argument("--metric", choices=("squared", "euclidean"), default="squared")
    p.add_argument("--output", "-o")

    p = sub.add_parser("generate", help="write a synthetic instance")
    p.add_argument("kind", choices=("uniform", "rings", "paper59"))
    _add_instance_flags(p, with_input=False)
    p.add_argument("--n", type=int, default=10)
    p.add_argument("--box", type=float, nargs=4, default=(0.0, 0.0, 1.0, 1.0),
                   metavar=("XMIN", "YMIN", "XMAX", "YMAX"))
    p.add_argument("--per-ring", type=int, default=15)
    p.add_argument("--radii", type=float, nargs=2, default=(1.0, 2.0))
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--format", choices=("json", "tsplib"), default="json")
    p.add_argument("--output", "-o")

    p = sub.add_parser("compare", help="solve and report the gap to the oracle")
    _add_instance_flags(p)
    _add_solver_flags(p)
    p.add_argument("--metric", choices=("squared", "euclidean"), default="squared")
    p.add_argument("--output", "-o")
    return parser


# ---- helpers -----------------------------------------------------------------

def _load(path: str) -> ProblemInstance:
    if path.lower().endswith(".tsp"):
        with open(path, "r", encoding="utf-8") as fh:
            return parse_tsplib(fh)
    return load_instance(path)


def apply_overrides(instance: ProblemInstance, args) -> ProblemInstance:
    """Apply --variant/--salesmen/--eta/--radius/--depot to a loaded instance."""
    variant = Variant.parse(args.variant) if args.variant else instance.variant
    nodes = instance.nodes
    if variant is not Variant.CETSP:
        if args.radius:
            raise UsageError("--radius only applies to the cetsp variant")
        nodes = tuple(type(nd)(nd.id, nd.position, 0.0) for nd in nodes)
    elif args.radius is not None:
        nodes = tuple(type(nd)(nd.id, nd.position, float(args.radius)) for nd in nodes)
    depot = None
    if variant is Variant.DEPOT:
        if args.depot is not None:
            depot = Depot(tuple(args.depot))
        elif instance.depot is not None:
            depot = instance.depot
        else:
            xy = instance.coords
            depot = Depot(tuple(float(c) for c in (xy.min(axis=0) + xy.max(axis=0)) / 2))
    if args.salesmen is not None:
        salesmen = args.salesmen
    elif variant in (Variant.BASIC, Variant.CETSP):
        salesmen = 1
    else:
        salesmen = max(instance.salesmen, 2) if variant is not instance.variant else instance.salesmen
    eta = args.eta if args.eta is not None else (instance.balance_eta if variant is Variant.DEPOT else 0.0)
    return ProblemInstance(nodes=nodes, variant=variant, salesmen=salesmen, depot=depot,
                           balance_eta=eta)


def _config(args, instance: Optional[ProblemInstance]) -> RunConfig:
    cfg = RunConfig(command=args.command, input=getattr(args, "input", None),
                    seed=getattr(args, "seed", 0))
    if instance is not None:
        cfg.variant = instance.variant.cli_name
        cfg.salesmen = instance.salesmen
        cfg.eta = instance.balance_eta
        radii = {nd.radius for nd in instance.nodes}
        cfg.radius = radii.pop() if len(radii) == 1 else None
    for name in ("interior_zero", "strict_returning_prob", "metric"):
        if hasattr(args, name):
            setattr(cfg, name, getattr(args, name))
    cfg.outputs = {k: getattr(args, k) for k in ("output", "trace", "svg") if getattr(args, k, None)}
    return cfg


def _emit(text: str, path: Optional[str]) -> None:
    if path:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _dumps(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def _solve(instance: ProblemInstance, args, cfg: RunConfig):
    overrides = {k: getattr(args, k) for k in SCHEDULE_FLAGS}
    schedule = default_schedule(instance, rng_seed=args.seed, **overrides)
    cfg.schedule = schedule.to_dict()
    rules = rules_for(instance, interior_zero=args.interior_zero,
                      strict_returning_prob=args.strict_returning_prob)
    return anneal(instance, schedule, rules)


def _diagnostics(trace) -> dict:
    return {"steps": len(trace.records), "nonconverged_steps": len(trace.nonconverged),
            "energy_rise_steps": len(trace.energy_flags), "events": list(trace.events)}


def _oracle(instance: ProblemInstance, metric: str):
    if instance.variant is Variant.CETSP:
        return cetsp_order_oracle(instance), "euclidean"
    return exact_solve(instance, metric), metric


# ---- commands ----------------------------------------------------------------

def cmd_solve(args) -> int:
    instance = apply_overrides(_load(args.input), args)
    cfg = _config(args, instance)
    solution, trace = _solve(instance, args, cfg)
    config = cfg.to_dict()
    if args.trace:
        _emit(trace.to_csv(trailer="config " + json.dumps(config, sort_keys=True)), args.trace)
    if args.svg:
        _emit(render_svg(solution, instance, config), args.svg)
    out = solution.to_dict()
    out["config"] = config
    out["diagnostics"] = _diagnostics(trace)
    _emit(_dumps(out), args.output)
    return EXIT_OK


def cmd_oracle(args) -> int:
    instance = apply_overrides(_load(args.input), args)
    cfg = _config(args, instance)
    result, metric = _oracle(instance, args.metric)
    cfg.metric = metric
    out = result.best_solution.to_dict()
    out.update(optimal_value=result.optimal_value, evaluated_count=result.evaluated_count,
               metric=metric, config=cfg.to_dict())
    _emit(_dumps(out), args.output)
    return EXIT_OK


def cmd_generate(args) -> int:
    if args.kind == "paper59":
        variant = Variant.parse(args.variant) if args.variant else Variant.DEPOT
        inst = paper59(eta=args.eta or 0.0, variant=variant, salesmen=args.salesmen or
                       (1 if variant in (Variant.BASIC, Variant.CETSP) else 2))
        gen = {"kind": "paper59"}
    elif args.kind == "rings":
        inst = generate_rings(args.per_ring, tuple(args.radii), args.seed)
        gen = {"kind": "rings", "per_ring": args.per_ring, "radii": list(args.radii)}
    else:
        inst = generate_uniform(args.n, tuple(args.box), args.radius or 0.0, args.seed)
        gen = {"kind": "uniform", "n": args.n, "box": list(args.box)}
    if args.kind != "paper59":
        inst = apply_overrides(inst, args)
    cfg = _config(args, inst)
    cfg.generator = gen
    config = cfg.to_dict()
    if args.format == "tsplib":
        text = write_tsplib(inst, name=args.kind, comment=json.dumps(config, sort_keys=True))
    else:
        data = inst.to_dict()
        data["config"] = config
        text = _dumps(data)
    _emit(text, args.output)
    return EXIT_OK


def cmd_compare(args) -> int:
    instance = apply_overrides(_load(args.input), args)
    cfg = _config(args, instance)
    result, metric = _oracle(instance, args.metric)
    cfg.metric = metric
    solution, trace = _solve(instance, args, cfg)
    value = variant_objective(solution, instance, metric)
    best = result.optimal_value
    gap = (value - best) / best if best > 0 else (0.0 if value == best else float("inf"))
    out = {"metric": metric, "solver_value": value, "oracle_value": best, "gap": gap,
           "solution": solution.to_dict(), "oracle_solution": result.best_solution.to_dict(),
           "diagnostics": _diagnostics(trace), "config": cfg.to_dict()}
    _emit(_dumps(out), args.output)
    return EXIT_OK


COMMANDS = {"solve": cmd_solve, "oracle": cmd_oracle, "generate": cmd_generate,
            "compare": cmd_compare}


def _setup_logging() -> None:
    level = os.environ.get("MEP_ROUTE_LOG", "error").strip().lower()
    logging.basicConfig(level={"debug": logging.DEBUG, "info": logging.INFO}.get(level, logging.ERROR),
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)


def run(argv: Optional[List[str]] = None) -> int:
    """Run one command; returns the process exit status."""
    _setup_logging()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return COMMANDS[args.command](args)
    except UsageError as exc:
        sys.stderr.write(parser.format_usage() + str(exc) + "\n")
        return EXIT_USAGE
    except NumericalDivergence as exc:
        log.error("%s", exc)
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_DIVERGENCE
    except OracleSizeLimit as exc:
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_ORACLE_LIMIT
    except (RouteError, ValueError, OSError) as exc:
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_USAGE


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
