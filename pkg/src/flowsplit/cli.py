"""Command-line front end.

    flowsplit [--scenario S] [--seed N] [--out-dir D] [--jobs J] [--format json|csv] COMMAND ...

Commands: validate, optimize, evaluate, sweep, simulate, compare.  ``S`` is a
bundled scenario name (small, medium, large) or a path to a scenario file.
Exit codes: 0 success, 2 validation failure, 3 infeasible or unstable,
4 numerical failure.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .baselines import bipartite_matching_policy
from .errors import (DimensionError, FlowsplitError, HorizonError, InconsistentAlphasError, InfeasibleError,
                     InstabilityError, NumericalError, PolicyError, TopologyError)
from .optimize import BHConfig, bh_optimize, brute_force_optimize, evaluation_bound, gradient_baseline
from .scenarios import ScenarioBundle, load_scenario
from .sim import DISTRIBUTED_POLICY, SimConfig, compare_policies, simulate, summary_table
from .topology import (Policy, ServiceModel, check_stability, validate_policy, with_service_model)
from .travel_time import evaluate_objective, path_travel_times

log = logging.getLogger("flowsplit")

EXIT_OK, EXIT_VALIDATION, EXIT_INFEASIBLE, EXIT_NUMERICAL = 0, 2, 3, 4
ALGORITHMS = ("bh", "bruteforce", "gradient", "bipartite")


def exit_code_for(exc: BaseException) -> int:
    if isinstance(exc, (InstabilityError, InfeasibleError)):
        return EXIT_INFEASIBLE
    if isinstance(exc, (NumericalError, HorizonError, InconsistentAlphasError, FloatingPointError)):
        return EXIT_NUMERICAL
    if isinstance(exc, (TopologyError, PolicyError, DimensionError, ValueError, OSError)):
        return EXIT_VALIDATION
    return EXIT_NUMERICAL


# ---------------------------------------------------------------------------
# output helpers

class Output:
    def __init__(self, args, bundle: ScenarioBundle):
        self.out_dir = Path(args.out_dir)
        self.fmt = args.format
        self.meta = {"seed": args.seed, "scenario": bundle.name,
                     "scenario_hash": bundle.hash, "version": __version__}

    def _path(self, name: str) -> Path:
        self.out_dir.mkdir(parents=True, exist_ok=True)
        return self.out_dir / name

    def json(self, name: str, payload: dict) -> Path:
        p = self._path(name)
        p.write_text(json.dumps({**self.meta, **payload}, indent=2, default=_jsonable) + "\n")
        return p

    def csv(self, name: str, header: list[str], rows) -> Path:
        p = self._path(name)
        p.write_text(self.csv_text(header, rows))
        return p

    def comments(self) -> str:
        return "".join(f"# {k}={v}\n" for k, v in self.meta.items())

    def csv_text(self, header, rows) -> str:
        buf = io.StringIO()
        buf.write(self.comments())
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(x) for x in r])
        return buf.getvalue()

    def show(self, summary: dict, header=None, rows=None) -> None:
        """Print ``summary`` (json) or the table (csv) on stdout."""
        if self.fmt == "csv" and header is not None:
            sys.stdout.write(self.csv_text(header, rows))
        else:
            sys.stdout.write(json.dumps({**self.meta, **summary}, indent=2, default=_jsonable) + "\n")


def _jsonable(x):
    if isinstance(x, (np.floating, np.integer)):
        return x.item()
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, Policy):
        return x.to_dict()
    raise TypeError(f"not JSON serializable: {type(x).__name__}")


def _fmt(x):
    if isinstance(x, float):
        return repr(x) if math.isfinite(x) else ("inf" if x > 0 else "nan" if math.isnan(x) else "-inf")
    return x


def _read_policy(path: str, bundle: ScenarioBundle) -> Policy:
    data = json.loads(Path(path).read_text())
    pol = Policy.from_dict(data.get("policy", data))
    validate_policy(bundle.topology, pol)
    return pol


# ---------------------------------------------------------------------------
# optimizers

def run_algorithm(name: str, bundle: ScenarioBundle, args) -> tuple[Policy, dict]:
    topo = bundle.topology
    t0 = time.perf_counter()
    if name == "bh":
        cfg = BHConfig(phi0=args.phi0, phi_min=args.phi_min, max_evals=args.max_evals)
        tr = bh_optimize(topo, cfg)
        info = {"trace": tr.to_dict(), "evaluation_bound": evaluation_bound(topo, cfg)}
        pol, obj, evals = tr.final_policy, tr.final_objective, tr.evaluations
        info["trace_csv"] = tr.to_csv()
    elif name == "gradient":
        tr = gradient_baseline(topo, max_evals=args.max_evals)
        info = {"trace": tr.to_dict(), "trace_csv": tr.to_csv()}
        pol, obj, evals = tr.final_policy, tr.final_objective, tr.evaluations
    elif name == "bruteforce":
        pol, obj, evals = brute_force_optimize(topo, grid_step=args.grid_step)
        info = {}
    elif name == "bipartite":
        pol = bipartite_matching_policy(topo)
        obj, evals = evaluate_objective(topo, pol).objective, 1
        info = {}
    else:
        raise ValueError(f"unknown algorithm {name!r}")
    info.update(algorithm=name, objective=obj, evaluations=evals,
                wall_time_s=time.perf_counter() - t0)
    return pol, info


# ---------------------------------------------------------------------------
# commands

def cmd_validate(args, bundle: ScenarioBundle, out: Output) -> int:
    topo = bundle.topology
    stab = check_stability(topo, topo.uniform_policy())
    report = {
        "queues": sum(not q.is_sink for q in topo.queues),
        "sink_queues": sum(q.is_sink for q in topo.queues),
        "flows": len(topo.flows),
        "paths": len(topo.paths),
        "junctions": topo.junction_count,
        "paths_per_flow": {f.id: len(topo.paths_of(f.id)) for f in topo.flows},
        "uniform_policy_stable": stab.stable,
        "uniform_policy_unstable_queues": list(stab.violating),
        "description": bundle.description,
    }
    out.json("validate.json", report)
    out.show(report, ["flow", "paths"], [(k, v) for k, v in report["paths_per_flow"].items()])
    return EXIT_OK


def cmd_optimize(args, bundle: ScenarioBundle, out: Output) -> int:
    pol, info = run_algorithm(args.algorithm, bundle, args)
    trace_csv = info.pop("trace_csv", None)
    out.json("policy.json", {"algorithm": args.algorithm, "objective": info["objective"],
                             "policy": pol.to_dict()})
    out.json(f"trace_{args.algorithm}.json", info)
    if trace_csv is not None:
        out._path(f"trace_{args.algorithm}.csv").write_text(out.comments() + trace_csv)
    summary = {k: info[k] for k in ("algorithm", "objective", "evaluations", "wall_time_s")}
    if "evaluation_bound" in info:
        summary["evaluation_bound"] = info["evaluation_bound"]
    out.show(summary, ["path", "p"], sorted(pol.path_probs.items()))
    return EXIT_OK


def _topology_for_model(bundle: ScenarioBundle, model: str):
    if model == "as-is":
        return bundle.topology
    return with_service_model(bundle.topology, ServiceModel(model))


def cmd_evaluate(args, bundle: ScenarioBundle, out: Output) -> int:
    topo = _topology_for_model(bundle, args.model)
    pol = _read_policy(args.policy, bundle) if args.policy else topo.uniform_policy()
    fe = evaluate_objective(topo, pol)
    cdfs = path_travel_times(topo, pol, horizon_cap=False)
    t_max = args.t_max or 2.0 * max(f.omega for f in topo.flows)
    grid = np.linspace(0.0, t_max, args.points)
    ids = [w.id for w in topo.paths]
    cols = [np.asarray(cdfs[w].cdf(grid), float) for w in ids]
    out.csv("path_cdf.csv", ["t"] + ids, [[float(t)] + [float(c[i]) for c in cols] for i, t in enumerate(grid)])
    payload = {**fe.to_dict(), "model": args.model, "policy": pol.to_dict()}
    out.json("evaluation.json", payload)
    out.show(fe.to_dict(), ["flow", "delta"], sorted(fe.per_flow_delta.items()))
    return EXIT_OK


def sweep_rows(bundle: ScenarioBundle, path_id: str, values, base: Policy | None = None):
    """Objective of both queue models as one path's probability varies.

    The chosen path's flow must have exactly two paths; the other one takes
    the complement.  Unstable points give ``inf``.
    """
    topo = bundle.topology
    if path_id not in topo.path_by_id:
        raise PolicyError(f"unknown path {path_id!r}")
    flow = topo.path_by_id[path_id].flow
    sibling = [w.id for w in topo.paths_of(flow) if w.id != path_id]
    if len(sibling) != 1:
        raise DimensionError(f"flow {flow} has {len(sibling) + 1} paths; sweep needs exactly one free dimension")
    base = base or topo.uniform_policy()
    models = {m: with_service_model(topo, m) for m in (ServiceModel.MARKOVIAN, ServiceModel.DETERMINISTIC)}
    rows = []
    for x in values:
        probs = dict(base.path_probs)
        probs[path_id], probs[sibling[0]] = float(x), 1.0 - float(x)
        pol = Policy(probs, base.service_rates)
        row = [float(x)]
        for t in models.values():
            try:
                row.append(evaluate_objective(t, pol).objective)
            except InstabilityError:
                row.append(math.inf)
        rows.append(row)
    return rows


def _default_sweep_path(topo) -> str:
    two = [f.id for f in topo.flows if len(topo.paths_of(f.id)) == 2]
    if len(two) != 1:
        raise DimensionError("choose the swept path with --path")
    return topo.paths_of(two[0])[-1].id


def cmd_sweep(args, bundle: ScenarioBundle, out: Output) -> int:
    path_id = args.path or _default_sweep_path(bundle.topology)
    if args.step <= 0 or args.stop < args.start:
        raise ValueError("need step > 0 and stop >= start")
    n = int(math.floor((args.stop - args.start) / args.step + 1e-9)) + 1
    values = np.round(args.start + args.step * np.arange(n), 12)
    base = _read_policy(args.policy, bundle) if args.policy else None
    rows = sweep_rows(bundle, path_id, values, base)
    header = ["p", "objective_mm1", "objective_md1"]
    out.csv("sweep.csv", header, rows)
    arr = np.array(rows)
    summary = {"path": path_id, "points": len(rows),
               "argmin_mm1": float(arr[np.argmin(arr[:, 1]), 0]),
               "argmin_md1": float(arr[np.argmin(arr[:, 2]), 0])}
    out.json("sweep.json", {**summary, "rows": rows})
    out.show(summary, header, rows)
    return EXIT_OK


def _sim_config(args, policy=None, mode="policy") -> SimConfig:
    return SimConfig(horizon=args.horizon, warmup=args.warmup, seed=args.seed,
                     replications=args.replications, mode=mode, policy=policy,
                     window=args.window, jobs=args.jobs)


def _ecdf_grid(reports, points=201) -> np.ndarray:
    hi = max((float(np.quantile(v, 0.999)) for r in reports for v in r.per_flow_trip_times.values() if len(v)),
             default=1.0)
    return np.linspace(0.0, hi, points)


def cmd_simulate(args, bundle: ScenarioBundle, out: Output) -> int:
    topo = bundle.topology
    if args.mode == "distributed":
        cfg = _sim_config(args, mode="distributed")
    else:
        if args.policy:
            pol = _read_policy(args.policy, bundle)
        elif args.algorithm:
            pol, _ = run_algorithm(args.algorithm, bundle, args)
        else:
            pol = topo.uniform_policy()
        cfg = _sim_config(args, pol)
    rep = simulate(topo, cfg)
    grid = _ecdf_grid([rep])
    (out._path("trip_time_ecdf.csv")).write_text(out.comments() + rep.ecdf_csv(grid))
    payload = rep.to_dict(include_samples=args.samples)
    payload.update(horizon=args.horizon, warmup=args.warmup)
    out.json("sim_report.json", payload)
    flows = sorted(rep.per_flow_exceedance)
    out.show(rep.to_dict(), ["flow", "exceedance", "vehicles"],
             [(k, rep.per_flow_exceedance[k], len(rep.per_flow_trip_times[k])) for k in flows])
    return EXIT_OK if not rep.diverged else EXIT_INFEASIBLE


def _resolve_policies(specs: list[str], bundle: ScenarioBundle, args) -> dict:
    out = {}
    for spec in specs:
        name, _, src = spec.partition("=")
        if src:
            out[name] = _read_policy(src, bundle)
        elif name == DISTRIBUTED_POLICY:
            out[name] = DISTRIBUTED_POLICY
        elif name == "uniform":
            out[name] = bundle.topology.uniform_policy()
        elif name in ALGORITHMS:
            out[name], _ = run_algorithm(name, bundle, args)
        else:
            raise ValueError(f"unknown policy {spec!r}; use an algorithm name, 'uniform', "
                             f"'distributed' or name=policy.json")
    return out


def cmd_compare(args, bundle: ScenarioBundle, out: Output) -> int:
    pols = _resolve_policies(args.policies.split(","), bundle, args)
    reps = compare_policies(bundle.topology, pols, _sim_config(args))
    table = summary_table(reps)
    header = list(table[0])
    rows = [[r[h] for h in header] for r in table]
    out.csv("summary.csv", header, rows)
    grid = _ecdf_grid(reps.values())
    for name, rep in reps.items():
        out._path(f"ecdf_{name}.csv").write_text(out.comments() + rep.ecdf_csv(grid))
    out.json("comparison.json", {
        "horizon": args.horizon, "warmup": args.warmup, "replications": args.replications,
        "policies": {k: (v if isinstance(v, str) else v.to_dict()) for k, v in pols.items()},
        "reports": {k: r.to_dict() for k, r in reps.items()},
        "summary": table,
    })
    out.show({"summary": table}, header, rows)
    return EXIT_OK


COMMANDS = {"validate": cmd_validate, "optimize": cmd_optimize, "evaluate": cmd_evaluate,
            "sweep": cmd_sweep, "simulate": cmd_simulate, "compare": cmd_compare}


# ---------------------------------------------------------------------------
# argument parsing

def _global_options(p: argparse.ArgumentParser, suppress: bool) -> None:
    d = (lambda v: argparse.SUPPRESS) if suppress else (lambda v: v)
    p.add_argument("--scenario", default=d("small"), help="bundled name or scenario JSON path")
    p.add_argument("--seed", type=int, default=d(0))
    p.add_argument("--out-dir", default=d("flowsplit-out"))
    p.add_argument("--jobs", type=int, default=d(1), help="worker threads for simulation replications")
    p.add_argument("--format", choices=("json", "csv"), default=d("json"), help="stdout format")


def _sim_options(p: argparse.ArgumentParser) -> None:
    p.add_argument("--horizon", type=float, default=10_000.0)
    p.add_argument("--replications", type=int, default=1)
    p.add_argument("--warmup", type=float, default=0.1, help="fraction of the horizon discarded")
    p.add_argument("--window", type=float, default=0.0,
                   help="distributed rule: occupancy refresh period (0 = instantaneous)")


def _opt_options(p: argparse.ArgumentParser) -> None:
    p.add_argument("--phi0", type=float, default=0.25)
    p.add_argument("--phi-min", type=float, default=1 / 1024)
    p.add_argument("--max-evals", type=int, default=100_000)
    p.add_argument("--grid-step", type=float, default=1e-3, help="bruteforce grid step")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="flowsplit", description=__doc__.split("\n")[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    _global_options(parser, suppress=False)
    common = argparse.ArgumentParser(add_help=False)
    _global_options(common, suppress=True)
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("validate", parents=[common], help="check a scenario and summarize it")

    p = sub.add_parser("optimize", parents=[common], help="compute a routing policy")
    p.add_argument("--algorithm", choices=ALGORITHMS, default="bh")
    _opt_options(p)

    p = sub.add_parser("evaluate", parents=[common], help="analytic travel times of a policy")
    p.add_argument("--policy", help="policy JSON (default: uniform)")
    p.add_argument("--model", choices=("as-is", "mm1", "md1"), default="as-is")
    p.add_argument("--t-max", type=float, default=None)
    p.add_argument("--points", type=int, default=201)

    p = sub.add_parser("sweep", parents=[common], help="objective against one path probability")
    p.add_argument("--path", help="swept path id (its flow must have two paths)")
    p.add_argument("--start", type=float, default=0.01)
    p.add_argument("--stop", type=float, default=0.99)
    p.add_argument("--step", type=float, default=0.01)
    p.add_argument("--policy", help="base policy for the other flows")

    p = sub.add_parser("simulate", parents=[common], help="discrete-event simulation")
    p.add_argument("--mode", choices=("policy", "distributed"), default="policy")
    p.add_argument("--policy", help="policy JSON")
    p.add_argument("--algorithm", choices=ALGORITHMS, help="optimize first, then simulate the result")
    p.add_argument("--samples", action="store_true", help="include raw trip times in the report")
    _sim_options(p)
    _opt_options(p)

    p = sub.add_parser("compare", parents=[common], help="simulate several policies on common streams")
    p.add_argument("--policies", default="bh,bipartite,distributed",
                   help="comma list of algorithm names, 'uniform', 'distributed' or name=policy.json")
    _sim_options(p)
    _opt_options(p)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        bundle = load_scenario(args.scenario)
        out = Output(args, bundle)
        return COMMANDS[args.command](args, bundle, out)
    except FlowsplitError as exc:
        code = exit_code_for(exc)
        print(f"error: {exc}", file=sys.stderr)
        return code
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
