"""Command-line entry point: ``d2dopt {generate,solve,sweep,queue-sim,runtime}``."""

import argparse
import json
import sys
from pathlib import Path

from .errors import D2DError
from .harness import (ExperimentConfig, QueueConfig, RuntimeConfig, default_config, queue_csv,
                      queue_simulation, run_sweep, runtime_growth, params_from_dict)
from .overhead import write_report_csv
from .scenario import generate_scenario, scenario_from_dict, scenario_to_dict
from .solvers import SOLVERS, solve


def _csv_list(kind):
    def parse(text):
        return [kind(x) for x in text.split(",") if x.strip()]
    return parse


def load_config(path=None):
    """Package defaults with the JSON file at ``path`` merged on top (``params`` merged key-wise)."""
    cfg = default_config()
    if path:
        user = json.loads(Path(path).read_text())
        user_params = user.pop("params", {})
        params = dict(cfg["params"])
        for key in ("power", "noise_power", "circuit_power"):
            if key in user_params:
                params.pop(f"{key}_dbw", None)
        params.update(user_params)
        cfg.update(user)
        cfg["params"] = params
    return cfg


def _scenario_params(cfg, args):
    params = params_from_dict(cfg["params"])
    changes = {"node_count": getattr(args, "nodes", None), "subchannel_count": getattr(args, "subchannels", None),
               "antenna_count": getattr(args, "antennas", None), "overhead_factor": getattr(args, "beta", None)}
    changes = {k: v for k, v in changes.items() if v is not None}
    return params.with_(**changes) if changes else params


def _emit(args, name, text):
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / name).write_text(text)
    else:
        sys.stdout.write(text if text.endswith("\n") else text + "\n")


def cmd_generate(args, cfg):
    seed = args.seed if args.seed is not None else cfg.get("seed", 0)
    sc = generate_scenario(_scenario_params(cfg, args), seed)
    _emit(args, "scenario.json", json.dumps(scenario_to_dict(sc, include_channels=not args.no_channels)))


def cmd_solve(args, cfg):
    seed = args.seed if args.seed is not None else cfg.get("seed", 0)
    if args.scenario:
        sc = scenario_from_dict(json.loads(Path(args.scenario).read_text()))
    else:
        sc = generate_scenario(_scenario_params(cfg, args), seed)
    restarts = args.restarts or cfg.get("restarts", 10)
    kw = {"csi_theta2": args.csi_theta2} if args.csi_theta2 else {}
    sol = solve(sc, args.solver, restarts=restarts, seed=seed, **kw)
    if args.format == "csv":
        _emit(args, "solution.csv", write_report_csv([sol.csv_row(str(sc.seed))]))
    else:
        _emit(args, "solution.json", sol.to_json())


def cmd_sweep(args, cfg):
    data = {k: cfg[k] for k in ("sweep", "replications", "restarts", "seed", "solvers") if k in cfg}
    data["params"] = _scenario_params(cfg, args)
    sweep = dict(data.pop("sweep", {"axis": "none", "values": [None]}))
    if args.axis:
        sweep = {"axis": args.axis, "values": [None] if args.axis == "none" else sweep.get("values", [None])}
    if args.values:
        sweep["values"] = args.values
    data["sweep"] = sweep
    for name in ("replications", "restarts", "seed", "solvers"):
        v = getattr(args, name)
        if v is not None:
            data[name] = v
    config = ExperimentConfig.from_dict(data)
    result = run_sweep(config, workers=args.workers)
    if args.format == "json":
        _emit(args, "sweep.json", json.dumps({"rows": result.rows, "summary": result.summary}, default=str))
    elif args.out:
        result.write(args.out)
    else:
        sys.stdout.write(result.rows_csv())
        sys.stdout.write("\n")
        sys.stdout.write(result.summary_csv())


def cmd_queue(args, cfg):
    data = dict(cfg.get("queue", {}))
    data["params"] = cfg["params"]
    data["seed"] = args.seed if args.seed is not None else cfg.get("seed", 0)
    data["restarts"] = args.restarts or cfg.get("restarts", 10)
    for key in ("frames", "k_max", "arrival_rate", "frame_period", "task_size"):
        v = getattr(args, key)
        if v is not None:
            data[key] = v
    rows = queue_simulation(QueueConfig.from_dict(data))
    if args.format == "json":
        _emit(args, "queue.json", json.dumps(rows))
    else:
        _emit(args, "queue.csv", queue_csv(rows))


def cmd_runtime(args, cfg):
    data = dict(cfg.get("runtime", {}))
    data["params"] = cfg["params"]
    data["seed"] = args.seed if args.seed is not None else cfg.get("seed", 0)
    data["restarts"] = args.restarts or cfg.get("restarts", 10)
    if args.node_values:
        data["nodes"] = args.node_values
    if args.repeats:
        data["repeats"] = args.repeats
    result = runtime_growth(RuntimeConfig.from_dict(data))
    if args.format == "json":
        _emit(args, "runtime.json", json.dumps({"rows": result.rows, "slope": result.slope}))
    else:
        _emit(args, "runtime.csv", result.csv() + f"# slope,{result.slope}\n")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(json.dumps({"error": "UsageError", "code": "usage", "message": message}) + "\n")
        sys.exit(2)


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON configuration file (flags override its values)")
    common.add_argument("--seed", type=int, help="root seed (unsigned 64-bit)")
    common.add_argument("--out", help="output directory (default: stdout)")
    common.add_argument("--format", choices=("csv", "json"), help="output format (default: json for generate/solve, csv otherwise)")

    shape = argparse.ArgumentParser(add_help=False)
    shape.add_argument("--nodes", type=int)
    shape.add_argument("--subchannels", type=int)
    shape.add_argument("--antennas", type=int)
    shape.add_argument("--beta", type=float, help="overhead factor shared by all nodes")

    p = _Parser(prog="d2dopt", description="Joint offloading, CPU and beamforming optimization for D2D networks.")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", parents=[common, shape], help="write a random scenario as JSON")
    g.add_argument("--no-channels", action="store_true", help="omit channels (they are regenerated from the seed)")
    g.set_defaults(func=cmd_generate)

    s = sub.add_parser("solve", parents=[common, shape], help="optimize one scenario")
    s.add_argument("--scenario", help="scenario JSON from 'generate' (otherwise generated from --seed)")
    s.add_argument("--solver", choices=SOLVERS, default="alternate")
    s.add_argument("--restarts", type=int)
    s.add_argument("--csi-theta2", type=float, default=0.0, help="channel estimation error variance ratio")
    s.set_defaults(func=cmd_solve)

    w = sub.add_parser("sweep", parents=[common, shape], help="run a parameter sweep")
    w.add_argument("--axis", choices=("none", "nodes", "subchannels", "antennas", "beta", "csi_theta"))
    w.add_argument("--values", type=_csv_list(float))
    w.add_argument("--replications", type=int)
    w.add_argument("--restarts", type=int)
    w.add_argument("--solvers", type=_csv_list(str))
    w.add_argument("--workers", type=int, default=1)
    w.set_defaults(func=cmd_sweep)

    q = sub.add_parser("queue-sim", parents=[common], help="dynamic task-queue simulation")
    q.add_argument("--frames", type=int)
    q.add_argument("--k-max", type=int)
    q.add_argument("--arrival-rate", type=float)
    q.add_argument("--frame-period", type=float)
    q.add_argument("--task-size", type=float)
    q.add_argument("--restarts", type=int)
    q.set_defaults(func=cmd_queue)

    r = sub.add_parser("runtime", parents=[common], help="runtime growth of alternate optimization over K")
    r.add_argument("--node-values", type=_csv_list(int))
    r.add_argument("--repeats", type=int)
    r.add_argument("--restarts", type=int)
    r.set_defaults(func=cmd_runtime)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.format is None:
        args.format = "json" if args.command in ("generate", "solve") else "csv"
    try:
        cfg = load_config(args.config)
        args.func(args, cfg)
    except (D2DError, ValueError, OSError, KeyError) as exc:
        err = {"error": type(exc).__name__, "code": getattr(exc, "code", "error"), "message": str(exc)}
        sys.stderr.write(json.dumps(err) + "\n")
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
