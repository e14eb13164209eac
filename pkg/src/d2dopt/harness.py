"""Experiment sweeps, the dynamic-queue simulation and runtime-growth measurement."""

import csv
import io
import json
import statistics
import time
from collections import deque
from dataclasses import dataclass, field, fields, replace
from importlib import resources

import numpy as np

from .errors import D2DError, InvalidParameterError
from .rng import derive_seed, substream
from .scenario import ScenarioParams, generate_scenario, redraw_channels
from .solvers import SOLVERS, alternate_optimize, local_only, solve

AXES = {
    "none": None,
    "nodes": "node_count",
    "subchannels": "subchannel_count",
    "antennas": "antenna_count",
    "beta": "overhead_factor",
    "csi_theta": None,
}
ROW_FIELDS = ["axis", "value", "replication", "scenario_seed", "solver", "Y_comm", "Y_comp", "Y_total",
              "T_total", "E_total", "reduction_vs_local", "runtime_s", "iterations", "infeasible", "error"]
SUMMARY_FIELDS = ["axis", "value", "solver", "n", "Y_total_mean", "Y_total_std", "Y_comm_mean",
                  "Y_comp_mean", "reduction_mean", "reduction_std", "runtime_mean", "failures"]
CSI_SOLVERS = ("alternate", "wmmse", "equal-cpu")


def default_config():
    """Experiment defaults shipped with the package (dBW keys converted on load)."""
    text = resources.files("d2dopt").joinpath("data/default_config.json").read_text()
    return json.loads(text)


def params_from_dict(data, base=None):
    base = base or ScenarioParams()
    if isinstance(data, ScenarioParams):
        return data
    merged = base.to_dict()
    for key in ("power", "noise_power", "circuit_power"):
        if f"{key}_dbw" in data:
            merged.pop(key)
    merged.update(data)
    return ScenarioParams.from_dict(merged)


@dataclass
class ExperimentConfig:
    """One sweep: ``values`` of ``axis`` x ``replications`` scenarios x ``solvers``.

    For the ``csi_theta`` axis the values are the error variance ratio
    theta^2 applied to the channels the optimizers see.
    """

    params: ScenarioParams = field(default_factory=ScenarioParams)
    axis: str = "none"
    values: list = field(default_factory=lambda: [None])
    replications: int = 20
    seed: int = 0
    solvers: list = field(default_factory=lambda: ["alternate", "local"])
    restarts: int = 10
    out_dir: str = None

    def __post_init__(self):
        self.params = params_from_dict(self.params) if isinstance(self.params, dict) else self.params
        if self.axis not in AXES:
            raise InvalidParameterError(f"unknown sweep axis {self.axis!r}; choose from {', '.join(AXES)}")
        self.values = list(self.values)
        if AXES[self.axis] in ("node_count", "subchannel_count", "antenna_count"):
            self.values = [int(v) for v in self.values]
        if not self.values:
            raise InvalidParameterError("sweep values must not be empty")
        if self.replications < 1:
            raise InvalidParameterError("replications must be >= 1")
        if self.restarts < 1:
            raise InvalidParameterError("restarts must be >= 1")
        for s in self.solvers:
            if s not in SOLVERS:
                raise InvalidParameterError(f"unknown solver {s!r}; choose from {', '.join(SOLVERS)}")
        if not self.solvers:
            raise InvalidParameterError("solver list must not be empty")

    @classmethod
    def from_dict(cls, data):
        data = dict(data)
        known = {f.name for f in fields(cls)}
        sweep = data.pop("sweep", None)
        if sweep:
            data.setdefault("axis", sweep.get("axis", "none"))
            data.setdefault("values", sweep.get("values", [None]))
        extra = set(data) - known - {"queue", "runtime"}
        if extra:
            raise InvalidParameterError(f"unknown config keys: {sorted(extra)}")
        data = {k: v for k, v in data.items() if k in known}
        if "params" in data:
            data["params"] = params_from_dict(data["params"])
        return cls(**data)

    def scenario_params(self, value):
        key = AXES[self.axis]
        if key is None:
            return self.params
        if key == "overhead_factor":
            return self.params.with_(overhead_factor=float(value))
        return self.params.with_(**{key: int(value)})


@dataclass
class SweepResult:
    rows: list
    summary: list

    def rows_csv(self):
        return _to_csv(self.rows, ROW_FIELDS)

    def summary_csv(self):
        return _to_csv(self.summary, SUMMARY_FIELDS)

    def write(self, out_dir):
        from pathlib import Path

        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "sweep_rows.csv").write_text(self.rows_csv())
        (out / "sweep_summary.csv").write_text(self.summary_csv())


def _to_csv(rows, names):
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=names, extrasaction="ignore")
    w.writeheader()
    w.writerows(rows)
    return buf.getvalue()


def _run_one(config, value, rep):
    """All solver rows of one (value, replication) cell."""
    params = config.scenario_params(value)
    scenario_seed = derive_seed(config.seed, "scenario", rep)
    solver_seed = derive_seed(config.seed, "solver", rep)
    scenario = generate_scenario(params, scenario_seed)
    theta2 = float(value) if config.axis == "csi_theta" else 0.0
    local_y = local_only(scenario).Y_total
    rows = []
    for name in config.solvers:
        row = {"axis": config.axis, "value": value, "replication": rep, "scenario_seed": scenario_seed,
               "solver": name, "error": ""}
        try:
            kw = {"csi_theta2": theta2} if name in CSI_SOLVERS and theta2 > 0 else {}
            sol = solve(scenario, name, restarts=config.restarts, seed=solver_seed, **kw)
        except D2DError as exc:
            row.update({"infeasible": True, "error": f"{type(exc).__name__}: {exc}"})
            rows.append(row)
            continue
        rep_ = sol.report
        row.update({
            "Y_comm": rep_.Y_comm, "Y_comp": rep_.Y_comp, "Y_total": rep_.Y_total,
            "T_total": rep_.T_total, "E_total": rep_.E_total,
            "reduction_vs_local": 1.0 - rep_.Y_total / local_y,
            "runtime_s": sol.seconds, "iterations": sol.iterations, "infeasible": rep_.infeasible,
        })
        rows.append(row)
    return rows


def _summarize(config, rows):
    out = []
    for value in config.values:
        for name in config.solvers:
            cell = [r for r in rows if r["value"] == value and r["solver"] == name]
            ok = [r for r in cell if not r["error"] and not r.get("infeasible")]
            ys = [r["Y_total"] for r in ok]
            red = [r["reduction_vs_local"] for r in ok]

            def mean(xs):
                return statistics.fmean(xs) if xs else float("nan")

            def std(xs):
                return statistics.stdev(xs) if len(xs) > 1 else 0.0 if xs else float("nan")

            out.append({
                "axis": config.axis, "value": value, "solver": name, "n": len(ok),
                "Y_total_mean": mean(ys), "Y_total_std": std(ys),
                "Y_comm_mean": mean([r["Y_comm"] for r in ok]), "Y_comp_mean": mean([r["Y_comp"] for r in ok]),
                "reduction_mean": mean(red), "reduction_std": std(red),
                "runtime_mean": mean([r["runtime_s"] for r in ok]), "failures": len(cell) - len(ok),
            })
    return out


def run_sweep(config, workers=1):
    """Run every (value, replication, solver) cell.

    Scenario seeds depend only on the replication index, so every sweep
    value sees the same node draws and the comparisons are paired.  Rows
    come back ordered by value, replication and solver list position
    whatever ``workers`` is.
    """
    cells = [(v, r) for v in config.values for r in range(config.replications)]
    if workers > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(workers) as pool:
            parts = list(pool.map(_run_one, [config] * len(cells), *zip(*cells)))
    else:
        parts = [_run_one(config, v, r) for v, r in cells]
    rows = [row for part in parts for row in part]
    result = SweepResult(rows, _summarize(config, rows))
    if config.out_dir:
        result.write(config.out_dir)
    return result


@dataclass
class QueueConfig:
    k_max: int = 30
    arrival_rate: float = 0.1
    frame_period: float = 5.0
    frames: int = 8
    task_size: float = 8e6
    seed: int = 0
    restarts: int = 10
    params: ScenarioParams = field(default_factory=ScenarioParams)

    def __post_init__(self):
        self.params = params_from_dict(self.params) if isinstance(self.params, dict) else self.params
        if not self.arrival_rate > 0 or not self.frame_period > 0:
            raise InvalidParameterError("arrival rate and frame period must be positive")
        if self.frames < 1 or self.k_max < 1:
            raise InvalidParameterError("frames and k_max must be >= 1")
        if not self.task_size > 0:
            raise InvalidParameterError("task size must be positive")

    @classmethod
    def from_dict(cls, data):
        data = dict(data)
        known = {f.name for f in fields(cls)}
        extra = set(data) - known
        if extra:
            raise InvalidParameterError(f"unknown queue config keys: {sorted(extra)}")
        if "params" in data:
            data["params"] = params_from_dict(data["params"])
        return cls(**data)


QUEUE_FIELDS = ["frame", "time_s", "K", "Y_alternate", "Y_local", "reduction_pct", "backlog", "mean_wait_s"]


def queue_arrivals(config):
    """Arrival times per node over the simulated horizon (Poisson process per node)."""
    horizon = config.frames * config.frame_period
    out = []
    for k in range(config.k_max):
        rng = substream(config.seed, "arrivals", k)
        n = rng.poisson(config.arrival_rate * horizon)
        out.append(np.sort(rng.uniform(0.0, horizon, size=n)))
    return out


def queue_simulation(config, arrivals=None):
    """Frame-by-frame offloading of queued tasks.

    Frame ``t`` closes at ``t * frame_period``; every node with a queued
    task contributes its oldest one.  Node positions and CPUs stay fixed
    across frames while small-scale fading is redrawn each frame.
    """
    params = config.params.with_(node_count=config.k_max)
    base = generate_scenario(params, derive_seed(config.seed, "base"))
    arrivals = queue_arrivals(config) if arrivals is None else arrivals
    queues = [deque() for _ in range(config.k_max)]
    pending = [deque(a) for a in arrivals]
    rows = []
    for t in range(1, config.frames + 1):
        now = t * config.frame_period
        for k in range(config.k_max):
            while pending[k] and pending[k][0] <= now:
                queues[k].append(pending[k].popleft())
        nodes = [k for k in range(config.k_max) if queues[k]]
        row = {"frame": t, "time_s": now, "K": len(nodes), "Y_alternate": 0.0, "Y_local": 0.0,
               "reduction_pct": 0.0}
        if nodes:
            frame = redraw_channels(base, derive_seed(config.seed, "frame", t))
            sub = frame.subset(nodes, task_sizes=np.full(len(nodes), config.task_size))
            alt = alternate_optimize(sub, config.restarts, derive_seed(config.seed, "solver", t))
            loc = local_only(sub)
            waits = [now - queues[k].popleft() for k in nodes]
            row.update({"Y_alternate": alt.Y_total, "Y_local": loc.Y_total,
                        "reduction_pct": 100.0 * (1.0 - alt.Y_total / loc.Y_total),
                        "mean_wait_s": float(np.mean(waits))})
        else:
            row["mean_wait_s"] = 0.0
        row["backlog"] = sum(len(q) for q in queues)
        rows.append(row)
    return rows


def queue_csv(rows):
    return _to_csv(rows, QUEUE_FIELDS)


@dataclass
class RuntimeConfig:
    nodes: list = field(default_factory=lambda: [4, 8, 16, 32])
    subchannels: int = 1
    antennas: int = 5
    repeats: int = 3
    restarts: int = 10
    seed: int = 0
    params: ScenarioParams = field(default_factory=ScenarioParams)

    def __post_init__(self):
        self.params = params_from_dict(self.params) if isinstance(self.params, dict) else self.params
        self.nodes = [int(k) for k in self.nodes]
        if not self.nodes or self.nodes != sorted(self.nodes) or self.nodes[0] < 1:
            raise InvalidParameterError("node values must be positive and ascending")
        if self.repeats < 1:
            raise InvalidParameterError("repeats must be >= 1")

    @classmethod
    def from_dict(cls, data):
        data = dict(data)
        if "params" in data:
            data["params"] = params_from_dict(data["params"])
        return cls(**data)


@dataclass
class RuntimeResult:
    rows: list
    slope: float

    def csv(self):
        return _to_csv(self.rows, ["K", "median_s", "normalized"])


def runtime_growth(config, solver=None):
    """Median wall-clock per K, normalized to the smallest K, with the log-log slope."""
    solver = solver or (lambda sc, seed: alternate_optimize(sc, config.restarts, seed))
    rows = []
    for K in config.nodes:
        params = config.params.with_(node_count=K, subchannel_count=config.subchannels,
                                     antenna_count=config.antennas)
        times = []
        for r in range(config.repeats):
            sc = generate_scenario(params, derive_seed(config.seed, "runtime", K, r))
            start = time.perf_counter()
            solver(sc, derive_seed(config.seed, "runtime-solver", K, r))
            times.append(time.perf_counter() - start)
        rows.append({"K": K, "median_s": statistics.median(times)})
    ref = rows[0]["median_s"]
    for row in rows:
        row["normalized"] = row["median_s"] / ref
    if len(rows) > 1:
        slope = float(np.polyfit(np.log([r["K"] for r in rows]), np.log([r["normalized"] for r in rows]), 1)[0])
    else:
        slope = float("nan")
    return RuntimeResult(rows, slope)


def with_overrides(obj, **kw):
    """Copy of a config dataclass with the non-None keyword values applied."""
    return replace(obj, **{k: v for k, v in kw.items() if v is not None})
