"""Top-level optimizers and baselines, all returning :class:`Solution`."""

import json
import math
import time
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

from .errors import InvalidParameterError, InvalidStateError, TooLargeError
from .mcob import full_power, mcob, mmse_combiners, random_beamformers
from .overhead import LOCAL, AllocationState, BeamformingState, OverheadReport, total_overhead
from .rng import derive_seed, substream
from .scenario import distort_csi
from .topology import CpuCache, greedy_allocate

ENUMERATION_CAP = 10**7
SOLVERS = ("alternate", "exhaustive", "local", "wmmse", "equal-cpu")


@dataclass
class Solution:
    alloc: AllocationState
    beams: BeamformingState
    report: OverheadReport
    solver: str
    trace: list = field(default_factory=list)
    restart: int = -1
    seconds: float = 0.0
    iterations: int = 0
    stats: dict = field(default_factory=dict)

    @property
    def Y_total(self):
        return self.report.Y_total

    def to_dict(self):
        return {
            "solver": self.solver,
            "restart": self.restart,
            "seconds": self.seconds,
            "iterations": self.iterations,
            "trace": [float(y) for y in self.trace],
            "stats": self.stats,
            "alloc": self.alloc.to_dict(),
            "beams": self.beams.to_dict(),
            "report": self.report.to_dict(),
        }

    def to_json(self, **kw):
        return json.dumps(self.to_dict(), **kw)

    @classmethod
    def from_dict(cls, d, scenario=None):
        alloc = AllocationState.from_dict(d["alloc"])
        beams = BeamformingState.from_dict(d["beams"])
        report = total_overhead(alloc, beams, scenario) if scenario is not None else OverheadReport.from_dict(d["report"])
        return cls(alloc, beams, report, d["solver"], d.get("trace", []), d.get("restart", -1),
                   d.get("seconds", 0.0), d.get("iterations", 0), d.get("stats", {}))

    def csv_row(self, scenario_id=""):
        row = self.report.csv_row(scenario_id, self.solver)
        row.update({"runtime_s": self.seconds, "iterations": self.iterations})
        return row


def beams_for(alloc, f, scenario, channels=None):
    """Beamformers ``f`` restricted to the transmitters of ``alloc``, with MMSE combiners."""
    channels = scenario.channels if channels is None else channels
    f = np.array(f, dtype=complex)
    idle = np.ones(alloc.K, bool)
    idle[alloc.transmitters] = False
    f[idle] = 0.0
    z = mmse_combiners(alloc, f, channels, scenario.noise_power)
    return BeamformingState(f, z)


def _finish(alloc, beams, scenario, solver, channels=None, **kw):
    """Build a Solution whose report is evaluated on ``channels`` (true channels by default).

    Combiners are recomputed as MMSE on the evaluation channels, so a
    solution optimized on estimated channels is judged as the receivers
    would actually decode it.
    """
    if channels is not None:
        beams = beams_for(alloc, beams.f, scenario, channels)
    alloc.validate(scenario.cpus)
    report = total_overhead(alloc, beams, scenario, channels)
    return Solution(alloc, beams, report, solver, **kw)


def local_only(scenario, cpu_mode="optimal", cpu=None):
    start = time.perf_counter()
    cpu = cpu or CpuCache(scenario, cpu_mode)
    K, S, N = scenario.K, scenario.S, scenario.N
    alloc = AllocationState.local(K, S, cpu.frequencies(np.arange(K)))
    beams = BeamformingState.empty(K, S, N)
    report = total_overhead(alloc, beams, scenario)
    return Solution(alloc, beams, report, "local", [report.Y_total], -1, time.perf_counter() - start)


def random_allocation(rng, K, S, cpu=None):
    """Each node is local with probability 1/2, otherwise picks a uniform (target, subchannel).

    Draws are repeated until no two transmitters share a receiver on one
    subchannel.
    """
    while True:
        target = np.arange(K)
        sub = np.full(K, LOCAL)
        for k in range(K):
            if K == 1 or rng.random() < 0.5:
                continue
            j = int(rng.integers((K - 1) * S))
            t, i = divmod(j, S)
            target[k] = t + (t >= k)
            sub[k] = i
        off = target != np.arange(K)
        pairs = list(zip(target[off].tolist(), sub[off].tolist()))
        if len(set(pairs)) == len(pairs):
            freqs = cpu.frequencies(target) if cpu is not None else np.zeros(K)
            return AllocationState(target, sub, freqs, S)


def _evaluate(alloc, f, scenario, channels):
    beams = beams_for(alloc, f, scenario, channels)
    return beams, total_overhead(alloc, beams, scenario, channels).Y_total


def alternate_optimize(scenario, restarts=10, seed=0, eps=1e-4, max_outer=20, cpu_mode="optimal",
                       mcob_beta=None, csi_theta2=0.0, solver="alternate", mcob_options=None):
    """Alternate beamforming (MCOB) and topology/CPU (greedy) updates from random starts.

    Each outer iteration runs MCOB on the current assignment, then greedy
    under the resulting beamformers (nodes that are not transmitting keep
    their previous beamformer), and records Y_total after the greedy step.
    It stops when that value changes by less than ``eps``.  Every state
    visited, and the all-local allocation, competes for the result, so the
    returned overhead never exceeds the local-only one.

    With ``csi_theta2 > 0`` all optimization sees distorted channels and
    only the returned report is evaluated on the true channels.
    """
    if restarts < 1:
        raise InvalidParameterError("restarts must be >= 1")
    if eps <= 0:
        raise InvalidParameterError("eps must be positive")
    start = time.perf_counter()
    K, S, N = scenario.K, scenario.S, scenario.N
    opts = dict(mcob_options or {})
    if mcob_beta is not None:
        opts["beta"] = np.broadcast_to(np.asarray(mcob_beta, float), (K,))
    channels = scenario.channels
    if csi_theta2 > 0:
        channels = distort_csi(scenario.channels, csi_theta2, derive_seed(seed, "csi"))
    cpu = CpuCache(scenario, cpu_mode)
    local = local_only(scenario, cpu=cpu)
    best = (local.Y_total, -1, local.alloc, local.beams)
    stats = {"evaluations": 0, "mcob_iterations": 0, "outer_iterations": 0}
    traces = []
    for r in range(restarts if K > 1 else 0):
        rng = substream(seed, "restart", r)
        alloc = random_allocation(rng, K, S, cpu)
        f = random_beamformers(rng, K, N, scenario.power)
        trace = []
        prev = math.inf
        for _ in range(max_outer):
            if len(alloc.transmitters):
                beams, mt = mcob(alloc, scenario, full_power(f, scenario.power), channels=channels, **opts)
                stats["mcob_iterations"] += mt.iterations
                f = f.copy()
                f[alloc.transmitters] = beams.f[alloc.transmitters]
                try:
                    y = total_overhead(alloc, beams, scenario, channels).Y_total
                except InvalidStateError:
                    y = math.inf          # a random start may contain a link with no channel
                if y < best[0]:
                    best = (y, r, alloc, beams)
            alloc = greedy_allocate(scenario, f, cpu=cpu, channels=channels, stats=stats)
            beams, y = _evaluate(alloc, f, scenario, channels)
            if y < best[0]:
                best = (y, r, alloc, beams)
            trace.append(y)
            stats["outer_iterations"] += 1
            if abs(y - prev) < eps:
                break
            prev = y
        traces.append(trace)
    stats.pop("trace", None)
    _, restart, alloc, beams = best
    trace = traces[restart] if restart >= 0 else [local.Y_total]
    eval_channels = scenario.channels if csi_theta2 > 0 else None
    return _finish(alloc, beams, scenario, solver, eval_channels, trace=trace, restart=restart,
                   seconds=time.perf_counter() - start, iterations=stats["outer_iterations"], stats=stats)


def wmmse_baseline(scenario, restarts=10, seed=0, **kw):
    """Alternate optimization whose beamforming step minimizes time only."""
    return alternate_optimize(scenario, restarts, seed, mcob_beta=0.0, solver="wmmse", **kw)


def equal_cpu_baseline(scenario, restarts=10, seed=0, **kw):
    """Alternate optimization with every receiver splitting its CPU equally."""
    return alternate_optimize(scenario, restarts, seed, cpu_mode="equal", solver="equal-cpu", **kw)


def assignment_bound(K, S):
    return (K * S - S + 1) ** K


def enumerate_assignments(K, S, cap=ENUMERATION_CAP):
    """Yield every (target, subchannel) pair of arrays with no shared (receiver, subchannel).

    Each node is local or sends to any other node on any subchannel, so
    at most ``(KS - S + 1)^K`` configurations exist; conflicting ones are
    cut as soon as the conflict appears.
    """
    bound = assignment_bound(K, S)
    if bound > cap:
        raise TooLargeError(f"enumeration bound (KS-S+1)^K = {bound} exceeds the cap {cap}")
    choices = [[(k, LOCAL)] + [(t, i) for t in range(K) if t != k for i in range(S)] for k in range(K)]
    target = [0] * K
    sub = [LOCAL] * K
    taken = set()

    def walk(k):
        if k == K:
            yield np.array(target), np.array(sub)
            return
        for t, i in choices[k]:
            if i != LOCAL:
                if (t, i) in taken:
                    continue
                taken.add((t, i))
            target[k], sub[k] = t, i
            yield from walk(k + 1)
            if i != LOCAL:
                taken.discard((t, i))

    return walk(0)


def _link_lower_bound(scenario, k, kp, i):
    """Smallest Y_comm stream k -> kp could reach on subchannel i without interference.

    With no interference the best SINR at power p is ``p c / noise`` with
    ``c`` the top eigenvalue of ``H^H H``, so the overhead is
    ``(a + beta p) / log2(1 + p c / noise)`` up to a constant.  Its
    stationarity condition is monotone in p and is solved by bracketing.
    """
    H = scenario.channels[k, kp, i]
    c = float(np.linalg.eigvalsh(H.conj().T @ H)[-1]) / scenario.noise_power
    if c <= 0:
        return math.inf
    beta = scenario.beta[k]
    P = scenario.power[k]
    a = 1.0 - beta + beta * scenario.params.circuit_power

    def phi(p):
        return beta * math.log1p(c * p) * (1.0 + c * p) - c * (a + beta * p)

    p = P if phi(P) <= 0 else brentq(phi, 0.0, P, xtol=1e-14 * P, rtol=1e-14)
    rate = scenario.params.bandwidth * math.log2(1.0 + c * p)
    return (a + beta * p) * scenario.task_sizes[k] / rate


def _eigen_beams(scenario, alloc, channels):
    """Dominant right singular vector of each transmitter's direct channel, at full power."""
    f = np.zeros((scenario.K, scenario.N), complex)
    for k, kp, i in zip(*alloc.streams()):
        _, _, vh = np.linalg.svd(channels[k, kp, i])
        f[k] = vh[0].conj()
    return full_power(f, scenario.power)


EXHAUSTIVE_MCOB = {"eps": 1e-10, "max_iters": 2000}


def exhaustive_optimize(scenario, seed=0, cap=ENUMERATION_CAP, mcob_options=None, prune=True):
    """Search every feasible assignment, each with optimal CPU shares and MCOB beamformers.

    Configurations are visited in increasing order of a lower bound (exact
    Y_comp plus the interference-free Y_comm of every stream) and the
    search stops once that bound reaches the best overhead found, which
    cannot drop any configuration that would have won.  MCOB runs twice
    per configuration, from the eigen-beamformers and from random
    beamformers seeded by the configuration, and the better result counts.
    MCOB runs to a much tighter tolerance than inside alternate
    optimization so each configuration is judged near its converged value.
    """
    start = time.perf_counter()
    K, S, N = scenario.K, scenario.S, scenario.N
    cpu = CpuCache(scenario)
    links = {}
    configs = []
    for idx, (target, sub) in enumerate(enumerate_assignments(K, S, cap)):
        comp = sum(cpu.cost(n, np.flatnonzero(target == n)) for n in np.unique(target))
        comm = 0.0
        for k in np.flatnonzero(sub != LOCAL):
            key = (k, target[k], sub[k])
            if key not in links:
                links[key] = _link_lower_bound(scenario, *key)
            comm += links[key]
        configs.append((comp + comm, idx, target, sub))
    order = sorted(configs, key=lambda c: (c[0], c[1]))
    best = None
    visited = 0
    for bound, idx, target, sub in order:
        if prune and best is not None and bound >= best[0]:
            break
        visited += 1
        alloc = AllocationState(target, sub, cpu.frequencies(target), S)
        cands = []
        if len(alloc.transmitters):
            rng = substream(seed, "exhaustive", idx)
            for f0 in (_eigen_beams(scenario, alloc, scenario.channels),
                       random_beamformers(rng, K, N, scenario.power)):
                beams, _ = mcob(alloc, scenario, f0, **{**EXHAUSTIVE_MCOB, **(mcob_options or {})})
                cands.append((total_overhead(alloc, beams, scenario).Y_total, beams))
        else:
            beams = BeamformingState.empty(K, S, N)
            cands.append((total_overhead(alloc, beams, scenario).Y_total, beams))
        y, beams = min(cands, key=lambda c: c[0])
        if best is None or y < best[0] or (y == best[0] and idx < best[1]):
            best = (y, idx, alloc, beams)
    _, idx, alloc, beams = best
    stats = {"configurations": len(configs), "visited": visited}
    return _finish(alloc, beams, scenario, "exhaustive", trace=[best[0]], restart=idx,
                   seconds=time.perf_counter() - start, iterations=visited, stats=stats)


def solve(scenario, solver="alternate", restarts=10, seed=0, **kw):
    if solver == "alternate":
        return alternate_optimize(scenario, restarts, seed, **kw)
    if solver == "wmmse":
        return wmmse_baseline(scenario, restarts, seed, **kw)
    if solver == "equal-cpu":
        return equal_cpu_baseline(scenario, restarts, seed, **kw)
    if solver == "exhaustive":
        return exhaustive_optimize(scenario, seed)
    if solver == "local":
        return local_only(scenario)
    raise InvalidParameterError(f"unknown solver {solver!r}; choose from {', '.join(SOLVERS)}")
