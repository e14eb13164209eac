"""SINR, rate and time/energy overhead of an (allocation, beamforming) pair."""

import csv
import io
import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidParameterError, InvalidStateError

LOCAL = -1


@dataclass(frozen=True, eq=False)
class AllocationState:
    """Task assignment, subchannel choice and CPU share of every task.

    Stored compactly: ``target[k]`` is the node that processes task ``k``
    (``k`` itself for local processing), ``subchannel[k]`` is the
    subchannel used to offload it (``-1`` when local) and ``cpu[k]`` is the
    frequency ``F[k, target[k]]`` granted to it.  The binary matrices are
    available as ``a``, ``b`` and ``F``.
    """

    target: np.ndarray
    subchannel: np.ndarray
    cpu: np.ndarray
    S: int

    def __post_init__(self):
        target = np.array(self.target, dtype=int)
        sub = np.array(self.subchannel, dtype=int)
        cpu = np.array(self.cpu, dtype=float)
        for a in (target, sub, cpu):
            a.setflags(write=False)
        object.__setattr__(self, "target", target)
        object.__setattr__(self, "subchannel", sub)
        object.__setattr__(self, "cpu", cpu)
        object.__setattr__(self, "S", int(self.S))
        self.validate()

    @property
    def K(self):
        return len(self.target)

    def validate(self, capacities=None, rtol=1e-8):
        K, S = self.K, self.S
        if self.subchannel.shape != (K,) or self.cpu.shape != (K,):
            raise InvalidStateError("allocation arrays must have one entry per node")
        if np.any((self.target < 0) | (self.target >= K)):
            raise InvalidStateError("task target out of range")
        local = self.target == np.arange(K)
        if np.any(self.subchannel[local] != LOCAL):
            raise InvalidStateError("a locally processed task cannot hold a subchannel")
        if np.any((self.subchannel[~local] < 0) | (self.subchannel[~local] >= S)):
            raise InvalidStateError("every offloaded task needs exactly one subchannel")
        pairs = list(zip(self.target[~local].tolist(), self.subchannel[~local].tolist()))
        if len(set(pairs)) != len(pairs):
            raise InvalidStateError("two transmitters share one receiver on the same subchannel")
        if np.any(self.cpu < 0) or not np.all(np.isfinite(self.cpu)):
            raise InvalidStateError("CPU allocations must be finite and non-negative")
        if capacities is not None:
            load = np.bincount(self.target, weights=self.cpu, minlength=K)
            if np.any(load > np.asarray(capacities) * (1 + rtol)):
                raise InvalidStateError("CPU allocation exceeds a node's capacity")
        return self

    @classmethod
    def local(cls, K, S, cpu=None):
        return cls(np.arange(K), np.full(K, LOCAL), np.zeros(K) if cpu is None else cpu, S)

    @classmethod
    def from_matrices(cls, a, b, F):
        a = np.asarray(a)
        b = np.asarray(b)
        F = np.asarray(F, dtype=float)
        K, S = b.shape
        if a.shape != (K, K) or F.shape != (K, K):
            raise InvalidStateError("a and F must be K x K")
        if np.any(a.sum(axis=1) != 1):
            raise InvalidStateError("every task must be assigned to exactly one node")
        target = a.argmax(axis=1)
        offl = target != np.arange(K)
        if np.any(b.sum(axis=1) != offl.astype(int)):
            raise InvalidStateError("offloaded tasks need exactly one subchannel, local tasks none")
        if np.any(F[a == 0] != 0):
            raise InvalidStateError("F must vanish off the assignment")
        sub = np.where(offl, b.argmax(axis=1), LOCAL)
        return cls(target, sub, F[np.arange(K), target], S)

    @property
    def a(self):
        m = np.zeros((self.K, self.K), dtype=int)
        m[np.arange(self.K), self.target] = 1
        return m

    @property
    def b(self):
        m = np.zeros((self.K, self.S), dtype=int)
        off = self.transmitters
        m[off, self.subchannel[off]] = 1
        return m

    @property
    def F(self):
        m = np.zeros((self.K, self.K))
        m[np.arange(self.K), self.target] = self.cpu
        return m

    @property
    def transmitters(self):
        return np.flatnonzero(self.target != np.arange(self.K))

    def streams(self):
        tx = self.transmitters
        return tx, self.target[tx], self.subchannel[tx]

    def tasks_at(self, node):
        return np.flatnonzero(self.target == node)

    def with_cpu(self, cpu):
        return AllocationState(self.target, self.subchannel, cpu, self.S)

    def same_assignment(self, other):
        return np.array_equal(self.target, other.target) and np.array_equal(self.subchannel, other.subchannel)

    def to_dict(self):
        return {
            "target": self.target.tolist(),
            "subchannel": self.subchannel.tolist(),
            "cpu": self.cpu.tolist(),
            "subchannel_count": self.S,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(d["target"], d["subchannel"], d["cpu"], d["subchannel_count"])


@dataclass(eq=False)
class BeamformingState:
    """Transmit beamformers, receive combiners and MCOB auxiliaries.

    ``f[k]`` is node k's beamformer; ``z[kp, i]`` the combiner receiver kp
    applies on subchannel i.  ``w``, ``lam``, ``gam`` are NaN for nodes
    that do not transmit.
    """

    f: np.ndarray
    z: np.ndarray
    w: np.ndarray = None
    lam: np.ndarray = None
    gam: np.ndarray = None

    def __post_init__(self):
        self.f = np.asarray(self.f, dtype=complex)
        self.z = np.asarray(self.z, dtype=complex)
        K = self.f.shape[0]
        for name in ("w", "lam", "gam"):
            if getattr(self, name) is None:
                setattr(self, name, np.full(K, np.nan))
            else:
                setattr(self, name, np.asarray(getattr(self, name), dtype=float))

    @classmethod
    def empty(cls, K, S, N):
        return cls(np.zeros((K, N), complex), np.zeros((K, S, N), complex))

    def copy(self):
        return BeamformingState(self.f.copy(), self.z.copy(), self.w.copy(), self.lam.copy(), self.gam.copy())

    def to_dict(self):
        def pairs(a):
            return np.stack([a.real, a.imag], axis=-1).tolist()

        def floats(a):
            return [None if not np.isfinite(x) else float(x) for x in a]

        return {"f": pairs(self.f), "z": pairs(self.z), "w": floats(self.w),
                "lam": floats(self.lam), "gam": floats(self.gam)}

    @classmethod
    def from_dict(cls, d):
        def cplx(x):
            x = np.asarray(x, dtype=float)
            return x[..., 0] + 1j * x[..., 1]

        def floats(x):
            return np.array([np.nan if v is None else v for v in x], dtype=float)

        return cls(cplx(d["f"]), cplx(d["z"]), floats(d["w"]), floats(d["lam"]), floats(d["gam"]))


@dataclass(frozen=True)
class OverheadTerm:
    T: float
    E: float
    Y: float


def comp_term(cycles, F, kappa, beta):
    if F <= 0:
        return OverheadTerm(math.inf, math.inf, math.inf)
    T = cycles / F
    E = kappa * F * F * cycles
    return OverheadTerm(T, E, (1.0 - beta) * T + beta * E)


def comm_term(size, rate, power_used, circuit_power, beta):
    if not rate > 0:
        return OverheadTerm(math.inf, math.inf, math.inf)
    T = size / rate
    E = (power_used + circuit_power) * size / rate
    return OverheadTerm(T, E, (1.0 - beta) * T + beta * E)


def comp_overhead(k, kp, F, scenario):
    """Time, energy and overhead of processing task ``k`` at node ``kp`` with frequency ``F``."""
    cycles = scenario.density[k] * scenario.task_sizes[k]
    return comp_term(cycles, F, scenario.kappa[kp], scenario.beta[k])


def _interferers(alloc, i):
    return np.flatnonzero(alloc.subchannel == i)


def sinr(k, kp, i, alloc, beams, channels, noise_power):
    """SINR of stream k -> kp on subchannel i under the stored combiner."""
    if noise_power < 0:
        raise InvalidParameterError("noise power must be non-negative")
    z = beams.z[kp, i]
    zz = float(np.vdot(z, z).real)
    if zz == 0:
        raise InvalidStateError(f"combiner of receiver {kp} on subchannel {i} is zero")
    active = alloc.subchannel[k] == i and alloc.target[k] == kp
    signal = abs(np.vdot(z, channels[k, kp, i] @ beams.f[k])) ** 2 if active else 0.0
    interference = 0.0
    for l in _interferers(alloc, i):
        if l != k:
            interference += abs(np.vdot(z, channels[l, kp, i] @ beams.f[l])) ** 2
    return signal / (interference + noise_power * zz)


def rate(k, kp, alloc, beams, channels, bandwidth, noise_power):
    i = alloc.subchannel[k]
    return bandwidth * math.log1p(sinr(k, kp, i, alloc, beams, channels, noise_power)) / math.log(2)


def comm_overhead(k, kp, alloc, beams, channels, scenario):
    r = rate(k, kp, alloc, beams, channels, scenario.params.bandwidth, scenario.noise_power)
    p = float(np.vdot(beams.f[k], beams.f[k]).real)
    return comm_term(scenario.task_sizes[k], r, p, scenario.params.circuit_power, scenario.beta[k])


def stream_sinrs(alloc, f, z, channels, noise_power):
    """SINR of every transmitter's stream (NaN for local tasks), vectorized per subchannel."""
    out = np.full(alloc.K, np.nan)
    for i in range(alloc.S):
        tx = _interferers(alloc, i)
        if len(tx) == 0:
            continue
        rx = alloc.target[tx]
        G = channels[tx[None, :], rx[:, None], i]          # G[m, l]: tx of l -> rx of m
        y = np.einsum("mlab,lb->mla", G, f[tx])
        zm = z[rx, i]
        amp = np.abs(np.einsum("ma,mla->ml", zm.conj(), y)) ** 2
        sig = np.diag(amp).copy()
        interf = amp.sum(axis=1) - sig
        zz = np.sum(np.abs(zm) ** 2, axis=1)
        if np.any(zz == 0):
            raise InvalidStateError("zero combiner on an active stream")
        out[tx] = sig / (interf + noise_power * zz)
    return out


@dataclass(frozen=True, eq=False)
class OverheadReport:
    comm_time: np.ndarray
    comm_energy: np.ndarray
    comm_overhead: np.ndarray
    comp_time: np.ndarray
    comp_energy: np.ndarray
    comp_overhead: np.ndarray

    @property
    def Y_comm(self):
        return float(np.sum(self.comm_overhead))

    @property
    def Y_comp(self):
        return float(np.sum(self.comp_overhead))

    @property
    def Y_total(self):
        return self.Y_comm + self.Y_comp

    @property
    def T_total(self):
        return float(np.sum(self.comm_time) + np.sum(self.comp_time))

    @property
    def E_total(self):
        return float(np.sum(self.comm_energy) + np.sum(self.comp_energy))

    @property
    def infeasible(self):
        return not math.isfinite(self.Y_total)

    def comm(self, k):
        return OverheadTerm(self.comm_time[k], self.comm_energy[k], self.comm_overhead[k])

    def comp(self, k):
        return OverheadTerm(self.comp_time[k], self.comp_energy[k], self.comp_overhead[k])

    def to_dict(self):
        def fl(a):
            return [float(x) if math.isfinite(x) else None for x in a]

        return {
            "Y_comm": _json_float(self.Y_comm),
            "Y_comp": _json_float(self.Y_comp),
            "Y_total": _json_float(self.Y_total),
            "T_total": _json_float(self.T_total),
            "E_total": _json_float(self.E_total),
            "infeasible": self.infeasible,
            "tasks": {
                "comm_time": fl(self.comm_time), "comm_energy": fl(self.comm_energy),
                "comm_overhead": fl(self.comm_overhead), "comp_time": fl(self.comp_time),
                "comp_energy": fl(self.comp_energy), "comp_overhead": fl(self.comp_overhead),
            },
        }

    @classmethod
    def from_dict(cls, d):
        t = d["tasks"]

        def arr(name):
            return np.array([math.inf if x is None else x for x in t[name]], dtype=float)

        return cls(*(arr(n) for n in ("comm_time", "comm_energy", "comm_overhead",
                                      "comp_time", "comp_energy", "comp_overhead")))

    def csv_row(self, scenario_id, solver):
        row = {"scenario_id": scenario_id, "solver": solver, "Y_comm": self.Y_comm,
               "Y_comp": self.Y_comp, "Y_total": self.Y_total}
        for k in range(len(self.comm_overhead)):
            row[f"y_comm_{k}"] = float(self.comm_overhead[k])
            row[f"y_comp_{k}"] = float(self.comp_overhead[k])
        return row


def _json_float(x):
    return float(x) if math.isfinite(x) else None


def total_overhead(alloc, beams, scenario, channels=None):
    """Per-task and network-total overhead (local tasks have zero comm terms)."""
    channels = scenario.channels if channels is None else channels
    K = alloc.K
    comm = np.zeros((3, K))
    comp = np.zeros((3, K))
    sinrs = stream_sinrs(alloc, beams.f, beams.z, channels, scenario.noise_power)
    W = scenario.params.bandwidth
    Pc = scenario.params.circuit_power
    for k in range(K):
        kp = alloc.target[k]
        c = comp_overhead(k, kp, alloc.cpu[k], scenario)
        comp[:, k] = (c.T, c.E, c.Y)
        if kp != k:
            r = W * math.log1p(sinrs[k]) / math.log(2)
            p = float(np.vdot(beams.f[k], beams.f[k]).real)
            t = comm_term(scenario.task_sizes[k], r, p, Pc, scenario.beta[k])
            comm[:, k] = (t.T, t.E, t.Y)
    return OverheadReport(comm[0], comm[1], comm[2], comp[0], comp[1], comp[2])


def write_report_csv(rows, fh=None):
    """Write report rows (dicts) as CSV; returns the text when ``fh`` is None."""
    out = fh or io.StringIO()
    if rows:
        fieldnames = list(rows[0])
        for r in rows[1:]:
            for key in r:
                if key not in fieldnames:
                    fieldnames.append(key)
        w = csv.DictWriter(out, fieldnames=fieldnames)
        w.writeheader()
        w.writerows(rows)
    return out.getvalue() if fh is None else None
