"""Greedy task assignment, subchannel and CPU allocation.

Starting with every node undecided, the allocator repeatedly commits the
(transmitter, receiver, subchannel) triple whose offloading most reduces
the network overhead, until no triple reduces it any further.  Undecided
nodes then process their own tasks.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .cpu_alloc import ALLOCATORS, CpuSubproblem
from .overhead import LOCAL, AllocationState


class CpuCache:
    """Memoized per-receiver CPU allocations keyed by the set of tasks."""

    def __init__(self, scenario, mode="optimal"):
        if mode not in ALLOCATORS:
            raise ValueError(f"unknown CPU mode {mode!r}")
        self.scenario = scenario
        self.mode = mode
        self._solve = ALLOCATORS[mode]
        self._memo = {}

    def solve(self, node, tasks):
        key = (int(node), tuple(sorted(int(t) for t in tasks)))
        hit = self._memo.get(key)
        if hit is None:
            sc = self.scenario
            idx = np.array(key[1])
            sub = CpuSubproblem(
                capacity=sc.cpus[node], kappa=sc.kappa[node], betas=sc.beta[idx],
                densities=sc.density[idx], sizes=sc.task_sizes[idx], task_ids=key[1], receiver=key[0],
            )
            hit = self._solve(sub)
            self._memo[key] = hit
        return hit

    def cost(self, node, tasks):
        return self.solve(node, tasks).objective

    def frequencies(self, target):
        """CPU share of every task for the assignment ``target``."""
        target = np.asarray(target)
        cpu = np.zeros(len(target))
        for node in np.unique(target):
            tasks = np.flatnonzero(target == node)
            cpu[tasks] = self.solve(node, tasks).freqs
        return cpu


@dataclass
class GreedyState:
    """Committed decisions of a greedy pass.

    ``assignment`` maps task -> processing node for committed tasks (both
    offloaded tasks and the receivers' own tasks); ``subchannel`` maps
    committed transmitters to their subchannel; ``pool`` is the set of
    nodes that may still start a transmission.
    """

    K: int
    S: int
    pool: set = field(default_factory=set)
    assignment: dict = field(default_factory=dict)
    subchannel: dict = field(default_factory=dict)

    @classmethod
    def fresh(cls, K, S):
        return cls(K, S, set(range(K)))

    def is_transmitter(self, k):
        return self.assignment.get(k, k) != k

    def commit(self, k, kp, i):
        self.assignment[k] = kp
        self.assignment[kp] = kp
        self.subchannel[k] = i
        self.pool.discard(k)
        self.pool.discard(kp)

    def receiver_busy(self, kp, i):
        return any(self.assignment[l] == kp and s == i for l, s in self.subchannel.items())

    def tasks_at(self, node):
        return sorted(t for t, n in self.assignment.items() if n == node)

    def copy(self):
        return GreedyState(self.K, self.S, set(self.pool), dict(self.assignment), dict(self.subchannel))


def feasible_candidates(state, S=None):
    """All (k, kp, i) that can be committed next, in lexicographic order."""
    S = state.S if S is None else S
    out = []
    for k in sorted(state.pool):
        for kp in range(state.K):
            if kp == k or state.is_transmitter(kp):
                continue
            for i in range(S):
                if not state.receiver_busy(kp, i):
                    out.append((k, kp, i))
    return out


def _comm_overheads(streams, f, scenario, channels):
    """Y_comm of each (tx, rx, i) stream with MMSE combiners."""
    N = scenario.N
    out = {}
    for (k, kp, i) in streams:
        Q = scenario.noise_power * np.eye(N, dtype=complex)
        for (l, _, il) in streams:
            if il == i and l != k:
                y = channels[l, kp, i] @ f[l]
                Q += np.outer(y, y.conj())
        s = channels[k, kp, i] @ f[k]
        snr = float(np.vdot(s, np.linalg.solve(Q, s)).real)
        rate = scenario.params.bandwidth * math.log1p(snr) / math.log(2)
        p = float(np.vdot(f[k], f[k]).real)
        beta = scenario.beta[k]
        g = 1.0 - beta + beta * p + beta * scenario.params.circuit_power
        out[k] = g * scenario.task_sizes[k] / rate if rate > 0 else math.inf
    return out


def partial_overhead(assignment, subchannel, f, scenario, cpu, channels=None):
    """Overhead of the committed part of a greedy state: (Y_comm, Y_comp)."""
    channels = scenario.channels if channels is None else channels
    streams = [(k, assignment[k], i) for k, i in subchannel.items()]
    y_comm = sum(_comm_overheads(streams, f, scenario, channels).values())
    y_comp = 0.0
    for node in set(assignment.values()):
        y_comp += cpu.cost(node, [t for t, n in assignment.items() if n == node])
    return y_comm, y_comp


def offloading_benefit(state, candidate, scenario, f, cpu=None, channels=None):
    """Overhead reduction from committing ``candidate`` instead of processing both nodes locally."""
    cpu = cpu or CpuCache(scenario)
    k, kp, i = candidate
    loc = dict(state.assignment)
    loc[k], loc[kp] = k, kp
    off = dict(state.assignment)
    off[k], off[kp] = kp, kp
    sub_off = dict(state.subchannel)
    sub_off[k] = i
    y_loc = sum(partial_overhead(loc, state.subchannel, f, scenario, cpu, channels))
    y_off = sum(partial_overhead(off, sub_off, f, scenario, cpu, channels))
    if math.isinf(y_off):
        return -math.inf
    return y_loc - y_off


class GreedyAllocator:
    """Vectorized greedy pass.

    The benefit of every candidate splits into a CPU part that depends on
    (k, kp) only, the communication overhead of the new stream, and the
    extra overhead the new transmitter inflicts on committed streams of
    subchannel i (a rank-one update of each victim's interference
    covariance).  Only these terms differ between the two total overheads,
    so the result equals :func:`offloading_benefit` up to round-off.
    """

    def __init__(self, scenario, f, cpu=None, channels=None):
        sc = self.sc = scenario
        K, S, N = sc.K, sc.S, sc.N
        channels = sc.channels if channels is None else channels
        f = np.asarray(f, dtype=complex)
        self.cpu = cpu or CpuCache(scenario)
        self.evaluations = 0
        self.trace = []
        self.Hf = np.einsum("krsab,kb->krsa", channels, f)          # H_{k,r,i} f_k
        beta = sc.beta
        g = 1.0 - beta + beta * np.sum(np.abs(f) ** 2, axis=1) + beta * sc.params.circuit_power
        self.coef = g * sc.task_sizes / sc.params.bandwidth          # Y = coef / log2(1 + SINR)
        self.noise_eye = sc.noise_power * np.eye(N)
        self.state = GreedyState.fresh(K, S)
        self.local = np.array([self.cpu.cost(k, [k]) for k in range(K)])
        self.in_pool = np.ones(K, bool)
        self.is_tx = np.zeros(K, bool)
        self.used = np.zeros((K, S), bool)
        self.Qinv = np.broadcast_to(np.eye(N) / sc.noise_power, (K, S, N, N)).astype(complex)
        self.streams = []
        self._victims()
        self.cpu_gain = np.full((K, K), -np.inf)
        for kp in range(K):
            self.cpu_gain[:, kp] = self._cpu_gain_column(kp)

    @staticmethod
    def _overhead(coef, snr):
        with np.errstate(divide="ignore"):
            return coef * np.log(2) / np.log1p(np.maximum(snr, 0.0))

    def _cpu_gain_column(self, kp):
        base = self.state.tasks_at(kp) or [kp]
        before = self.cpu.cost(kp, base)
        col = np.full(self.sc.K, -np.inf)
        for k in np.flatnonzero(self.in_pool):
            if k != kp:
                col[k] = self.local[k] + before - self.cpu.cost(kp, base + [int(k)])
        return col

    def _victims(self):
        """Interference-plus-noise inverses, SINRs and overheads of committed streams."""
        N, Hf = self.sc.N, self.Hf
        M = len(self.streams)
        cov = self.noise_eye + np.zeros((M, N, N), complex)
        for m, (t, r, i) in enumerate(self.streams):
            for l, _, il in self.streams:
                if il == i and l != t:
                    y = Hf[l, r, i]
                    cov[m] += np.outer(y, y.conj())
        idx = np.array(self.streams, dtype=int).reshape(M, 3)
        self.v_tx, self.v_rx, self.v_sub = idx[:, 0], idx[:, 1], idx[:, 2]
        self.v_inv = np.linalg.inv(cov) if M else cov
        sig = Hf[self.v_tx, self.v_rx, self.v_sub]
        self.v_snr = np.einsum("ma,mab,mb->m", sig.conj(), self.v_inv, sig).real
        self.v_y = self._overhead(self.coef[self.v_tx], self.v_snr)

    def candidate_mask(self):
        K = self.sc.K
        mask = self.in_pool[:, None, None] & ~self.is_tx[None, :, None] & ~self.used[None, :, :]
        mask &= ~np.eye(K, dtype=bool)[:, :, None]
        return mask

    def benefits(self):
        """Benefit of every (k, kp, i); -inf where the candidate is not allowed."""
        K, S = self.sc.K, self.sc.S
        mask = self.candidate_mask()
        full = np.full((K, K, S), -np.inf)
        pool = np.flatnonzero(self.in_pool)
        if not mask.any():
            return full
        Hf = self.Hf
        s = Hf[pool]
        snr_new = np.einsum("prsa,rsab,prsb->prs", s.conj(), self.Qinv, s).real
        y_new = self._overhead(self.coef[pool, None, None], snr_new)
        harm = np.zeros((len(pool), S))
        if self.streams:
            sig = Hf[self.v_tx, self.v_rx, self.v_sub]
            v = Hf[pool][:, self.v_rx, self.v_sub]
            a = np.einsum("ma,pma->pm", np.einsum("mab,mb->ma", self.v_inv, sig).conj(), v)
            b = np.einsum("pma,mab,pmb->pm", v.conj(), self.v_inv, v).real
            snr_hit = self.v_snr[None, :] - np.abs(a) ** 2 / (1.0 + b)
            dy = self._overhead(self.coef[self.v_tx][None, :], snr_hit) - self.v_y[None, :]
            np.add.at(harm.T, self.v_sub, dy.T)
        eta = self.cpu_gain[pool][:, :, None] - y_new - harm[:, None, :]
        full[pool] = np.where(mask[pool], eta, -np.inf)
        return full

    def commit(self, k, kp, i):
        self.state.commit(k, kp, i)
        self.in_pool[[k, kp]] = False
        self.is_tx[k] = True
        self.used[kp, i] = True
        self.streams.append((k, kp, i))
        Hf = self.Hf
        cov = self.noise_eye + sum(
            np.einsum("ra,rb->rab", Hf[l, :, i], Hf[l, :, i].conj()) for l, _, il in self.streams if il == i
        )
        self.Qinv = self.Qinv.copy()
        self.Qinv[:, i] = np.linalg.inv(cov)
        self._victims()
        self.cpu_gain[:, kp] = self._cpu_gain_column(kp)
        self.cpu_gain[[k, kp], :] = -np.inf

    def totals(self):
        st = self.state
        y_comm = float(np.sum(self.v_y))
        y_comp = sum(self.cpu.cost(r, st.tasks_at(r)) for r in set(st.assignment.values()))
        y_comp += float(sum(self.local[n] for n in range(self.sc.K) if n not in st.assignment))
        return y_comm, y_comp

    def run(self):
        K, S = self.sc.K, self.sc.S
        while True:
            n_cand = int(self.candidate_mask().sum())
            if n_cand == 0:
                break
            self.evaluations += n_cand
            full = self.benefits()
            flat = int(np.argmax(full))
            best = float(full.flat[flat])
            if not best > 0:
                break
            k, kp, i = (int(x) for x in np.unravel_index(flat, full.shape))
            self.commit(k, kp, i)
            y_comm, y_comp = self.totals()
            self.trace.append({"iteration": len(self.trace) + 1, "k": k, "kp": kp, "i": i, "eta": best,
                               "Y_comm": y_comm, "Y_comp": y_comp, "Y_total": y_comm + y_comp})
        return self.allocation()

    def allocation(self):
        K = self.sc.K
        target = np.arange(K)
        sub = np.full(K, LOCAL)
        for t, r in self.state.assignment.items():
            target[t] = r
        for t, i in self.state.subchannel.items():
            sub[t] = i
        return AllocationState(target, sub, self.cpu.frequencies(target), self.sc.S)


def greedy_allocate(scenario, beams, cpu_mode="optimal", cpu=None, channels=None, stats=None):
    """Greedy allocation under fixed beamformers (``beams`` is a state or a K x N array)."""
    f = getattr(beams, "f", beams)
    g = GreedyAllocator(scenario, f, cpu or CpuCache(scenario, cpu_mode), channels)
    alloc = g.run()
    if stats is not None:
        stats["evaluations"] = stats.get("evaluations", 0) + g.evaluations
        stats.setdefault("trace", []).extend(g.trace)
    return alloc


def work_bound(K, S):
    """Upper bound on candidate evaluations of one greedy pass."""
    return (K - 1) * K * (K + 1) * S // 2
