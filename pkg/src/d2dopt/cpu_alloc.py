"""Per-receiver CPU frequency allocation.

Each receiver splits its capacity among the tasks it processes so as to
minimize ``sum_k ((1 - b_k) / F_k + b_k kappa F_k^2) mu_k I_k`` subject to
``sum_k F_k <= capacity`` and ``F_k >= F_MIN``.
"""

import math
from dataclasses import dataclass

import numpy as np

from .errors import InfeasibleError, InvalidParameterError

F_MIN = 1e3
SUM_RTOL = 1e-8


@dataclass(frozen=True)
class CpuSubproblem:
    capacity: float
    kappa: float
    betas: np.ndarray
    densities: np.ndarray
    sizes: np.ndarray
    task_ids: tuple = ()
    receiver: int = -1

    def __post_init__(self):
        for name in ("betas", "densities", "sizes"):
            object.__setattr__(self, name, np.atleast_1d(np.asarray(getattr(self, name), dtype=float)))
        n = len(self.betas)
        if n == 0 or len(self.densities) != n or len(self.sizes) != n:
            raise InvalidParameterError("task arrays must be non-empty and of equal length")
        if not self.capacity > 0 or not self.kappa > 0:
            raise InvalidParameterError("capacity and kappa must be positive")
        if np.any((self.betas < 0) | (self.betas > 1)):
            raise InvalidParameterError("beta must lie in [0, 1]")
        if not self.task_ids:
            object.__setattr__(self, "task_ids", tuple(range(n)))

    @property
    def cycles(self):
        return self.densities * self.sizes

    @property
    def cubic_coeff(self):
        return 2.0 * self.betas * self.kappa * self.cycles

    @property
    def constant_coeff(self):
        return (1.0 - self.betas) * self.cycles


@dataclass(frozen=True)
class CpuAllocation:
    freqs: np.ndarray
    multiplier: float
    objective: float


def unconstrained_cpu_min(beta, kappa):
    """Minimizer of ``(1 - beta) / F + beta kappa F^2`` over F > 0."""
    if not 0.0 < beta < 1.0 or not kappa > 0:
        raise InvalidParameterError("requires 0 < beta < 1 and kappa > 0")
    return ((1.0 - beta) / (2.0 * beta * kappa)) ** (1.0 / 3.0)


def cpu_objective(sub, freqs):
    freqs = np.asarray(freqs, dtype=float)
    with np.errstate(divide="ignore"):
        per = ((1.0 - sub.betas) / freqs + sub.betas * sub.kappa * freqs**2) * sub.cycles
    return float(np.sum(per))


def _free_minimizers(sub):
    """Per-task minimizer without the capacity constraint (inf when none exists)."""
    b = sub.betas
    out = np.full(len(b), np.inf)
    mid = (b > 0) & (b < 1)
    with np.errstate(divide="ignore", over="ignore"):
        out[mid] = ((1.0 - b[mid]) / (2.0 * b[mid] * sub.kappa)) ** (1.0 / 3.0)
    out[b >= 1] = F_MIN
    return np.maximum(out, F_MIN)


def cubic_root(a, b, nu, iters=60):
    """Positive root of ``a F^3 + nu F^2 - b = 0`` (0 when b = 0).

    Since ``a F^3 + nu F^2`` lies between ``max`` and ``2 max`` of its two
    terms, the root is bracketed within a factor of about 1.4.  Newton runs
    from the right end of that bracket, which converges monotonically on
    this convex increasing function; a bisection step replaces any iterate
    that leaves the bracket.
    """
    if b <= 0:
        return 0.0
    hi = min((b / a) ** (1.0 / 3.0) if a > 0 else math.inf, math.sqrt(b / nu) if nu > 0 else math.inf)
    if not math.isfinite(hi):
        return math.inf
    lo = min((0.5 * b / a) ** (1.0 / 3.0) if a > 0 else math.inf, math.sqrt(0.5 * b / nu) if nu > 0 else math.inf)
    x = hi
    for _ in range(iters):
        h = (a * x + nu) * x * x - b
        if h == 0:
            return x
        if h > 0:
            hi = x
        else:
            lo = x
        step = x - h / ((3.0 * a * x + 2.0 * nu) * x)
        if not lo < step < hi:
            step = 0.5 * (lo + hi)
        if abs(step - x) <= 1e-14 * x:
            return step
        x = step
    return x


def cubic_roots(a, b, nu):
    return np.array([cubic_root(ai, bi, nu) for ai, bi in zip(np.asarray(a, float), np.asarray(b, float))])


def _freqs_at(sub, nu):
    return np.maximum(cubic_roots(sub.cubic_coeff, sub.constant_coeff, nu), F_MIN)


def optimal_cpu_allocation(sub, rtol=1e-12, max_iter=200):
    """Exact minimizer via the capacity multiplier.

    If the per-task free minimizers fit, they are returned with multiplier
    0.  Otherwise the multiplier ``nu > 0`` is located on a bracket by
    Newton steps with bisection fallback until the frequencies sum to the
    capacity.
    """
    n = len(sub.betas)
    cap = float(sub.capacity)
    if cap < n * F_MIN * (1 - SUM_RTOL):
        raise InfeasibleError(f"capacity {cap:g} Hz cannot give {n} tasks the {F_MIN:g} Hz floor")
    free = _free_minimizers(sub)
    if np.all(np.isfinite(free)) and free.sum() <= cap:
        return CpuAllocation(free, 0.0, cpu_objective(sub, free))

    a, b = sub.cubic_coeff, sub.constant_coeff
    lo = 0.0
    hi = float(np.max((b - a * F_MIN**3) / F_MIN**2))
    if hi <= 0:
        freqs = np.full(n, F_MIN)
        return CpuAllocation(freqs, 0.0, cpu_objective(sub, freqs))
    # exact when every beta is 0; otherwise a good starting point
    nu = min(hi, (np.sum(np.sqrt(b)) / cap) ** 2)
    if nu <= 0:
        nu = hi
    for _ in range(max_iter):
        freqs = _freqs_at(sub, nu)
        gap = freqs.sum() - cap
        if abs(gap) <= rtol * cap:
            break
        if gap > 0:
            lo = nu
        else:
            hi = nu
        above = freqs > F_MIN
        slope = -np.sum(freqs[above] / (1.5 * a[above] * freqs[above] + nu)) / 2.0
        cand = nu - gap / slope if slope < 0 else np.nan
        if not np.isfinite(cand) or cand <= lo or cand >= hi:
            cand = np.sqrt(lo * hi) if lo > 0 and hi / lo > 4 else 0.5 * (lo + hi)
        if cand == nu:
            break
        nu = cand
    freqs = _freqs_at(sub, nu)
    if freqs.sum() > cap * (1 + SUM_RTOL):
        nu = hi
        freqs = _freqs_at(sub, nu)
    return CpuAllocation(freqs, float(nu), cpu_objective(sub, freqs))


def equal_cpu_allocation(sub):
    n = len(sub.betas)
    if sub.capacity / n < F_MIN:
        raise InfeasibleError(f"capacity {sub.capacity:g} Hz cannot give {n} tasks the {F_MIN:g} Hz floor")
    freqs = np.full(n, sub.capacity / n)
    return CpuAllocation(freqs, float("nan"), cpu_objective(sub, freqs))


def kkt_residuals(sub, alloc):
    """Stationarity residual ``-(1-b) mu I / F^2 + 2 b kappa mu I F + nu`` per task."""
    F = alloc.freqs
    return -sub.constant_coeff / F**2 + sub.cubic_coeff * F + alloc.multiplier


ALLOCATORS = {"optimal": optimal_cpu_allocation, "equal": equal_cpu_allocation}
