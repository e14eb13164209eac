"""Minimum communication overhead beamforming.

For a fixed topology and subchannel allocation, MCOB minimizes the total
communication overhead ``sum_k I_k g_k(f_k) / R_k`` over the transmit
beamformers.  The rate is replaced by its weighted-MSE surrogate ``u_k``
and the ratios are handled through the fractional-programming multipliers
``lambda_k = I_k / u_k`` and ``gamma_k = g_k / u_k``.  Each iteration
solves one closed-form QCQP per beamformer, then refreshes the MMSE
combiners, the MSE weights and the multipliers.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidParameterError, InvalidStateError
from .overhead import BeamformingState

LN2 = math.log(2.0)
U_FLOOR = 1e-12
REG_EPS = 1e-12


def _co_channel(alloc, i):
    return np.flatnonzero(alloc.subchannel == i)


def mmse_combiner(k, alloc, beams, channels, noise_power):
    """``J^-1 H f_k`` with J the received covariance on k's subchannel."""
    if not noise_power > 0:
        raise InvalidParameterError("MMSE combiner needs a positive noise power")
    kp, i = alloc.target[k], alloc.subchannel[k]
    if kp == k:
        raise InvalidStateError(f"node {k} does not transmit")
    N = beams.f.shape[1]
    J = noise_power * np.eye(N, dtype=complex)
    for l in _co_channel(alloc, i):
        y = channels[l, kp, i] @ beams.f[l]
        J += np.outer(y, y.conj())
    return np.linalg.solve(J, channels[k, kp, i] @ beams.f[k])


def mse(k, alloc, beams, channels, noise_power):
    """Mean-square error of stream k under the combiner stored in ``beams``."""
    kp, i = alloc.target[k], alloc.subchannel[k]
    z = beams.z[kp, i]
    e = abs(1.0 - np.vdot(z, channels[k, kp, i] @ beams.f[k])) ** 2
    for l in _co_channel(alloc, i):
        if l != k:
            e += abs(np.vdot(z, channels[l, kp, i] @ beams.f[l])) ** 2
    return float(e + noise_power * np.vdot(z, z).real)


def mse_complement(k, alloc, beams, channels, noise_power):
    """``1 - mse`` without the cancellation of forming it from ``mse``.

    For a weak stream the MSE rounds to nearly 1; use
    ``-log1p(-mse_complement)`` for its logarithm.
    """
    kp, i = alloc.target[k], alloc.subchannel[k]
    z = beams.z[kp, i]
    a = np.vdot(z, channels[k, kp, i] @ beams.f[k])
    c = 2.0 * a.real - abs(a) ** 2 - noise_power * np.vdot(z, z).real
    for l in _co_channel(alloc, i):
        if l != k:
            c -= abs(np.vdot(z, channels[l, kp, i] @ beams.f[l])) ** 2
    return float(c)


def mmse_combiners(alloc, f, channels, noise_power):
    """MMSE combiners for every stream, indexed ``z[receiver, subchannel]``."""
    K, S = alloc.K, alloc.S
    N = f.shape[1]
    z = np.zeros((K, S, N), dtype=complex)
    eye = np.eye(N)
    for i in range(S):
        tx = _co_channel(alloc, i)
        if len(tx) == 0:
            continue
        rx = alloc.target[tx]
        y = np.einsum("mlab,lb->mla", channels[tx[None, :], rx[:, None], i], f[tx])
        J = noise_power * eye + np.einsum("mla,mlb->mab", y, y.conj())
        s = y[np.arange(len(tx)), np.arange(len(tx))]
        z[rx, i] = np.linalg.solve(J, s[..., None])[..., 0]
    return z


def surrogate_u(e_mse, w, W):
    """Weighted-MSE rate surrogate ``(W / ln 2)(-e/w - ln w + 1)``."""
    if not (np.all(np.asarray(w) > 0) and np.all(np.asarray(e_mse) > 0)):
        raise InvalidParameterError("surrogate needs positive e_mse and w")
    return (W / LN2) * (-np.asarray(e_mse) / w - np.log(w) + 1.0)


def overhead_weight(f, beta, circuit_power):
    """``g = 1 - beta + beta ||f||^2 + beta P_c``."""
    p = np.sum(np.abs(np.atleast_2d(f)) ** 2, axis=-1)
    g = 1.0 - beta + beta * p + beta * circuit_power
    return g if np.ndim(f) > 1 else float(g[0])


def update_multipliers(u, f, beta, circuit_power, size):
    if not u > 0:
        raise InvalidParameterError("multipliers need u > 0")
    g = overhead_weight(f, beta, circuit_power)
    return size / u, g / u


@dataclass
class BeamformerSubproblem:
    """``min  shift ||f||^2 - 2 coeff Re[v^H f] + f^H Sigma f  s.t. ||f||^2 <= power``.

    ``shift`` is ``lambda beta``; ``coeff`` is ``lambda gamma / w`` (times
    ``W / ln 2``).  The eigendecomposition of ``Sigma + shift I`` is cached.
    """

    sigma: np.ndarray
    shift: float
    coeff: float
    power: float
    nu: float = 0.0
    eigvals: np.ndarray = None
    eigvecs: np.ndarray = None
    regularized: bool = False

    def __post_init__(self):
        self.sigma = np.asarray(self.sigma, dtype=complex)
        if self.shift < 0 or self.power <= 0:
            raise InvalidParameterError("shift must be >= 0 and power > 0")
        herm = 0.5 * (self.sigma + self.sigma.conj().T)
        if np.max(np.abs(herm - self.sigma)) > 1e-10 * max(1.0, np.max(np.abs(self.sigma))):
            raise InvalidParameterError("Sigma must be Hermitian")
        N = herm.shape[0]
        lam, vec = np.linalg.eigh(herm + self.shift * np.eye(N))
        self.eigvals, self.eigvecs = lam, vec

    def objective(self, f, v):
        f = np.asarray(f)
        return float(
            self.shift * np.vdot(f, f).real
            - 2.0 * self.coeff * np.vdot(v, f).real
            + np.vdot(f, self.sigma @ f).real
        )

    def power_at(self, v, nu):
        """``||f(nu)||^2 = coeff^2 sum_m |Phi_m|^2 / (Lambda_m + nu)^2``."""
        phi2 = np.abs(self.eigvecs.conj().T @ v) ** 2
        return float(self.coeff**2 * np.sum(phi2 / (self.eigvals + nu) ** 2))


def _solve_qcqp_batch(sigma, shift, coeff, rhs, power, rtol=1e-10, max_iter=200):
    """Closed-form KKT solution of a batch of beamformer QCQPs.

    Returns ``(f, nu, regularized)``.  The power dual is found on a bracket
    ``[0, nu_hi]`` by Newton steps on ``1/sqrt(power(nu))`` (nearly linear
    in nu) with bisection fallback, then taken from the feasible side.
    """
    M, N, _ = sigma.shape
    herm = 0.5 * (sigma + np.conj(np.swapaxes(sigma, -1, -2)))
    lam, vec = np.linalg.eigh(herm + shift[:, None, None] * np.eye(N))
    phi2 = np.abs(np.einsum("mba,mb->ma", vec.conj(), rhs)) ** 2
    scale = np.maximum(lam[:, -1], 1.0)
    tiny = lam <= REG_EPS * scale[:, None]
    regularized = tiny.any(axis=1)
    if regularized.any():
        # rhs lies in the range of Sigma; components along numerically null
        # directions are round-off and are dropped.
        lam = np.where(tiny, REG_EPS * scale[:, None], lam)
        phi2 = np.where(tiny, 0.0, phi2)
    c2 = coeff**2

    def pw(nu):
        return c2 * np.sum(phi2 / (lam + nu[:, None]) ** 2, axis=1)

    nu = np.zeros(M)
    p0 = pw(nu)
    need = p0 > power
    if need.any():
        idx = np.flatnonzero(need)
        lo = np.zeros(len(idx))
        hi = np.maximum(coeff[idx] * np.sqrt(phi2[idx].sum(axis=1) / power[idx]) - lam[idx, 0], 0.0)
        lam_i, phi_i, c2_i, P_i = lam[idx], phi2[idx], c2[idx], power[idx]
        x = hi.copy()
        target = 1.0 / np.sqrt(P_i)
        for _ in range(max_iter):
            d = lam_i + x[:, None]
            p = c2_i * np.sum(phi_i / d**2, axis=1)
            done = np.abs(p - P_i) <= rtol * P_i
            if done.all():
                break
            over = p > P_i
            lo = np.where(over, x, lo)
            hi = np.where(over, hi, x)
            dp = -2.0 * c2_i * np.sum(phi_i / d**3, axis=1)
            g = 1.0 / np.sqrt(p) - target
            dg = -0.5 * p**-1.5 * dp
            with np.errstate(divide="ignore", invalid="ignore"):
                step = x - g / dg
            bad = ~np.isfinite(step) | (step <= lo) | (step >= hi)
            x = np.where(done, x, np.where(bad, 0.5 * (lo + hi), step))
        p = c2_i * np.sum(phi_i / (lam_i + x[:, None]) ** 2, axis=1)
        x = np.where(p > P_i * (1.0 + 1e-10), hi, x)
        nu[idx] = x
    d = lam + nu[:, None]
    proj = np.einsum("mba,mb->ma", vec.conj(), rhs)
    f = coeff[:, None] * np.einsum("mab,mb->ma", vec, proj / d * ~tiny)
    return f, nu, regularized


def solve_beamformer_qcqp(sub, rhs):
    """Minimizer of the beamformer subproblem for ``v = H^H z = rhs``."""
    rhs = np.asarray(rhs, dtype=complex)
    f, nu, reg = _solve_qcqp_batch(
        sub.sigma[None], np.array([sub.shift]), np.array([sub.coeff]), rhs[None], np.array([sub.power])
    )
    sub.nu = float(nu[0])
    sub.regularized = bool(reg[0])
    return f[0]


@dataclass
class ConvergenceTrace:
    """Per-iteration objective and multiplier error of one MCOB run.

    ``rho[0]`` is the objective at the initial beamformers; ``rho[j]`` and
    ``zeta[j - 1]`` belong to iteration ``j``.  ``surrogate`` holds the
    value of the fixed-multiplier problem (before the multiplier refresh).
    """

    rho: list = field(default_factory=list)
    zeta: list = field(default_factory=list)
    surrogate: list = field(default_factory=list)
    iterations: int = 0
    terminated_by: str = "tolerance"
    warnings: list = field(default_factory=list)

    def to_csv(self):
        lines = ["iteration,rho,zeta,surrogate"]
        if self.rho:
            lines.append(f"0,{self.rho[0]!r},,")
        for j in range(self.iterations):
            lines.append(f"{j + 1},{self.rho[j + 1]!r},{self.zeta[j]!r},{self.surrogate[j]!r}")
        return "\n".join(lines) + "\n"

    def warn(self, msg):
        if msg not in self.warnings:
            self.warnings.append(msg)


class _Streams:
    """Precomputed channel blocks for the active streams of an allocation."""

    def __init__(self, alloc, scenario, channels, beta):
        tx, rx, sub = alloc.streams()
        self.tx, self.rx, self.sub = tx, rx, sub
        M = len(tx)
        self.M = M
        same = (sub[:, None] == sub[None, :])[..., None, None]
        # G[m, l]: channel from the transmitter of stream l to the receiver of m
        self.G = channels[tx[None, :], rx[:, None], sub[:, None]] * same
        self.GH = np.conj(np.swapaxes(self.G, -1, -2))
        self.size = scenario.task_sizes[tx]
        self.beta = np.asarray(beta)[tx]
        self.power = scenario.power[tx]
        self.W = scenario.params.bandwidth
        self.Pc = scenario.params.circuit_power
        self.noise = scenario.noise_power
        self.N = scenario.N
        self.diag = np.arange(M)
        self.noise_eye = self.noise * np.eye(self.N)

    def state(self, F):
        """MMSE combiners, MSEs, surrogate rates, weights and objective at ``F``.

        With the MMSE combiner the MSE reduces to ``1 - Re(s^H z)``.
        """
        y = np.matmul(self.G, F[None, :, :, None])[..., 0]
        J = self.noise_eye + np.matmul(np.swapaxes(y, 1, 2), y.conj())
        s = y[self.diag, self.diag]
        z = np.linalg.solve(J, s[..., None])[..., 0]
        e = 1.0 - np.einsum("ma,ma->m", s.conj(), z).real
        g = 1.0 - self.beta + self.beta * np.sum(np.abs(F) ** 2, axis=1) + self.beta * self.Pc
        with np.errstate(divide="ignore"):
            u = -(self.W / LN2) * np.log(e)
            rho = float(np.sum(np.where(u > 0, self.size * g / np.where(u > 0, u, 1.0), np.inf)))
        return z, e, u, g, rho

    def quadratic_terms(self, z, coeff):
        q = np.einsum("mlab,mb->mla", self.GH, z)               # G[m,l]^H z_m
        sigma = np.einsum("m,mla,mlb->lab", coeff, q, q.conj())
        rhs = q[self.diag, self.diag]
        return sigma, rhs


def mcob(alloc, scenario, f_init, channels=None, max_iters=200, eps=1e-4, beta=None,
         accelerate=True, max_stretch=64.0, power_rtol=1e-6):
    """Run MCOB for the streams of ``alloc``.

    ``f_init`` is a K x N array; rows of active transmitters must carry full
    power.  ``beta`` overrides the overhead factors used inside the
    surrogate (all zeros gives the time-minimizing WMMSE special case).

    The objective tracked as ``rho`` is ``sum_k I_k g_k / u_k`` at the
    current (f, z, w).  A beamformer update is accepted only if it does not
    increase it; otherwise the step toward the QCQP solution is halved
    (the surrogate's gradient matches the objective's at the current point,
    so a short enough step always descends).  With ``accelerate`` the
    accepted step is also stretched along the update direction and along
    the previous iteration's displacement for as long as the objective
    keeps falling.  Fixed points are unchanged; the plain iteration
    converges like a power iteration on the channel and is often too slow
    for ``eps`` within ``max_iters``.
    """
    if eps <= 0:
        raise InvalidParameterError("eps must be positive")
    channels = scenario.channels if channels is None else channels
    beta = scenario.beta if beta is None else np.broadcast_to(np.asarray(beta, float), (scenario.K,))
    f_all = np.array(f_init, dtype=complex)
    K, N, S = scenario.K, scenario.N, scenario.S
    trace = ConvergenceTrace()
    st = _Streams(alloc, scenario, channels, beta)
    out = BeamformingState(f_all.copy(), np.zeros((K, S, N), complex))
    if st.M == 0:
        return out, trace

    F = f_all[st.tx].copy()
    pw = np.sum(np.abs(F) ** 2, axis=1)
    if np.any(np.abs(pw - st.power) > power_rtol * st.power):
        raise InvalidParameterError("initial beamformers of active transmitters must use full power")

    cur = st.state(F)
    z, e, u, g, rho = cur
    w = e.copy()
    lam, gam = _multipliers(st, u, g, trace)
    trace.rho.append(rho)
    trace.terminated_by = "max-iterations"
    F_prev = None
    for j in range(1, max_iters + 1):
        coeff = lam * gam * (st.W / LN2) / w
        sigma, rhs = st.quadratic_terms(z, coeff)
        F_cand, _, reg = _solve_qcqp_batch(sigma, lam * st.beta, coeff, rhs, st.power)
        if reg.any():
            trace.warn("singular beamformer subproblem regularized")
        F_new, new = F_cand, st.state(F_cand)
        if np.isfinite(rho) and not new[4] <= rho:
            F_new, new = _backtrack(st, F, F_cand, cur)
            if F_new is F:
                trace.warn("no descent step found; beamformers kept")
        elif accelerate and np.isfinite(new[4]):
            F_new, new = _stretch(st, F, F_cand - F, 1.0, max_stretch, F_new, new)
        if accelerate and F_prev is not None and np.isfinite(new[4]):
            F_new, new = _stretch(st, F_new, F_new - F_prev, 0.5, max_stretch, F_new, new)
        F_prev, F, cur = F, F_new, new
        z, e, u_new, g_new, rho_new = cur
        w = e.copy()
        surrogate = float(np.sum(lam * (g_new - gam * u_new)))
        lam_new, gam_new = _multipliers(st, u_new, g_new, trace)
        zeta = float(np.sum((lam_new - lam) ** 2 + (gam_new - gam) ** 2))
        trace.surrogate.append(surrogate)
        trace.zeta.append(zeta)
        trace.rho.append(rho_new)
        trace.iterations = j
        drho = abs(rho_new - rho) if np.isfinite(rho_new) else (0.0 if rho_new == rho else np.inf)
        u, g, rho, lam, gam = u_new, g_new, rho_new, lam_new, gam_new
        if drho <= eps and zeta <= eps:
            trace.terminated_by = "tolerance"
            break

    out.f[st.tx] = F
    out.z[st.rx, st.sub] = z
    out.w[st.tx] = w
    out.lam[st.tx] = lam
    out.gam[st.tx] = gam
    return out, trace


def _backtrack(st, F, F_cand, cur, halvings=30):
    t = 1.0
    for _ in range(halvings):
        t *= 0.5
        F_try = F + t * (F_cand - F)
        cand = st.state(F_try)
        if cand[4] <= cur[4]:
            return F_try, cand
    return F, cur


def _stretch(st, origin, direction, t, limit, F_best, best):
    """Double ``t`` along ``origin + t * direction`` while the objective falls."""
    while t < limit:
        t *= 2.0
        F_try = _project(origin + t * direction, st.power)
        cand = st.state(F_try)
        if not cand[4] < best[4]:
            break
        F_best, best = F_try, cand
    return F_best, best


def _project(F, power):
    p = np.sum(np.abs(F) ** 2, axis=1)
    scale = np.where(p > power, np.sqrt(power / np.where(p > 0, p, 1.0)), 1.0)
    return F * scale[:, None]


def _multipliers(st, u, g, trace):
    if np.any(u <= 0):
        trace.warn("non-positive surrogate rate clamped")
    uc = np.maximum(u, U_FLOOR)
    return st.size / uc, g / uc


def random_beamformers(rng, K, N, power):
    """Uniform directions on the complex sphere, scaled to full power."""
    f = rng.standard_normal((K, N)) + 1j * rng.standard_normal((K, N))
    f /= np.linalg.norm(f, axis=1, keepdims=True)
    return f * np.sqrt(np.broadcast_to(power, (K,)))[:, None]


def full_power(f, power):
    """Rescale every row of ``f`` to its power budget (zero rows get a fixed direction)."""
    f = np.array(f, dtype=complex)
    norms = np.linalg.norm(f, axis=1)
    zero = norms == 0
    if zero.any():
        f[zero] = 1.0
        norms[zero] = np.sqrt(f.shape[1])
    return f / norms[:, None] * np.sqrt(np.asarray(power))[:, None]
