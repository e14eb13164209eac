import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from d2dopt.errors import InvalidParameterError
from d2dopt.mcob import (BeamformerSubproblem, full_power, mcob, mmse_combiner, mmse_combiners, mse, mse_complement,
                         random_beamformers, solve_beamformer_qcqp, surrogate_u, update_multipliers)
from d2dopt.overhead import LOCAL, AllocationState, BeamformingState, stream_sinrs, total_overhead
from d2dopt.rng import substream
from d2dopt.scenario import ScenarioParams, generate_scenario
from d2dopt.solvers import random_allocation

from conftest import make_scenario


def crandn(rng, *shape):
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2)


def scalar_link(h=1.0, f=1.0):
    H = np.zeros((2, 2, 1, 1, 1), complex)
    H[0, 1, 0] = h
    alloc = AllocationState([1, 1], [0, LOCAL], [0, 0], 1)
    beams = BeamformingState(np.array([[f], [0]], complex), np.zeros((2, 1, 1), complex))
    return alloc, beams, H


def test_mmse_combiner_scalar():
    alloc, beams, H = scalar_link()
    assert mmse_combiner(0, alloc, beams, H, 1.0) == pytest.approx([0.5])
    beams.z[1, 0] = 0.5
    assert mse(0, alloc, beams, H, 1.0) == pytest.approx(0.5)
    alloc, beams, H = scalar_link(f=0.0)
    assert mmse_combiner(0, alloc, beams, H, 1.0) == pytest.approx([0.0])
    assert mse(0, alloc, beams, H, 1.0) == pytest.approx(1.0)
    with pytest.raises(InvalidParameterError):
        mmse_combiner(0, alloc, beams, H, 0.0)


def random_instance(rng, N, n_interf):
    # node 0 -> node 1 is the stream of interest; interferers 2.. send to their own idle receivers
    K = 2 + 2 * n_interf
    H = crandn(rng, K, K, 1, N, N)
    target = [1, 1] + [2 + n_interf + j for j in range(n_interf)] + list(range(2 + n_interf, K))
    sub = [0, LOCAL] + [0] * n_interf + [LOCAL] * n_interf
    alloc = AllocationState(target, sub, np.zeros(K), 1)
    f = crandn(rng, K, N)
    f[[1] + list(range(2 + n_interf, K))] = 0
    return alloc, f, H, float(rng.uniform(0.1, 2.0))


@pytest.mark.parametrize("seed", range(10))
def test_mmse_maximizes_sinr_and_minimizes_mse(seed):
    rng = np.random.default_rng(seed)
    alloc, f, H, noise = random_instance(rng, 3, 2)
    z = mmse_combiner(0, alloc, BeamformingState(f, np.zeros((alloc.K, 1, 3))), H, noise)
    beams = BeamformingState(f, np.zeros((alloc.K, 1, 3), complex))
    beams.z[1, 0] = z
    from d2dopt.overhead import sinr
    best = sinr(0, 1, 0, alloc, beams, H, noise)
    e_best = mse(0, alloc, beams, H, noise)
    for zr in crandn(rng, 2000, 3):
        beams.z[1, 0] = zr / np.linalg.norm(zr)
        assert sinr(0, 1, 0, alloc, beams, H, noise) <= best * (1 + 1e-9)
        beams.z[1, 0] = zr
        assert mse(0, alloc, beams, H, noise) >= e_best - 1e-12


def test_surrogate_examples():
    assert surrogate_u(0.5, 0.5, 1.0) == pytest.approx(1.0)
    assert surrogate_u(1.0, 1.0, 1.0) == pytest.approx(0.0, abs=1e-15)
    with pytest.raises(InvalidParameterError):
        surrogate_u(0.5, 0.0, 1.0)


@given(st.floats(1e-3, 1.0), st.floats(1e-3, 10.0))
def test_surrogate_maximized_at_w_equal_e(e, w):
    assert surrogate_u(e, e, 1.0) >= surrogate_u(e, w, 1.0) - 1e-12


def test_multiplier_examples():
    assert update_multipliers(1.0, np.ones(2), 0.0, 0.01, 1.0) == pytest.approx((1.0, 1.0))
    lam, _ = update_multipliers(2e6, np.ones(2), 0.5, 0.01, 1e6)
    assert lam == pytest.approx(0.5)
    with pytest.raises(InvalidParameterError):
        update_multipliers(0.0, np.ones(2), 0.5, 0.01, 1.0)


def test_qcqp_scalar_example():
    s = BeamformerSubproblem(np.array([[1.0]]), 0.0, 2.0, 1.0)
    f = solve_beamformer_qcqp(s, np.array([1.0]))
    assert f == pytest.approx([1.0])
    assert s.nu == pytest.approx(1.0)


def test_qcqp_interior_branch():
    s = BeamformerSubproblem(np.array([[4.0]]), 0.0, 2.0, 1.0)
    f = solve_beamformer_qcqp(s, np.array([1.0]))
    assert f == pytest.approx([0.5]) and s.nu == 0.0


def projected_gradient(s, v, starts, rng, iters=3000):
    """Plain projected gradient descent on the ball, best over random starts."""
    A = s.sigma + s.shift * np.eye(len(v))
    L = 2 * np.linalg.eigvalsh(A)[-1]
    best = np.inf
    for _ in range(starts):
        f = crandn(rng, len(v))
        f *= np.sqrt(s.power) / np.linalg.norm(f) * rng.uniform(0, 1)
        for _ in range(iters):
            f = f - (2 * A @ f - 2 * s.coeff * v) / L
            n = np.linalg.norm(f)
            if n**2 > s.power:
                f *= np.sqrt(s.power) / n
        best = min(best, s.objective(f, v))
    return best


@pytest.mark.parametrize("seed", range(12))
def test_qcqp_matches_projected_gradient(seed):
    rng = np.random.default_rng(seed)
    G = crandn(rng, 4, 4)
    s = BeamformerSubproblem(G @ G.conj().T, rng.uniform(0, 1), rng.uniform(0.5, 3), rng.uniform(0.2, 2))
    v = crandn(rng, 4)
    f = solve_beamformer_qcqp(s, v)
    assert np.vdot(f, f).real <= s.power * (1 + 1e-8)
    assert s.objective(f, v) <= projected_gradient(s, v, 20, rng, 400) + 1e-6


def test_power_function_decreasing():
    rng = np.random.default_rng(3)
    G = crandn(rng, 4, 4)
    s = BeamformerSubproblem(G @ G.conj().T, 0.2, 1.0, 1.0)
    v = crandn(rng, 4)
    p = [s.power_at(v, nu) for nu in np.linspace(0, 50, 100)]
    assert np.all(np.diff(p) < 0)


def test_rank_deficient_sigma():
    # v in the range of Sigma, as it always is inside the optimizer
    s = BeamformerSubproblem(np.diag([1.0, 0.0, 0.0]), 0.0, 2.0, 1.0)
    f = solve_beamformer_qcqp(s, np.array([1.0, 0, 0]))
    assert s.regularized
    assert f == pytest.approx([1.0, 0, 0])
    assert s.nu == pytest.approx(1.0)


@pytest.mark.parametrize("seed", range(10))
def test_rate_mse_identity(seed):
    rng = np.random.default_rng(100 + seed)
    N = [1, 2, 4][seed % 3]
    alloc, f, H, noise = random_instance(rng, N, int(rng.integers(0, 3)))
    z = mmse_combiners(alloc, f, H, noise)
    beams = BeamformingState(f, z)
    snr = stream_sinrs(alloc, f, z, H, noise)[0]
    e = mse(0, alloc, beams, H, noise)
    assert math.log2(1 + snr) == pytest.approx(-math.log2(e), rel=1e-9)


def test_single_stream_beta_zero_uses_full_power():
    H = np.zeros((2, 2, 1, 1, 1), complex)
    H[0, 1, 0] = 1e-4
    sc = make_scenario(H, beta=0.0)
    alloc = AllocationState([1, 1], [0, LOCAL], [1e8, 1e8], 1)
    beams, trace = mcob(alloc, sc, full_power(np.ones((2, 1)), sc.power))
    assert np.vdot(beams.f[0], beams.f[0]).real == pytest.approx(sc.params.power, rel=1e-6)
    # 1-D sweep: overhead only grows as power drops
    y = [total_overhead(alloc, BeamformingState(np.array([[np.sqrt(p)], [0]]), beams.z), sc).Y_comm
         for p in np.linspace(0.1, sc.params.power, 50)]
    assert np.all(np.diff(y) < 0)


def test_empty_transmitter_set():
    sc = generate_scenario(ScenarioParams(node_count=3), 0)
    beams, trace = mcob(AllocationState.local(3, sc.S), sc, np.zeros((3, sc.N)))
    assert trace.iterations == 0 and np.all(beams.f == 0)


def test_rejects_non_full_power_start():
    sc = generate_scenario(ScenarioParams(node_count=2, subchannel_count=1), 0)
    alloc = AllocationState([1, 1], [0, LOCAL], [0, 0], 1)
    with pytest.raises(InvalidParameterError):
        mcob(alloc, sc, 0.5 * full_power(np.ones((2, sc.N)), sc.power))


@pytest.mark.parametrize("seed", range(6))
def test_descent_and_fixed_point(seed):
    sc = generate_scenario(ScenarioParams(node_count=8, subchannel_count=2, antenna_count=4), seed)
    rng = substream(seed, "mcob-test")
    alloc = random_allocation(rng, 8, 2)
    while not len(alloc.transmitters):
        alloc = random_allocation(rng, 8, 2)
    f0 = random_beamformers(rng, 8, 4, sc.power)
    beams, trace = mcob(alloc, sc, f0)
    assert np.all(np.diff(trace.rho) <= 1e-9)
    assert trace.zeta[-1] <= 1e-4 or trace.terminated_by == "max-iterations"
    tx = alloc.transmitters
    assert np.all(np.sum(np.abs(beams.f[tx]) ** 2, axis=1) <= sc.power[tx] * (1 + 1e-8))
    z_ref = mmse_combiners(alloc, beams.f, sc.channels, sc.noise_power)
    assert np.allclose(beams.z, z_ref, rtol=1e-8, atol=1e-12 * np.abs(z_ref).max())
    rep = total_overhead(alloc, beams, sc)
    assert rep.Y_comm == pytest.approx(trace.rho[-1], rel=1e-9)
    start = total_overhead(alloc, BeamformingState(f0, mmse_combiners(alloc, f0, sc.channels, sc.noise_power)), sc)
    assert rep.Y_comm <= start.Y_comm
    # the stored MSE weight gives back the exact rate
    snr = stream_sinrs(alloc, beams.f, beams.z, sc.channels, sc.noise_power)
    for k in tx:
        u = surrogate_u(beams.w[k], beams.w[k], sc.params.bandwidth)
        assert u == pytest.approx(sc.params.bandwidth * math.log2(1 + snr[k]), rel=1e-8)


def test_two_interfering_streams_improve():
    sc = generate_scenario(ScenarioParams(node_count=4, subchannel_count=1, antenna_count=5), 21)
    alloc = AllocationState([1, 1, 3, 3], [0, LOCAL, 0, LOCAL], [0] * 4, 1)
    f0 = random_beamformers(substream(21, "f"), 4, 5, sc.power)
    beams, trace = mcob(alloc, sc, f0)
    z0 = mmse_combiners(alloc, f0, sc.channels, sc.noise_power)
    assert total_overhead(alloc, beams, sc).Y_comm <= total_overhead(alloc, BeamformingState(f0, z0), sc).Y_comm


def test_trace_csv():
    sc = generate_scenario(ScenarioParams(node_count=4, subchannel_count=1), 2)
    alloc = AllocationState([1, 1, 3, 3], [0, LOCAL, 0, LOCAL], [0] * 4, 1)
    _, trace = mcob(alloc, sc, random_beamformers(substream(2, "f"), 4, sc.N, sc.power))
    lines = trace.to_csv().strip().splitlines()
    assert lines[0] == "iteration,rho,zeta,surrogate"
    assert len(lines) == trace.iterations + 2


@pytest.mark.parametrize("seed", range(5))
def test_mse_complement(seed):
    rng = np.random.default_rng(200 + seed)
    alloc, f, H, noise = random_instance(rng, 2, 2)
    beams = BeamformingState(f, mmse_combiners(alloc, f, H, noise))
    assert mse_complement(0, alloc, beams, H, noise) == pytest.approx(1 - mse(0, alloc, beams, H, noise), rel=1e-9)
    # a nearly dead link: the complement keeps full relative precision
    f[0] *= 1e-5
    beams = BeamformingState(f, mmse_combiners(alloc, f, H, noise))
    snr = stream_sinrs(alloc, f, beams.z, H, noise)[0]
    c = mse_complement(0, alloc, beams, H, noise)
    assert -math.log1p(-c) == pytest.approx(math.log1p(snr), rel=1e-12)
