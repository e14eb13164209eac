"""Random D2D network scenarios: geometry, tasks, CPUs and MIMO channels."""

from dataclasses import asdict, dataclass, field, fields, replace

import numpy as np

from .errors import InvalidParameterError
from .rng import substream


def db_to_linear(db):
    return 10.0 ** (np.asarray(db, dtype=float) / 10.0)


def dbw_to_watts(dbw):
    return float(db_to_linear(dbw))


def pathloss_db(d, beta0=-30.0, alpha=3.5, d0=1.0):
    """Large-scale fading ``beta0 - 10 alpha log10(d / d0)`` in dB."""
    d = np.asarray(d, dtype=float)
    if np.any(d <= 0) or d0 <= 0:
        raise InvalidParameterError("distances must be positive")
    out = beta0 - 10.0 * alpha * np.log10(d / d0)
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class ScenarioParams:
    """Physical and statistical parameters, all in linear SI units.

    ``cpu_mixture`` is a tuple of ``(weight, low_hz, high_hz)`` uniform
    components.  Keys ending in ``_dbw`` / ``_db`` are accepted by
    :meth:`from_dict` and converted once.
    """

    node_count: int = 10
    subchannel_count: int = 2
    antenna_count: int = 5
    power: float = field(default_factory=lambda: dbw_to_watts(3.0))
    noise_power: float = field(default_factory=lambda: dbw_to_watts(-90.0))
    circuit_power: float = field(default_factory=lambda: dbw_to_watts(-20.0))
    bandwidth: float = 1e6
    pathloss_ref_db: float = -30.0
    pathloss_exponent: float = 3.5
    ref_distance: float = 1.0
    distance_range: tuple = (10.0, 30.0)
    task_size_range: tuple = (1e6, 8e6)
    processing_density: float = 200.0
    energy_coefficient: float = 3.5e-27
    cpu_mixture: tuple = ((0.75, 1e8, 2e8), (0.25, 9e8, 1e9))
    overhead_factor: float = 0.5

    def __post_init__(self):
        object.__setattr__(self, "distance_range", tuple(float(x) for x in self.distance_range))
        object.__setattr__(self, "task_size_range", tuple(float(x) for x in self.task_size_range))
        object.__setattr__(
            self, "cpu_mixture", tuple(tuple(float(x) for x in c) for c in self.cpu_mixture)
        )
        self.validate()

    def validate(self):
        for name in ("node_count", "subchannel_count", "antenna_count"):
            v = getattr(self, name)
            if int(v) != v or v < 1:
                raise InvalidParameterError(f"{name} must be a positive integer, got {v}")
        for name in ("power", "noise_power", "circuit_power", "bandwidth", "ref_distance",
                     "processing_density", "energy_coefficient"):
            if not getattr(self, name) > 0:
                raise InvalidParameterError(f"{name} must be strictly positive")
        lo, hi = self.distance_range
        if not 0 < lo <= hi:
            raise InvalidParameterError("distance_range must satisfy 0 < low <= high")
        lo, hi = self.task_size_range
        if not 0 < lo <= hi:
            raise InvalidParameterError("task_size_range must satisfy 0 < low <= high")
        if not self.cpu_mixture:
            raise InvalidParameterError("cpu_mixture needs at least one component")
        for w, lo, hi in self.cpu_mixture:
            if w < 0 or not 0 < lo <= hi:
                raise InvalidParameterError("cpu_mixture components need weight >= 0, 0 < low <= high")
        if sum(c[0] for c in self.cpu_mixture) <= 0:
            raise InvalidParameterError("cpu_mixture weights must not all be zero")
        if not 0.0 <= self.overhead_factor <= 1.0:
            raise InvalidParameterError("overhead_factor must lie in [0, 1]")

    def with_(self, **changes):
        return replace(self, **changes)

    def to_dict(self):
        d = asdict(self)
        d["distance_range"] = list(self.distance_range)
        d["task_size_range"] = list(self.task_size_range)
        d["cpu_mixture"] = [list(c) for c in self.cpu_mixture]
        return d

    @classmethod
    def from_dict(cls, data):
        data = dict(data)
        conversions = {
            "power_dbw": "power",
            "noise_power_dbw": "noise_power",
            "circuit_power_dbw": "circuit_power",
        }
        for src, dst in conversions.items():
            if src in data:
                data[dst] = dbw_to_watts(data.pop(src))
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise InvalidParameterError(f"unknown scenario parameters: {sorted(unknown)}")
        return cls(**data)


def _readonly(a):
    a = np.array(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class NetworkScenario:
    """A fully materialized network.

    ``channels[k, kp, i]`` is the N x N matrix from transmitter ``k`` to
    receiver ``kp`` on subchannel ``i``.  Diagonal blocks are zero.
    """

    params: ScenarioParams
    seed: int
    distances: np.ndarray
    task_sizes: np.ndarray
    cpus: np.ndarray
    channels: np.ndarray
    beta: np.ndarray = None
    power: np.ndarray = None

    def __post_init__(self):
        K, S, N = self.params.node_count, self.params.subchannel_count, self.params.antenna_count
        beta = np.full(K, self.params.overhead_factor) if self.beta is None else self.beta
        power = np.full(K, self.params.power) if self.power is None else self.power
        for name, value in (("distances", self.distances), ("task_sizes", self.task_sizes),
                            ("cpus", self.cpus), ("beta", beta), ("power", power)):
            object.__setattr__(self, name, _readonly(np.asarray(value, dtype=float)))
        object.__setattr__(self, "channels", _readonly(np.asarray(self.channels, dtype=complex)))
        if self.channels.shape != (K, K, S, N, N):
            raise InvalidParameterError(
                f"channels shape {self.channels.shape} does not match (K,K,S,N,N)=({K},{K},{S},{N},{N})"
            )
        if self.distances.shape != (K, K) or self.task_sizes.shape != (K,) or self.cpus.shape != (K,):
            raise InvalidParameterError("per-node arrays do not match node_count")
        if self.beta.shape != (K,) or self.power.shape != (K,):
            raise InvalidParameterError("beta and power must have one entry per node")
        if np.any((self.beta < 0) | (self.beta > 1)):
            raise InvalidParameterError("beta must lie in [0, 1]")
        if np.any(self.power <= 0) or np.any(self.task_sizes <= 0) or np.any(self.cpus <= 0):
            raise InvalidParameterError("power, task sizes and CPUs must be positive")
        if not np.all(np.isfinite(self.channels)):
            raise InvalidParameterError("channel entries must be finite")

    @property
    def K(self):
        return self.params.node_count

    @property
    def S(self):
        return self.params.subchannel_count

    @property
    def N(self):
        return self.params.antenna_count

    @property
    def noise_power(self):
        return self.params.noise_power

    @property
    def density(self):
        return np.full(self.K, self.params.processing_density)

    @property
    def kappa(self):
        return np.full(self.K, self.params.energy_coefficient)

    def with_channels(self, channels):
        return replace(self, channels=channels)

    def with_beta(self, beta):
        beta = np.broadcast_to(np.asarray(beta, dtype=float), (self.K,))
        return replace(self, beta=beta)

    def subset(self, nodes, channels=None, task_sizes=None):
        """Sub-network over ``nodes`` (in the given order)."""
        nodes = np.asarray(nodes, dtype=int)
        params = self.params.with_(node_count=len(nodes))
        if channels is None:
            channels = self.channels[np.ix_(nodes, nodes)]
        return NetworkScenario(
            params=params,
            seed=self.seed,
            distances=self.distances[np.ix_(nodes, nodes)],
            task_sizes=self.task_sizes[nodes] if task_sizes is None else task_sizes,
            cpus=self.cpus[nodes],
            channels=channels,
            beta=self.beta[nodes],
            power=self.power[nodes],
        )

    def equals(self, other):
        return (
            self.params == other.params
            and self.seed == other.seed
            and all(
                np.array_equal(getattr(self, n), getattr(other, n))
                for n in ("distances", "task_sizes", "cpus", "channels", "beta", "power")
            )
        )


def draw_distances(params, rng):
    K = params.node_count
    lo, hi = params.distance_range
    d = np.zeros((K, K))
    iu = np.triu_indices(K, 1)
    d[iu] = rng.uniform(lo, hi, size=len(iu[0]))
    return d + d.T


def draw_cpus(params, rng, size):
    weights = np.array([c[0] for c in params.cpu_mixture])
    comp = rng.choice(len(weights), size=size, p=weights / weights.sum())
    lows = np.array([c[1] for c in params.cpu_mixture])[comp]
    highs = np.array([c[2] for c in params.cpu_mixture])[comp]
    return rng.uniform(lows, highs)


def draw_channels(params, distances, rng):
    """Rayleigh channels with per-link variance from the path-loss model."""
    K, S, N = params.node_count, params.subchannel_count, params.antenna_count
    var = np.zeros((K, K))
    off = ~np.eye(K, dtype=bool)
    var[off] = db_to_linear(
        pathloss_db(distances[off], params.pathloss_ref_db, params.pathloss_exponent, params.ref_distance)
    )
    shape = (K, K, S, N, N)
    g = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
    return g * np.sqrt(var / 2.0)[:, :, None, None, None]


def generate_scenario(params, seed):
    """Deterministic scenario for ``(params, seed)``."""
    params.validate()
    seed = int(seed)
    geo = substream(seed, "scenario", "geometry")
    distances = draw_distances(params, geo)
    tasks = substream(seed, "scenario", "tasks")
    task_sizes = tasks.uniform(*params.task_size_range, size=params.node_count)
    cpus = draw_cpus(params, substream(seed, "scenario", "cpus"), params.node_count)
    channels = draw_channels(params, distances, substream(seed, "scenario", "channels"))
    return NetworkScenario(params, seed, distances, task_sizes, cpus, channels)


def redraw_channels(scenario, seed):
    """Same nodes, fresh small-scale fading."""
    chans = draw_channels(scenario.params, scenario.distances, substream(seed, "scenario", "channels"))
    return scenario.with_channels(chans)


def distort_csi(channels, theta2, seed):
    """Add Gaussian estimation error with variance ``theta2 * ||H||_F^2 / N^2`` per entry."""
    if theta2 < 0:
        raise InvalidParameterError("theta2 must be non-negative")
    channels = np.asarray(channels)
    if theta2 == 0:
        return channels.copy()
    n_entries = channels.shape[-1] * channels.shape[-2]
    energy = np.sum(np.abs(channels) ** 2, axis=(-2, -1), keepdims=True)
    var = theta2 * energy / n_entries
    rng = substream(seed, "csi")
    g = rng.standard_normal(channels.shape) + 1j * rng.standard_normal(channels.shape)
    return channels + g * np.sqrt(var / 2.0)


def _complex_to_pairs(a):
    return np.stack([a.real, a.imag], axis=-1).tolist()


def scenario_to_dict(scenario, include_channels=True):
    out = {
        "params": scenario.params.to_dict(),
        "seed": scenario.seed,
        "distances": scenario.distances.tolist(),
        "task_sizes": scenario.task_sizes.tolist(),
        "cpus": scenario.cpus.tolist(),
        "beta": scenario.beta.tolist(),
        "power": scenario.power.tolist(),
    }
    if include_channels:
        out["channels"] = _complex_to_pairs(scenario.channels)
    return out


def scenario_from_dict(data):
    params = ScenarioParams.from_dict(data["params"])
    seed = int(data["seed"])
    if "channels" not in data:
        sc = generate_scenario(params, seed)
        if "beta" in data:
            sc = sc.with_beta(data["beta"])
        return sc
    pairs = np.asarray(data["channels"], dtype=float)
    return NetworkScenario(
        params=params,
        seed=seed,
        distances=np.asarray(data["distances"], dtype=float),
        task_sizes=np.asarray(data["task_sizes"], dtype=float),
        cpus=np.asarray(data["cpus"], dtype=float),
        channels=pairs[..., 0] + 1j * pairs[..., 1],
        beta=data.get("beta"),
        power=data.get("power"),
    )
