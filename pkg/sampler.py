"""
Sampler Module
Metropolis sweeps, parallel tempering, replica sampling and disorder averaging
"""
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import partial

import numpy as np

from config import (
    BATCH_COUNT,
    DEFAULT_BURN_IN,
    DEFAULT_LADDER,
    ENERGY_DRIFT_TOLERANCE,
    ENERGY_RESYNC_INTERVAL,
    INTEGRATION_NODES,
    INTEGRATION_SLOT,
    STREAM_CHAIN,
    STREAM_EXCHANGE,
    STREAM_INIT,
)
from errors import ConfigError, LadderError, RealizationError, ScheduleError
from model import LocalFieldCache, SpinConfiguration, gibbs_energy, keyed_generator, overlap_matrix

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class EstimateWithError:
    """Mean, standard error (sample std / sqrt(n)) and sample count"""
    mean: float
    std_error: float
    n_samples: int

    @classmethod
    def from_samples(cls, values):
        values = np.asarray(values, dtype=np.float64).ravel()
        n = values.size
        if n == 0:
            raise ValueError("an estimate needs at least one sample")
        if np.all(values == values[0]):
            return cls(float(values[0]), 0.0, n)
        mean = math.fsum(values) / n
        if n < 2:
            return cls(mean, float("nan"), n)
        variance = math.fsum((values - mean) ** 2) / (n - 1)
        return cls(mean, math.sqrt(variance / n), n)

    def combined_error(self, other):
        return math.hypot(self.std_error, other.std_error)

    def deviation(self, value):
        """|mean - value| in units of the standard error"""
        if self.std_error == 0.0:
            return 0.0 if self.mean == value else math.inf
        return abs(self.mean - value) / self.std_error


def batch_means(values, n_batches=BATCH_COUNT):
    """Thermal error of one chain from the spread of n_batches consecutive batch averages"""
    values = np.asarray(values, dtype=np.float64).ravel()
    size = values.size // n_batches
    if size == 0:
        raise ScheduleError(f"{values.size} samples cannot fill {n_batches} batches")
    batches = values[: size * n_batches].reshape(n_batches, size).mean(axis=1)
    return EstimateWithError.from_samples(batches)


def acceptance_probability(delta, scale):
    """Metropolis acceptance of a proposed flip with energy change delta"""
    return min(1.0, math.exp(min(0.0, scale * delta)))


def swap_probability(scale_a, scale_b, energy_a, energy_b):
    """Acceptance of exchanging the chains at scales a and b"""
    return min(1.0, math.exp(min(0.0, (scale_a - scale_b) * (energy_b - energy_a))))


@dataclass(eq=False)
class ChainState:
    """One Markov chain: its spins (inside the field cache), cached energy and stream"""
    cache: LocalFieldCache
    energy: float
    ladder_position: int
    rng: np.random.Generator
    key: tuple
    sweep_count: int = 0
    proposed: int = 0
    accepted: int = 0

    @property
    def spins(self):
        return self.cache.spins

    @property
    def config(self):
        return SpinConfiguration(self.cache.spins)

    def resync(self):
        """Recompute the energy from scratch; returns the drift that was removed"""
        exact = gibbs_energy(self.cache.spins, self.cache.disorder, self.cache.params)
        drift = abs(exact - self.energy)
        if drift > ENERGY_DRIFT_TOLERANCE:
            logger.warning(f"Chain {self.key} energy drift {drift:.3e} after {self.sweep_count} sweeps")
        self.cache.resync()
        self.energy = exact
        return drift


def new_chain(disorder, params, key, ladder_position=0):
    """Chain keyed by `key`, started from a uniformly random configuration"""
    seed = disorder.master_seed
    init = keyed_generator(seed, STREAM_INIT, *key)
    spins = init.choice(np.array([-1, 1], dtype=np.int8), size=params.N)
    cache = LocalFieldCache(spins, disorder, params)
    energy = gibbs_energy(cache.spins, disorder, params)
    return ChainState(cache, energy, ladder_position, keyed_generator(seed, STREAM_CHAIN, *key), tuple(key))


def metropolis_sweep(state, disorder, params, scale):
    """
    One sweep: every site in a fresh random order proposes a uniformly random
    spin value; a proposed flip is accepted with probability min(1, exp(scale * delta)).
    """
    if scale < 0:
        raise ValueError(f"scale must be non-negative, got {scale}")
    N = params.N
    rng = state.rng
    order = rng.permutation(N).tolist()
    proposals = (rng.random(N) < 0.5).tolist()
    thresholds = rng.random(N).tolist()
    cache = state.cache
    for site, propose, u in zip(order, proposals, thresholds):
        if not propose:
            continue
        delta = cache.delta(site)
        state.proposed += 1
        if u < acceptance_probability(delta, scale):
            cache.flip(site)
            state.energy += delta
            state.accepted += 1
    state.sweep_count += 1
    if state.sweep_count % ENERGY_RESYNC_INTERVAL == 0:
        state.resync()
    return state


@dataclass(frozen=True)
class TemperingLadder:
    """Strictly increasing scales ending at 1 (the target measure)"""
    scales: tuple

    def __post_init__(self):
        scales = tuple(float(s) for s in self.scales)
        object.__setattr__(self, "scales", scales)
        if len(scales) < 2:
            raise LadderError(f"a tempering ladder needs at least 2 scales, got {len(scales)}")
        if any(b <= a for a, b in zip(scales, scales[1:])):
            raise LadderError(f"ladder scales must be strictly increasing: {scales}")
        if scales[0] < 0 or scales[-1] != 1.0:
            raise LadderError(f"ladder must lie in [0, 1] and end at 1, got {scales}")

    @classmethod
    def geometric(cls, k=DEFAULT_LADDER["k"], s_min=DEFAULT_LADDER["s_min"], s_max=DEFAULT_LADDER["s_max"]):
        scales = np.geomspace(s_min, s_max, k)
        scales[-1] = 1.0
        return cls(tuple(scales))

    @property
    def K(self):
        return len(self.scales)


@dataclass(eq=False)
class TemperingEnsemble:
    """Chains sharing one disorder over a scale ladder; a single chain means no tempering"""
    chains: list
    scales: tuple
    rng: np.random.Generator
    exchanges: int = 0
    swap_attempts: np.ndarray = field(default=None)
    swap_accepts: np.ndarray = field(default=None)

    def __post_init__(self):
        pairs = max(len(self.scales) - 1, 0)
        self.swap_attempts = np.zeros(pairs, dtype=np.int64)
        self.swap_accepts = np.zeros(pairs, dtype=np.int64)

    @property
    def K(self):
        return len(self.scales)

    def by_position(self):
        return sorted(self.chains, key=lambda chain: chain.ladder_position)

    def target(self):
        """The chain currently at the top of the ladder (scale 1)"""
        return self.by_position()[-1]

    def sweep(self, disorder, params):
        for chain in self.chains:
            metropolis_sweep(chain, disorder, params, self.scales[chain.ladder_position])
        if self.K > 1:
            pt_exchange(self, disorder, params)

    def acceptance_rates(self):
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(self.swap_attempts > 0, self.swap_accepts / np.maximum(self.swap_attempts, 1), np.nan)


def pt_exchange(ensemble, disorder, params, rng=None):
    """
    Propose swaps between adjacent ladder positions, even pairs on even calls
    and odd pairs on odd calls. Only ladder positions move.
    """
    if ensemble.K < 2:
        raise LadderError(f"parallel tempering needs at least 2 scales, got {ensemble.K}")
    TemperingLadder(ensemble.scales)
    rng = rng or ensemble.rng
    ordered = ensemble.by_position()
    scales = ensemble.scales
    for a in range(ensemble.exchanges % 2, ensemble.K - 1, 2):
        chain_a, chain_b = ordered[a], ordered[a + 1]
        probability = swap_probability(scales[a], scales[a + 1], chain_a.energy, chain_b.energy)
        ensemble.swap_attempts[a] += 1
        if rng.random() < probability:
            chain_a.ladder_position, chain_b.ladder_position = a + 1, a
            ensemble.swap_accepts[a] += 1
    ensemble.exchanges += 1
    return ensemble


def build_ensemble(disorder, params, ladder, key):
    scales = ladder.scales if ladder is not None else (1.0,)
    chains = [new_chain(disorder, params, key + (rung,), rung) for rung in range(len(scales))]
    rng = keyed_generator(disorder.master_seed, STREAM_EXCHANGE, *key)
    return TemperingEnsemble(chains, scales, rng)


@dataclass(frozen=True)
class Schedule:
    """burn_in sweeps, then `sweeps` production sweeps emitting every `thinning` sweeps"""
    burn_in: int = DEFAULT_BURN_IN
    thinning: int = None
    sweeps: int = 1000
    ladder: TemperingLadder = None

    def __post_init__(self):
        if self.burn_in < 0:
            raise ScheduleError(f"burn_in must be >= 0, got {self.burn_in}")
        if self.thinning is not None and self.thinning < 1:
            raise ScheduleError(f"thinning must be >= 1, got {self.thinning}")
        if self.sweeps < 1:
            raise ScheduleError(f"sweeps must be >= 1, got {self.sweeps}")

    def thinning_for(self, N):
        return self.thinning or N

    def n_samples(self, N):
        return self.sweeps // self.thinning_for(N)


@dataclass(frozen=True, eq=False)
class ReplicaSample:
    configs: tuple
    overlaps: object
    energies: tuple
    sweep: int


class ReplicaSampler:
    """n independent replicas (each optionally tempered) on one shared disorder"""

    def __init__(self, n, disorder, params, schedule, stream=0):
        if n < 2:
            raise ScheduleError(f"replica sampling needs n >= 2, got {n}")
        if schedule.n_samples(params.N) < 1:
            raise ScheduleError(
                f"{schedule.sweeps} sweeps with thinning {schedule.thinning_for(params.N)} emit no samples"
            )
        self.n = n
        self.disorder = disorder
        self.params = params
        self.schedule = schedule
        self.ensembles = [
            build_ensemble(disorder, params, schedule.ladder, (disorder.realization_index, stream, replica))
            for replica in range(n)
        ]

    def _advance(self):
        for ensemble in self.ensembles:
            ensemble.sweep(self.disorder, self.params)

    def samples(self):
        schedule = self.schedule
        thinning = schedule.thinning_for(self.params.N)
        for _ in range(schedule.burn_in):
            self._advance()
        for step in range(1, schedule.sweeps + 1):
            self._advance()
            if step % thinning == 0:
                chains = [ensemble.target() for ensemble in self.ensembles]
                configs = tuple(chain.config for chain in chains)
                yield ReplicaSample(
                    configs, overlap_matrix(configs), tuple(chain.energy for chain in chains),
                    schedule.burn_in + step,
                )

    def swap_acceptance(self):
        """Mean swap acceptance per adjacent ladder pair over the replicas"""
        if self.schedule.ladder is None:
            return np.array([])
        return np.nanmean([ensemble.acceptance_rates() for ensemble in self.ensembles], axis=0)

    def flip_acceptance(self):
        chains = [chain for ensemble in self.ensembles for chain in ensemble.chains]
        proposed = sum(chain.proposed for chain in chains)
        return sum(chain.accepted for chain in chains) / proposed if proposed else float("nan")


def sample_replicas(n, disorder, params, schedule, stream=0):
    """Stream of ReplicaSample after burn-in, one every `thinning` sweeps"""
    return ReplicaSampler(n, disorder, params, schedule, stream).samples()


def collect_replica_arrays(n, disorder, params, schedule, stream=0):
    """All samples of one run as arrays: spins (S, n, N) int8 and energies (S, n), plus the sampler"""
    sampler = ReplicaSampler(n, disorder, params, schedule, stream)
    spins, energies = [], []
    for sample in sampler.samples():
        spins.append(np.stack([config.spins for config in sample.configs]))
        energies.append(sample.energies)
    return np.array(spins), np.array(energies), sampler


def estimate_log_partition(disorder, params, schedule, n_nodes=INTEGRATION_NODES, stream=0):
    """
    psi_N by thermodynamic integration over the global scale:
    log Z = N log 2 + int_0^1 <energy>_s ds, Gauss-Legendre nodes on [0, 1].
    """
    nodes, weights = np.polynomial.legendre.leggauss(n_nodes)
    scales = 0.5 * (nodes + 1.0)
    weights = 0.5 * weights
    integral, variance, count = 0.0, 0.0, 0
    for k, (scale, weight) in enumerate(zip(scales, weights)):
        chain = new_chain(disorder, params, (disorder.realization_index, stream, INTEGRATION_SLOT + k, 0))
        for _ in range(schedule.burn_in):
            metropolis_sweep(chain, disorder, params, scale)
        energies = []
        for _ in range(schedule.sweeps):
            metropolis_sweep(chain, disorder, params, scale)
            energies.append(chain.energy)
        node = batch_means(energies)
        integral += weight * node.mean
        variance += (weight * node.std_error) ** 2
        count += len(energies)
    N = params.N
    return EstimateWithError(math.log(2.0) + integral / N, math.sqrt(variance) / N, count)


def _guarded(fn, index):
    try:
        return fn(index)
    except RealizationError:
        raise
    except Exception as error:
        raise RealizationError(index, error) from error


def map_realizations(fn, indices, workers=1):
    """
    fn(index) for every realization index, in index order. Failures are
    re-raised as RealizationError carrying the lowest failing index.

    With workers > 1 the realizations run in a process pool, so fn must
    pickle: a module-level function or a functools.partial of one.
    """
    indices = list(indices)
    guarded = partial(_guarded, fn)
    if workers <= 1 or len(indices) <= 1:
        return [guarded(index) for index in indices]
    with ProcessPoolExecutor(max_workers=min(workers, len(indices))) as pool:
        return list(pool.map(guarded, indices))


def _experiment_value(experiment, master_seed, index):
    return float(experiment(master_seed, index))


def disorder_average(experiment, M, master_seed, workers=1):
    """
    Average experiment(master_seed, index) over realizations 0..M-1 with the
    across-realization standard error.
    """
    if M < 2:
        raise ConfigError(f"disorder averaging needs M >= 2 realizations, got {M}")
    values = map_realizations(partial(_experiment_value, experiment, master_seed), range(M), workers)
    estimate = EstimateWithError.from_samples(values)
    logger.info(f"Disorder average over {M} realizations: {estimate.mean:.6g} +/- {estimate.std_error:.2g}")
    return estimate
