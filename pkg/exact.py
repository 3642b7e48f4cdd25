"""
Exact Gibbs Module
Enumeration over {-1,+1}^N: partition function, replica expectations,
spin correlations and the factorized overlap-moment engine
"""
import logging
import math
from dataclasses import dataclass
from functools import cached_property, lru_cache

import numpy as np

from config import DIRECT_TUPLE_CAP, ENUMERATION_CHUNK, EXACT_N_CAP, MOMENT_TUPLE_CAP
from errors import ArityError, BudgetExceededError, ConfigError, SiteIndexError
from model import (
    LocalFieldCache,
    gibbs_energy,
    hamiltonian_p_batch,
    spins_from_indices,
)

logger = logging.getLogger(__name__)


def check_exact_size(N, cap=EXACT_N_CAP):
    if N > cap:
        raise BudgetExceededError(f"exact enumeration needs N <= {cap}, got N={N}")


@lru_cache(maxsize=8)
def configuration_table(N):
    """All 2^N configurations as int8 rows, row c is configuration index c"""
    spins = spins_from_indices(np.arange(2 ** N), N)
    spins.flags.writeable = False
    return spins


@lru_cache(maxsize=8)
def _spin_sums(N):
    sums = configuration_table(N).sum(axis=1, dtype=np.int64).astype(np.float64)
    sums.flags.writeable = False
    return sums


def logsumexp_exact(values):
    """Max-shifted log-sum-exp with compensated summation"""
    values = np.asarray(values, dtype=np.float64)
    top = float(np.max(values))
    return top + math.log(math.fsum(np.exp(values - top)))


def walsh_hadamard(values):
    """Fast Walsh-Hadamard transform: out[S] = sum_c values[c] (-1)^{popcount(c & S)}"""
    v = np.array(values, dtype=np.float64)
    size = v.size
    width = 1
    while width < size:
        v = v.reshape(-1, 2, width)
        v = np.stack((v[:, 0] + v[:, 1], v[:, 0] - v[:, 1]), axis=1)
        width *= 2
    return v.reshape(size)


def _enumerate_hamiltonian(disorder, p, N):
    table = configuration_table(N)
    out = np.empty(2 ** N)
    chunk = max(1, ENUMERATION_CHUNK // N ** (p - 1))
    for start in range(0, 2 ** N, chunk):
        out[start:start + chunk] = hamiltonian_p_batch(table[start:start + chunk], disorder, p)
    return out


def gray_code_energies(disorder, params):
    """
    Gibbs energies of all configurations visited in Gray-code order, so each
    step is one flip and the energy is updated by its flip delta.
    """
    N = params.N
    cache = LocalFieldCache(np.ones(N, dtype=np.int8), disorder, params)
    energy = gibbs_energy(cache.spins, disorder, params)
    energies = np.empty(2 ** N)
    energies[0] = energy
    index = 0
    for step in range(1, 2 ** N):
        site = (step & -step).bit_length() - 1
        energy += cache.delta(site)
        cache.flip(site)
        index ^= 1 << site
        energies[index] = energy
    return energies


@dataclass(frozen=True, eq=False)
class GibbsTable:
    """The exact single-replica Gibbs measure of one disorder realization"""
    disorder: object
    params: object
    energies: np.ndarray
    hamiltonians: dict
    log_partition: float
    probabilities: np.ndarray

    @property
    def N(self):
        return self.params.N

    @property
    def spins(self):
        return configuration_table(self.N)

    def mean(self, values):
        return float(np.dot(self.probabilities, values))

    @cached_property
    def correlations(self):
        """<prod_{i in S} sigma_i> for every subset mask S"""
        return walsh_hadamard(self.probabilities)


def gibbs_table(disorder, params, cap=EXACT_N_CAP, incremental=False):
    """
    Enumerate the Gibbs measure exp(energy)/Z_N over all 2^N configurations.
    incremental=True walks the Gray code with flip deltas instead of the
    vectorised block evaluation; both give the same table.
    """
    N = params.N
    check_exact_size(N, cap)
    hamiltonians = {p: _enumerate_hamiltonian(disorder, p, N) for p in params.degrees}
    if incremental:
        energies = gray_code_energies(disorder, params)
    else:
        energies = params.h * _spin_sums(N)
        for p, beta in params.terms:
            energies = energies + beta * hamiltonians[p]
    log_z = logsumexp_exact(energies)
    probabilities = np.exp(energies - log_z)
    return GibbsTable(disorder, params, energies, hamiltonians, log_z, probabilities)


@dataclass(frozen=True)
class FreeEnergySample:
    log_partition: float
    psi: float
    params: object
    master_seed: int
    realization_index: int


def log_partition(disorder, params, cap=EXACT_N_CAP, table=None):
    """
    log Z_N and psi_N = log Z_N / N for one disorder realization. The reported
    log Z_N is psi_N * N so the two agree bit for bit.
    """
    table = table or gibbs_table(disorder, params, cap)
    psi = table.log_partition / params.N
    return FreeEnergySample(
        log_partition=psi * params.N,
        psi=psi,
        params=params,
        master_seed=disorder.master_seed,
        realization_index=disorder.realization_index,
    )


def thermal_expectation_direct(f, n, disorder, params, cap=DIRECT_TUPLE_CAP, table=None):
    """
    Sum of f(sigma^1..sigma^n) * prod_l G_N(sigma^l) over all n-tuples.
    f is vectorised: it receives n float arrays of shape (batch, N) and
    returns one value per row.
    """
    N = params.N
    arity = getattr(f, "arity", n)
    if arity != n:
        raise ArityError(f"function of {arity} replicas evaluated with n={n}")
    if n * N > cap:
        raise BudgetExceededError(f"direct enumeration needs n*N <= {cap}, got {n}*{N}")
    table = table or gibbs_table(disorder, params)
    spins = table.spins.astype(np.float64)
    probabilities = table.probabilities
    size = 2 ** N
    n_tuples = size ** n
    partials = []
    for start in range(0, n_tuples, ENUMERATION_CHUNK):
        tuples = np.arange(start, min(start + ENUMERATION_CHUNK, n_tuples), dtype=np.int64)
        indices = [(tuples // size ** l) % size for l in range(n)]
        weights = np.prod([probabilities[i] for i in indices], axis=0)
        values = np.broadcast_to(np.asarray(f(*[spins[i] for i in indices]), dtype=np.float64), weights.shape)
        partials.append(float(np.dot(weights, values)))
    return math.fsum(partials)


def _site_mask(indices, N):
    mask = 0
    for i in indices:
        if not 0 <= i < N:
            raise SiteIndexError(f"site {i} outside 0..{N - 1}")
        mask ^= 1 << int(i)
    return mask


def spin_correlation(indices, disorder, params, cap=EXACT_N_CAP, table=None):
    """<sigma_i1 ... sigma_ik>; repeated sites cancel in pairs before enumeration"""
    N = params.N
    check_exact_size(N, cap)
    mask = _site_mask(indices, N)
    if mask == 0:
        return 1.0
    table = table or gibbs_table(disorder, params, cap)
    odd_sites = [i for i in range(N) if mask >> i & 1]
    signs = np.prod(table.spins[:, odd_sites], axis=1, dtype=np.int64)
    return table.mean(signs)


@dataclass(frozen=True)
class OverlapMonomial:
    """prod over replica pairs (l, l2), l < l2 < n, of R_{l,l2}^q"""
    n: int
    exponents: tuple = ()

    def __post_init__(self):
        items = self.exponents.items() if isinstance(self.exponents, dict) else self.exponents
        merged = {}
        for (l, l2), q in items:
            l, l2, q = int(l), int(l2), int(q)
            if not 0 <= l < l2 < self.n:
                raise ConfigError(f"overlap pair ({l}, {l2}) invalid for n={self.n} replicas")
            if q < 0:
                raise ConfigError(f"negative power {q} on R_({l},{l2})")
            merged[(l, l2)] = merged.get((l, l2), 0) + q
        object.__setattr__(self, "exponents", tuple(sorted((k, q) for k, q in merged.items() if q > 0)))

    @property
    def degree(self):
        return sum(q for _, q in self.exponents)

    def times(self, other):
        return OverlapMonomial(max(self.n, other.n), self.exponents + other.exponents)

    def factors(self):
        return [pair for pair, q in self.exponents for _ in range(q)]

    def evaluate(self, overlaps):
        """Value per row of an overlap array of shape (batch, n, n)"""
        value = np.ones(overlaps.shape[0])
        for (l, l2), q in self.exponents:
            value = value * overlaps[:, l, l2] ** q
        return value

    @property
    def label(self):
        if not self.exponents:
            return "1"
        return "*".join(f"R{l}{l2}^{q}" for (l, l2), q in self.exponents)


def overlap_moment_factorized(monomial, disorder, params, cap=MOMENT_TUPLE_CAP, table=None):
    """
    <prod R^q> by expanding every overlap into its site sum: each site tuple
    contributes the product over replicas of single-replica spin correlations.
    """
    N = params.N
    degree = monomial.degree
    if degree == 0:
        return 1.0
    if N ** degree > cap:
        raise BudgetExceededError(f"factorized moment needs N^degree <= {cap}, got {N}^{degree}")
    table = table or gibbs_table(disorder, params)
    correlations = table.correlations
    factors = monomial.factors()
    touching = [
        [k for k, pair in enumerate(factors) if replica in pair] for replica in range(monomial.n)
    ]
    bits = np.left_shift(1, np.arange(N, dtype=np.int64))
    n_tuples = N ** degree
    partials = []
    for start in range(0, n_tuples, ENUMERATION_CHUNK):
        tuples = np.arange(start, min(start + ENUMERATION_CHUNK, n_tuples), dtype=np.int64)
        sites = [(tuples // N ** k) % N for k in range(degree)]
        product = np.ones(tuples.size)
        for members in touching:
            if not members:
                continue
            mask = np.zeros(tuples.size, dtype=np.int64)
            for k in members:
                mask ^= bits[sites[k]]
            product *= correlations[mask]
        partials.append(float(product.sum()))
    return math.fsum(partials) / N ** degree


@dataclass(frozen=True, eq=False)
class CoefficientProfile:
    """Exact thermal statistics of H_p as beta_p = x varies, one disorder realization"""
    p: int
    x: np.ndarray
    log_partition: np.ndarray
    mean: np.ndarray
    variance: np.ndarray
    abs_deviation: np.ndarray
    pair_gap: np.ndarray
    gap_derivative: np.ndarray


def coefficient_profile(disorder, params, p, xs, cap=EXACT_N_CAP):
    """
    For each x: log Z, <H_p>, <(H_p - <H_p>)^2>, <|H_p - <H_p>|>, the two-replica
    gap <|H_p(s1) - H_p(s2)|> and its x-derivative
    <|H_p(s1) - H_p(s2)| (H_p(s1) + H_p(s2) - 2 H_p(s3))>.
    The pair sums use sorted cumulative weights, O(2^N log 2^N) per x.
    """
    xs = np.asarray(xs, dtype=np.float64)
    base = gibbs_table(disorder, params.with_coefficient(p, 0.0), cap)
    h_values = base.hamiltonians[p]
    order = np.argsort(h_values, kind="stable")
    sorted_h = h_values[order]
    columns = {name: np.empty(xs.size) for name in
               ("log_partition", "mean", "variance", "abs_deviation", "pair_gap", "gap_derivative")}
    for k, x in enumerate(xs):
        energies = base.energies + x * h_values
        log_z = logsumexp_exact(energies)
        weights = np.exp(energies - log_z)
        mean = float(np.dot(weights, h_values))
        centred = h_values - mean
        sorted_w = weights[order]
        below = np.cumsum(sorted_w) - sorted_w
        below_h = np.cumsum(sorted_w * sorted_h) - sorted_w * sorted_h
        below_h2 = np.cumsum(sorted_w * sorted_h ** 2) - sorted_w * sorted_h ** 2
        linear = sorted_h * below - below_h
        quadratic = sorted_h ** 2 * below - below_h2
        columns["log_partition"][k] = log_z
        columns["mean"][k] = mean
        columns["variance"][k] = float(np.dot(weights, centred ** 2))
        columns["abs_deviation"][k] = float(np.dot(weights, np.abs(centred)))
        columns["pair_gap"][k] = 2.0 * float(np.dot(sorted_w, linear))
        columns["gap_derivative"][k] = 2.0 * float(np.dot(sorted_w, quadratic - 2.0 * mean * linear))
    return CoefficientProfile(p=p, x=xs, **columns)
