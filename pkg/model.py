"""
Model Module
Mixed p-spin Hamiltonians, Gaussian disorder, Gibbs energy and overlaps
"""
import logging
from dataclasses import dataclass, field

import numpy as np

from config import MAX_COUPLING_ENTRIES, P_MAX, STREAM_DISORDER
from errors import (
    BudgetExceededError,
    ConfigError,
    MissingDegreeError,
    ShapeMismatchError,
    SiteIndexError,
)

logger = logging.getLogger(__name__)


def keyed_generator(master_seed, *key):
    """
    Counter-based generator addressed by (master_seed, key...)
    The same coordinates always give the same stream, independent of call order.
    """
    seed_sequence = np.random.SeedSequence(int(master_seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.Philox(seed_sequence))


def theorem_applies(p):
    """Concentration of H_p is proved for p = 1 and even p only"""
    return p == 1 or p % 2 == 0


@dataclass(frozen=True)
class ModelParameters:
    """
    System size, the (p, beta_p) terms of the Hamiltonian and the external field.
    An empty terms tuple is a pure field model.
    """
    N: int
    terms: tuple = ()
    h: float = 0.0
    p_max: int = P_MAX

    def __post_init__(self):
        terms = tuple(sorted((int(p), float(beta)) for p, beta in self.terms))
        object.__setattr__(self, "terms", terms)
        object.__setattr__(self, "h", float(self.h))
        if int(self.N) < 1:
            raise ConfigError(f"N must be a positive integer, got {self.N}")
        object.__setattr__(self, "N", int(self.N))
        degrees = [p for p, _ in terms]
        if len(set(degrees)) != len(degrees):
            raise ConfigError(f"terms repeat a degree: {degrees}")
        for p in degrees:
            if p < 1 or p > self.p_max:
                raise ConfigError(f"degree p={p} outside 1..{self.p_max}")

    @property
    def degrees(self):
        return tuple(p for p, _ in self.terms)

    def coefficients(self):
        return dict(self.terms)

    def beta(self, p):
        coefficients = self.coefficients()
        if p not in coefficients:
            raise MissingDegreeError(f"degree p={p} is not among the model terms {self.degrees}")
        return coefficients[p]

    def with_coefficient(self, p, x):
        """Copy with beta_p replaced by x (the term is added if absent)"""
        coefficients = self.coefficients()
        coefficients[p] = float(x)
        return ModelParameters(self.N, tuple(coefficients.items()), self.h, self.p_max)

    def with_size(self, N):
        return ModelParameters(N, self.terms, self.h, self.p_max)

    def coupling_entries(self):
        return sum(self.N ** p for p in self.degrees)

    def check_budget(self, max_entries=MAX_COUPLING_ENTRIES):
        entries = self.coupling_entries()
        if entries > max_entries:
            raise BudgetExceededError(
                f"disorder needs {entries} couplings for N={self.N}, degrees {self.degrees}; "
                f"budget is {max_entries}"
            )
        return entries


@dataclass(frozen=True, eq=False)
class SpinConfiguration:
    """Immutable configuration of N spins, each -1 or +1"""
    spins: np.ndarray

    def __post_init__(self):
        spins = np.array(self.spins, dtype=np.int8)
        if spins.ndim != 1 or spins.size == 0:
            raise ShapeMismatchError(f"a configuration is a non-empty vector, got shape {spins.shape}")
        if not np.all(np.abs(np.asarray(self.spins)) == 1):
            raise ValueError("every spin must be exactly -1 or +1")
        spins.flags.writeable = False
        object.__setattr__(self, "spins", spins)

    @property
    def N(self):
        return self.spins.shape[0]

    def flipped(self, site):
        _check_site(site, self.N)
        spins = self.spins.copy()
        spins[site] = -spins[site]
        return SpinConfiguration(spins)

    @classmethod
    def from_index(cls, index, N):
        return cls(spins_from_indices(np.array([index]), N)[0])

    @classmethod
    def random(cls, N, rng):
        return cls(rng.choice(np.array([-1, 1], dtype=np.int8), size=N))

    def __eq__(self, other):
        return isinstance(other, SpinConfiguration) and np.array_equal(self.spins, other.spins)

    def __hash__(self):
        return hash(self.spins.tobytes())

    def __len__(self):
        return self.N


def spins_from_indices(indices, N):
    """Configuration indices to spin rows: sigma_i = -1 iff bit i of the index is set"""
    bits = (np.asarray(indices, dtype=np.int64)[:, None] >> np.arange(N, dtype=np.int64)) & 1
    return (1 - 2 * bits).astype(np.int8)


@dataclass(frozen=True, eq=False)
class DisorderRealization:
    """Gaussian coupling tensors per degree, dense and row-major over ordered index tuples"""
    N: int
    couplings: dict = field(default_factory=dict)
    master_seed: int = 0
    realization_index: int = 0

    def __post_init__(self):
        frozen = {}
        for p, tensor in self.couplings.items():
            tensor = np.array(tensor, dtype=np.float64)
            if tensor.shape != (self.N,) * int(p):
                raise ShapeMismatchError(
                    f"degree {p} tensor has shape {tensor.shape}, expected {(self.N,) * int(p)}"
                )
            tensor.flags.writeable = False
            frozen[int(p)] = tensor
        object.__setattr__(self, "couplings", frozen)

    @property
    def degrees(self):
        return tuple(sorted(self.couplings))

    def tensor(self, p):
        if p not in self.couplings:
            raise MissingDegreeError(f"disorder has no degree p={p} (has {self.degrees})")
        return self.couplings[p]

    def n_entries(self):
        return sum(t.size for t in self.couplings.values())

    def scaled(self, factor):
        return DisorderRealization(
            self.N,
            {p: t * factor for p, t in self.couplings.items()},
            self.master_seed,
            self.realization_index,
        )


def draw_disorder(params, master_seed, realization_index, max_entries=MAX_COUPLING_ENTRIES):
    """
    Draw i.i.d. standard Gaussian couplings for every degree of the model.
    Each degree has its own stream keyed by (master_seed, realization_index, p).
    """
    params.check_budget(max_entries)
    couplings = {}
    for p in params.degrees:
        rng = keyed_generator(master_seed, STREAM_DISORDER, realization_index, p)
        couplings[p] = rng.standard_normal(size=(params.N,) * p)
    logger.debug(f"Drew disorder {realization_index} (seed {master_seed}) for degrees {params.degrees}")
    return DisorderRealization(params.N, couplings, int(master_seed), int(realization_index))


def _as_spins(config):
    if isinstance(config, SpinConfiguration):
        return config.spins
    return np.asarray(config)


def _check_site(site, N):
    if not 0 <= site < N:
        raise SiteIndexError(f"site {site} outside 0..{N - 1}")


def _check_size(spins, N):
    if spins.shape[-1] != N:
        raise ShapeMismatchError(f"configuration has {spins.shape[-1]} spins, model has N={N}")


def hamiltonian_p_batch(spins, disorder, p):
    """
    H_p for each row of `spins` (shape (m, N)):
    N^{-(p-1)/2} * sum over all N^p ordered tuples of g_{i1..ip} s_i1 ... s_ip
    """
    g = disorder.tensor(p)
    s = np.atleast_2d(np.asarray(spins, dtype=np.float64))
    m, N = s.shape
    _check_size(s, disorder.N)
    partial = s @ g.reshape(N, -1)
    for _ in range(p - 1):
        partial = np.einsum("mi,mir->mr", s, partial.reshape(m, N, -1))
    return partial.reshape(m) * N ** (-(p - 1) / 2)


def hamiltonian_p(config, disorder, p):
    return float(hamiltonian_p_batch(_as_spins(config), disorder, p)[0])


def gibbs_energy_batch(spins, disorder, params):
    """Exponent of the Gibbs weight: sum_p beta_p H_p + h sum_i s_i (positive sign)"""
    s = np.atleast_2d(np.asarray(spins, dtype=np.float64))
    _check_size(s, params.N)
    energy = params.h * s.sum(axis=1)
    for p, beta in params.terms:
        energy = energy + beta * hamiltonian_p_batch(s, disorder, p)
    return energy


def gibbs_energy(config, disorder, params):
    return float(gibbs_energy_batch(_as_spins(config), disorder, params)[0])


def _contract(tensor, vectors):
    for vector in reversed(vectors):
        tensor = tensor @ vector
    return float(tensor)


def _flip_delta_p(spins, site, tensor, p):
    """
    Change of H_p when `site` flips, by telescoping over the p tensor axes:
    only the slab through `site` on each axis contributes, O(p N^{p-1}).
    """
    s = np.asarray(spins, dtype=np.float64)
    flipped = s.copy()
    flipped[site] = -s[site]
    total = 0.0
    for axis in range(p):
        slab = np.take(tensor, site, axis=axis)
        total += _contract(slab, [flipped] * axis + [s] * (p - 1 - axis))
    return -2.0 * s[site] * total * s.shape[0] ** (-(p - 1) / 2)


def flip_delta(config, site, disorder, params):
    """gibbs_energy(config with `site` flipped) - gibbs_energy(config)"""
    spins = _as_spins(config)
    _check_size(spins, params.N)
    _check_site(site, params.N)
    delta = -2.0 * params.h * spins[site]
    for p, beta in params.terms:
        tensor = disorder.tensor(p)
        if beta != 0.0:
            delta += beta * _flip_delta_p(spins, site, tensor, p)
    return float(delta)


class LocalFieldCache:
    """
    Flip deltas for one mutable configuration owned by a single chain.
    Degrees 1 and 2 use cached local fields updated on every accepted flip;
    higher degrees fall back to the slab contraction of flip_delta.
    """

    def __init__(self, spins, disorder, params):
        self.spins = np.array(spins, dtype=np.int8)
        _check_size(self.spins, params.N)
        self.disorder = disorder
        self.params = params
        coefficients = params.coefficients()
        for p in coefficients:
            disorder.tensor(p)

        self._field = np.full(params.N, params.h)
        if coefficients.get(1, 0.0) != 0.0:
            self._field = self._field + coefficients[1] * disorder.tensor(1)

        self._pair = None
        if coefficients.get(2, 0.0) != 0.0:
            g = disorder.tensor(2)
            pair = g + g.T
            np.fill_diagonal(pair, 0.0)
            self._pair = pair * (coefficients[2] / np.sqrt(params.N))

        self._higher = [
            (p, beta, disorder.tensor(p)) for p, beta in params.terms if p >= 3 and beta != 0.0
        ]
        self.resync()

    def resync(self):
        """Rebuild the cached local fields from the current spins"""
        if self._pair is not None:
            self._pair_field = self._pair @ self.spins.astype(np.float64)

    def delta(self, site):
        local = self._field[site]
        if self._pair is not None:
            local += self._pair_field[site]
        delta = -2.0 * self.spins[site] * local
        for p, beta, tensor in self._higher:
            delta += beta * _flip_delta_p(self.spins, site, tensor, p)
        return float(delta)

    def flip(self, site):
        old = self.spins[site]
        if self._pair is not None:
            self._pair_field += self._pair[:, site] * (-2.0 * old)
        self.spins[site] = -old


def overlap(a, b):
    """R(a, b) = N^{-1} sum_i a_i b_i"""
    a = _as_spins(a).astype(np.int64)
    b = _as_spins(b).astype(np.int64)
    if a.shape != b.shape:
        raise ShapeMismatchError(f"overlap of configurations with shapes {a.shape} and {b.shape}")
    return float(a @ b) / a.shape[0]


@dataclass(frozen=True, eq=False)
class OverlapMatrix:
    """Symmetric n x n matrix of replica overlaps with unit diagonal"""
    values: np.ndarray
    N: int

    @property
    def n(self):
        return self.values.shape[0]

    def __getitem__(self, pair):
        return float(self.values[pair])

    def check(self, atol=1e-12):
        """Symmetry, unit diagonal and membership of the lattice {-1 + 2k/N}"""
        values = self.values
        symmetric = np.allclose(values, values.T, atol=atol, rtol=0.0)
        unit_diagonal = np.allclose(np.diag(values), 1.0, atol=atol, rtol=0.0)
        k = (values + 1.0) * self.N / 2.0
        on_lattice = np.allclose(k, np.round(k), atol=atol * self.N, rtol=0.0)
        in_range = bool(np.all(np.abs(values) <= 1.0 + atol))
        return bool(symmetric and unit_diagonal and on_lattice and in_range)


def overlap_matrix(configs):
    rows = np.stack([_as_spins(c) for c in configs]).astype(np.int64)
    if rows.shape[0] < 2:
        raise ShapeMismatchError(f"an overlap matrix needs at least 2 replicas, got {rows.shape[0]}")
    N = rows.shape[1]
    return OverlapMatrix((rows @ rows.T) / N, N)
