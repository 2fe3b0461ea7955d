"""Simple symmetric exclusion on the periodic cube via the stirring construction.

Every nearest-neighbour bond swaps the states of its endpoints at rate 1/6.
The simulation runs one aggregated clock of rate ``bond_count / 6`` and picks
a bond uniformly at each ring.  A lone particle then performs a rate-1 walk,
which is what makes the duality oracle :func:`duality_expectation` exact.
"""
from __future__ import annotations

import functools
from dataclasses import dataclass, field

import numpy as np

from ._backend import kernels
from .lattice_kernels import torus_kernel
from .parallel import fill_chunks
from .rng import StirringSchedule, check_seed

__all__ = [
    "TorusLattice",
    "ExclusionState",
    "StirringSchedule",
    "sample_bernoulli",
    "evolve",
    "duality_expectation",
    "replica_occupancy",
    "one_point_mc",
]

_STEPS = np.array(
    [[1, 0, 0], [-1, 0, 0], [0, 1, 0], [0, -1, 0], [0, 0, 1], [0, 0, -1]], dtype=np.int64
)


@dataclass(frozen=True)
class TorusLattice:
    """The ``L x L x L`` periodic cube.

    Sites are numbered ``(x1*L + x2)*L + x3``, so a flat site array reshaped to
    ``(L, L, L)`` is indexed ``[x1, x2, x3]``.  Neighbour columns follow the
    order ``+e1, -e1, +e2, -e2, +e3, -e3``.
    """

    side_length: int
    dimension: int = field(default=3, init=False)

    def __post_init__(self):
        if int(self.side_length) != self.side_length or self.side_length < 3:
            raise ValueError(f"side_length must be an integer >= 3, got {self.side_length}")

    @property
    def site_count(self) -> int:
        return self.side_length ** 3

    @property
    def bond_count(self) -> int:
        return 3 * self.site_count

    def index(self, x) -> np.ndarray | int:
        x = np.asarray(x, dtype=np.int64) % self.side_length
        L = self.side_length
        out = (x[..., 0] * L + x[..., 1]) * L + x[..., 2]
        return int(out) if out.ndim == 0 else out

    def coords(self, i) -> np.ndarray:
        L = self.side_length
        i = np.asarray(i, dtype=np.int64)
        return np.stack([i // (L * L), (i // L) % L, i % L], axis=-1)

    @functools.cached_property
    def neighbors(self) -> np.ndarray:
        c = self.coords(np.arange(self.site_count))
        nbr = np.empty((self.site_count, 6), dtype=np.int64)
        for k in range(6):
            nbr[:, k] = self.index(c + _STEPS[k])
        nbr.setflags(write=False)
        return nbr

    @functools.cached_property
    def bond_list(self) -> np.ndarray:
        """``(3 L^3, 2)`` array of unoriented bonds ``{i, i + e_k}``, k = 1, 2, 3."""
        nbr = self.neighbors
        i = np.arange(self.site_count)
        bonds = np.concatenate([np.stack([i, nbr[:, 2 * k]], axis=1) for k in range(3)])
        bonds = np.ascontiguousarray(bonds, dtype=np.int64)
        bonds.setflags(write=False)
        return bonds

    @property
    def bond_a(self) -> np.ndarray:
        return np.ascontiguousarray(self.bond_list[:, 0])

    @property
    def bond_b(self) -> np.ndarray:
        return np.ascontiguousarray(self.bond_list[:, 1])


@dataclass
class ExclusionState:
    """Occupancy ``eta`` on a torus together with the elapsed exclusion time."""

    lattice: TorusLattice
    occupancy: np.ndarray
    time: float = 0.0
    particle_count: int = field(default=-1)

    def __post_init__(self):
        occ = np.ascontiguousarray(self.occupancy, dtype=np.uint8)
        if occ.shape != (self.lattice.site_count,):
            raise ValueError("occupancy must have one entry per site")
        if np.any(occ > 1):
            raise ValueError("occupancy must be 0/1")
        self.occupancy = occ
        count = int(occ.sum())
        if self.particle_count not in (-1, count):
            raise ValueError("particle_count does not match occupancy")
        self.particle_count = count
        if not self.time >= 0:
            raise ValueError("time must be nonnegative")

    def copy(self) -> "ExclusionState":
        return ExclusionState(self.lattice, self.occupancy.copy(), self.time)

    def as_cube(self) -> np.ndarray:
        L = self.lattice.side_length
        return self.occupancy.reshape(L, L, L)


def _check_rho(rho):
    if not 0.0 <= rho <= 1.0:
        raise ValueError(f"rho must lie in [0, 1], got {rho}")


def sample_bernoulli(lattice: TorusLattice, rho: float, rng: StirringSchedule) -> ExclusionState:
    """Draw from the product measure with density ``rho``; advances ``rng``."""
    _check_rho(rho)
    occ, rng.counter = kernels.bernoulli(lattice.site_count, float(rho), rng.seed,
                                         rng.stream_id, rng.counter)
    return ExclusionState(lattice, np.asarray(occ, dtype=np.uint8), 0.0)


def evolve(state: ExclusionState, dt: float, rng: StirringSchedule) -> ExclusionState:
    """Run the stirring dynamics for exclusion time ``dt``, in place; returns ``state``."""
    if not dt >= 0:
        raise ValueError(f"dt must be nonnegative, got {dt}")
    lat = state.lattice
    rng.counter = kernels.stir(state.occupancy, lat.bond_a, lat.bond_b, float(dt),
                               rng.seed, rng.stream_id, rng.counter)
    state.time += dt
    return state


def duality_expectation(state: ExclusionState, x, t: float):
    """Exact ``E_eta xi_t(x) = sum_y p_t(x - y) eta(y)`` with the torus-wrapped kernel.

    ``x`` is a site index or an array of site indices.
    """
    if not t >= 0:
        raise ValueError(f"t must be nonnegative, got {t}")
    lat = state.lattice
    L = lat.side_length
    if t == 0:
        vals = state.occupancy[np.asarray(x)].astype(float)
    else:
        K = torus_kernel(t, L)
        # circular convolution of the kernel with eta
        conv = np.real(np.fft.ifftn(np.fft.fftn(K) * np.fft.fftn(state.as_cube().astype(float))))
        vals = np.clip(conv.ravel()[np.asarray(x)], 0.0, 1.0)
    return float(vals) if np.ndim(vals) == 0 else vals


def replica_occupancy(lattice: TorusLattice, times, sites, n_replicas: int, seed: int,
                      stream0: int, initial: ExclusionState | None = None,
                      rho: float | None = None) -> np.ndarray:
    """Occupancies ``(n_replicas, len(times), len(sites))`` of independent stirring runs.

    Each replica starts from ``initial`` or, if ``rho`` is given, from its own
    Bernoulli(rho) sample.  Replica ``i`` uses stream ``stream0 + i``.
    """
    if (initial is None) == (rho is None):
        raise ValueError("give exactly one of initial or rho")
    times = np.ascontiguousarray(times, dtype=np.float64)
    if times.ndim != 1 or np.any(np.diff(times) < 0) or np.any(times < 0):
        raise ValueError("times must be a nondecreasing list of nonnegative values")
    sites = np.ascontiguousarray(np.atleast_1d(sites), dtype=np.int64)
    if rho is not None:
        _check_rho(rho)
        occ0 = np.zeros(lattice.site_count, dtype=np.uint8)
    else:
        occ0 = initial.occupancy
    out = np.zeros((int(n_replicas), len(times), len(sites)), dtype=np.uint8)
    ba, bb = lattice.bond_a, lattice.bond_b
    seed = check_seed(seed)

    def fill(sample0, chunk):
        kernels.replica_occupancy(occ0, rho is not None, float(rho or 0.0), ba, bb, times,
                                  sites, seed, stream0, sample0, chunk)

    return fill_chunks(fill, out)


@dataclass
class OnePointEstimate:
    site: int
    time: float
    empirical_mean: float
    stderr: float
    oracle_mean: float
    n: int

    @property
    def z_score(self) -> float:
        if self.stderr == 0:
            return 0.0 if self.empirical_mean == self.oracle_mean else float("inf")
        return (self.empirical_mean - self.oracle_mean) / self.stderr


def one_point_mc(state: ExclusionState, sites, t: float, n_replicas: int, seed: int,
                 stream0: int) -> list[OnePointEstimate]:
    """Monte Carlo ``E_eta xi_t(x)`` at each site, paired with the duality oracle."""
    sites = np.atleast_1d(np.asarray(sites, dtype=np.int64))
    occ = replica_occupancy(state.lattice, [t], sites, n_replicas, seed, stream0,
                            initial=state)[:, 0, :].astype(float)
    oracle = np.atleast_1d(duality_expectation(state, sites, t))
    means = occ.mean(axis=0)
    # binomial standard error with the oracle mean, so exact 0/1 cases give 0
    se = np.sqrt(oracle * (1.0 - oracle) / n_replicas)
    return [OnePointEstimate(int(s), float(t), float(m), float(e), float(o), int(n_replicas))
            for s, m, e, o in zip(sites, means, se, oracle)]
