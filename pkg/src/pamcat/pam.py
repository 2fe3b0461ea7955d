"""Annealed moments of the parabolic Anderson model with an exclusion catalyst.

Two independent routes to ``E u(0,t)^p`` on the torus:

* :func:`annealed_moment` integrates ``du/dt = kappa Lap u + xi_t u`` with
  ``u(., 0) = 1`` along sampled catalyst trajectories (:func:`solve_direct`)
  and averages ``u^p``;
* :func:`feynman_kac_estimate` averages ``exp(sum_j int_0^t xi_s(X^j_{kappa s}) ds)``
  over the catalyst started in equilibrium and ``p`` independent rate-6
  walkers from the origin.

Since the Bernoulli product measure is reversible for the stirring dynamics,
the forward-in-time catalyst gives the same law as the time-reversed one.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from ._backend import kernels
from .errors import NumericalError, ValidationError
from .exclusion import ExclusionState, TorusLattice, sample_bernoulli
from .parallel import fill_chunks, get_threads
from .rng import StirringSchedule, check_seed, stream_base

__all__ = [
    "PamConfig",
    "ReactantField",
    "CatalystTrajectory",
    "MomentEstimate",
    "sample_trajectory",
    "solve_direct",
    "fk_exponents",
    "moments_from_exponents",
    "feynman_kac_estimate",
    "annealed_moment",
    "N_BATCHES",
]

N_BATCHES = 100


@dataclass(frozen=True)
class PamConfig:
    """Parameters of one moment computation.

    ``times`` lists the output times (default: ``t_final`` only); the largest
    must equal ``t_final``.
    """

    kappa: float
    rho: float
    p: int = 1
    t_final: float = 1.0
    side: int = 8
    tolerance: float = 1e-8
    samples: int = 10_000
    seed: int = 0
    times: tuple = ()
    batches: int = N_BATCHES

    def __post_init__(self):
        if not self.kappa > 0 or not math.isfinite(self.kappa):
            raise ValidationError(f"kappa must be positive, got {self.kappa}")
        if not 0.0 <= self.rho <= 1.0:
            raise ValidationError(f"rho must lie in [0, 1], got {self.rho}")
        if int(self.p) != self.p or self.p < 1:
            raise ValidationError(f"p must be a positive integer, got {self.p}")
        if not self.t_final > 0 or not math.isfinite(self.t_final):
            raise ValidationError(f"t_final must be positive, got {self.t_final}")
        if int(self.side) != self.side or self.side < 3:
            raise ValidationError(f"side must be an integer >= 3, got {self.side}")
        if self.samples < 2:
            raise ValidationError("at least 2 samples are required")
        if self.batches < 2:
            raise ValidationError("at least 2 batches are required")
        if not self.tolerance > 0:
            raise ValidationError("tolerance must be positive")
        check_seed(self.seed)
        times = tuple(float(t) for t in self.times) or (float(self.t_final),)
        if any(not t > 0 for t in times) or list(times) != sorted(times):
            raise ValidationError("times must be positive and increasing")
        if times[-1] != float(self.t_final):
            raise ValidationError("the last output time must equal t_final")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "p", int(self.p))
        object.__setattr__(self, "side", int(self.side))
        if not self.guard_ok:
            warnings.warn(
                f"walker range {3 * math.sqrt(6 * self.kappa * self.t_final):.3g} is not "
                f"below half the torus side {self.side / 2}; moments carry wrap-around bias",
                RuntimeWarning,
                stacklevel=3,
            )

    @property
    def guard_ratio(self) -> float:
        """Three walker standard deviations over half the side; below 1 is safe."""
        return 3.0 * math.sqrt(6.0 * self.kappa * self.t_final) / (self.side / 2.0)

    @property
    def guard_ok(self) -> bool:
        return self.guard_ratio < 1.0

    @property
    def lattice(self) -> TorusLattice:
        return TorusLattice(self.side)


@dataclass
class ReactantField:
    lattice: TorusLattice
    values: np.ndarray
    time: float
    steps: int = 0

    def __post_init__(self):
        if self.values.shape != (self.lattice.site_count,):
            raise ValueError("one value per site is required")

    def at(self, x) -> float:
        return float(self.values[self.lattice.index(x)])


@dataclass
class CatalystTrajectory:
    """Initial occupancy plus the stirring events (times, bond indices) on ``[0, t_final]``."""

    initial: ExclusionState
    event_times: np.ndarray
    event_bonds: np.ndarray
    t_final: float

    def state_at(self, t: float) -> ExclusionState:
        state = self.initial.copy()
        occ = state.occupancy
        lat = state.lattice
        ba, bb = lat.bond_a, lat.bond_b
        for j in self.event_bonds[self.event_times <= t]:
            a, b = ba[j], bb[j]
            occ[a], occ[b] = occ[b], occ[a]
        state.time = t
        return state


@dataclass
class MomentEstimate:
    """Estimate of ``E u(0,t)^p``.

    ``log_mean`` is computed without forming ``mean`` first, so it stays
    accurate when ``mean`` would overflow.  ``batch_means`` holds the batch
    averages of ``u^p exp(-rho p t)``, kept for covariance estimates across
    output times.
    """

    p: int
    t: float
    mean: float
    stderr: float
    n: int
    log_mean: float
    guard_ok: bool = True
    method: str = "fk"
    batch_means: np.ndarray | None = field(default=None, repr=False)

    @property
    def rel_stderr(self) -> float:
        return self.stderr / self.mean if self.mean > 0 else math.inf


def _batched(w: np.ndarray, batches: int):
    """Mean and standard error of the mean from contiguous batch means."""
    n = w.shape[0]
    b = min(batches, n)
    edges = np.arange(b + 1) * n // b
    sums = np.add.reduceat(w, edges[:-1], axis=0)
    means = sums / np.diff(edges).reshape((-1,) + (1,) * (w.ndim - 1))
    total = w.mean(axis=0)
    se = means.std(axis=0, ddof=1) / math.sqrt(b)
    return total, se, means


def _estimates(w, shift, p, times, guard_ok, method, batches):
    # w[i, k] = u_i(t_k)^p exp(-shift_k)
    total, se, means = _batched(w, batches)
    out = []
    for k, t in enumerate(times):
        if not total[k] > 0 or not np.isfinite(total[k]):
            raise NumericalError(f"moment estimate at t={t} is not finite and positive")
        log_mean = shift[k] + math.log(total[k])
        scale = math.exp(shift[k])
        out.append(MomentEstimate(p, float(t), math.exp(log_mean), float(se[k]) * scale,
                                  int(w.shape[0]), log_mean, guard_ok, method,
                                  means[:, k].copy()))
    return out


# --- Feynman-Kac ----------------------------------------------------------------


def fk_exponents(config: PamConfig, stream0: int | None = None) -> np.ndarray:
    """Per-walker exponents ``int_0^t xi_s(X^j_{kappa s}) ds``, shape ``(samples, len(times), p)``.

    The integrals are exact: the integrand is piecewise constant between the
    merged walker and stirring events.
    """
    lat = config.lattice
    times = np.asarray(config.times, dtype=np.float64)
    out = np.empty((config.samples, len(times), config.p), dtype=np.float64)
    s0 = stream_base("fk") if stream0 is None else int(stream0)
    nbr, ba, bb = lat.neighbors, lat.bond_a, lat.bond_b
    seed = config.seed

    def fill(sample0, chunk):
        kernels.fk_integrals(nbr, ba, bb, float(config.rho), float(config.kappa), config.p,
                             times, seed, s0, sample0, chunk)

    return fill_chunks(fill, out, min_chunk=1024)


def moments_from_exponents(exponents: np.ndarray, rho: float, times, guard_ok: bool = True,
                           batches: int = N_BATCHES, method: str = "fk") -> list[MomentEstimate]:
    """Moment estimates from a ``(n, len(times), p)`` array of walker exponents."""
    p = exponents.shape[2]
    times = np.asarray(times, dtype=float)
    shift = rho * p * times
    w = np.exp(exponents.sum(axis=2) - shift[None, :])
    return _estimates(w, shift, p, times, guard_ok, method, batches)


def feynman_kac_estimate(config: PamConfig, all_times: bool = False):
    """Feynman-Kac estimate of ``E u(0, t_final)^p`` (a list over ``config.times`` if ``all_times``)."""
    ests = moments_from_exponents(fk_exponents(config), config.rho, config.times,
                                  config.guard_ok, config.batches, "fk")
    return ests if all_times else ests[-1]


# --- direct solver ----------------------------------------------------------------


def sample_trajectory(lattice: TorusLattice, rho: float, t_final: float,
                      rng: StirringSchedule) -> CatalystTrajectory:
    """Equilibrium initial state plus stirring events up to ``t_final``."""
    init = sample_bernoulli(lattice, rho, rng)
    times, bonds, rng.counter = kernels.stir_events(lattice.bond_count, float(t_final),
                                                    rng.seed, rng.stream_id, rng.counter)
    return CatalystTrajectory(init, times, bonds, float(t_final))


def step_limit(kappa: float, tolerance: float = 1e-6) -> float:
    """Largest RK4 substep used by :func:`solve_direct`.

    ``0.1/(6 kappa + 1)`` for tolerances of 1e-6 and above, shrunk like
    ``tolerance^(1/4)`` below that (RK4 global error is fourth order).
    """
    return 0.1 / (6.0 * kappa + 1.0) * min(1.0, (tolerance / 1e-6) ** 0.25)


def solve_direct(config: PamConfig, trajectory: CatalystTrajectory,
                 u0: np.ndarray | None = None) -> ReactantField:
    """Integrate ``du/dt = kappa Lap u + xi_t u`` from ``u0`` (default 1) to ``t_final``.

    The potential is frozen between stirring events; each such interval is
    split into equal RK4 substeps no longer than :func:`step_limit`.
    """
    lat = trajectory.initial.lattice
    if lat.side_length != config.side:
        raise ValidationError("trajectory lattice does not match config.side")
    t_final = float(config.t_final)
    if trajectory.t_final < t_final:
        raise ValidationError("trajectory is shorter than t_final")
    u = np.ones(lat.site_count) if u0 is None else np.array(u0, dtype=np.float64)
    occ = trajectory.initial.occupancy.copy()
    h = step_limit(config.kappa, config.tolerance)
    steps = kernels.solve_rk4(u, lat.neighbors, occ, trajectory.event_times,
                              trajectory.event_bonds, lat.bond_a, lat.bond_b,
                              float(config.kappa), t_final, h)
    if not np.all(np.isfinite(u)):
        raise NumericalError(f"direct solver diverged (substep {h:.3g}, {steps} steps)")
    if np.any(u <= 0):
        raise NumericalError("direct solver lost positivity")
    return ReactantField(lat, u, t_final, int(steps))


def annealed_moment(config: PamConfig, spatial_average: bool = True,
                    stream0: int | None = None) -> MomentEstimate:
    """Average ``u(0, t_final)^p`` over ``config.samples`` catalyst trajectories.

    With ``spatial_average`` each trajectory contributes the mean of ``u(x,t)^p``
    over all sites, which has the same expectation by translation invariance
    of the torus and the equilibrium initial law.
    """
    lat = config.lattice
    s0 = stream_base("catalyst") if stream0 is None else int(stream0)
    shift = config.rho * config.p * config.t_final
    w = np.empty((config.samples, 1))

    def fill(sample0, chunk):
        for i in range(chunk.shape[0]):
            rng = StirringSchedule(config.seed, s0 + sample0 + i)
            traj = sample_trajectory(lat, config.rho, config.t_final, rng)
            u = solve_direct(config, traj).values
            # subtract the shift before raising to the power to avoid overflow
            up = np.exp(config.p * np.log(u) - shift)
            chunk[i, 0] = up.mean() if spatial_average else up[0]

    fill_chunks(fill, w, min_chunk=8)
    return _estimates(w, np.array([shift]), config.p, [config.t_final], config.guard_ok,
                      "direct", config.batches)[0]
