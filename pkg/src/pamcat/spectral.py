"""Small-system spectral oracles and numerical checks of the psi and Green-operator bounds.

The joint process of the exclusion configuration (time-scaled by ``1/kappa``)
and a rate-6 walker has generator ``A = (1/kappa) L + Lap``.  On a small torus
with a fixed particle number its state space can be enumerated, and the top
of the spectrum of ``A + V`` is the long-time growth rate of
``E exp(int_0^t V(Z_s) ds)``.
"""
from __future__ import annotations

import functools
import math
from dataclasses import dataclass, field
from itertools import combinations

import numpy as np
from scipy import sparse
from scipy.special import comb

from ._backend import kernels
from .errors import NumericalError, ValidationError
from .exclusion import ExclusionState, TorusLattice
from .lattice_kernels import green_value, verify_kernel_bounds, wrapped_kernel_1d
from .parallel import fill_chunks
from .rng import check_seed, generator, stream_base
from .stats import fit_log_slope

__all__ = [
    "SmallSystem",
    "EigenResult",
    "top_eigenpair",
    "top_eigenvalue",
    "mc_growth_slope",
    "PsiQuery",
    "one_kappa",
    "psi_kernel",
    "compute_psi",
    "PsiBoundReport",
    "check_psi_bounds",
    "certified_kernel_constant",
    "GreenMomentReport",
    "green_operator_moment_check",
]


# --- sector enumeration ------------------------------------------------------------


class SmallSystem:
    """Fixed-particle-number sector of exclusion on a small torus, times the walker site.

    Configurations are ranked in colexicographic order of their occupied
    sites, ``rank = sum_k C(c_k, k)`` for ``c_1 < c_2 < ...``; the state
    ``(config, x)`` has index ``rank * site_count + x``.
    """

    def __init__(self, lattice: TorusLattice, n_particles: int, walker: bool = True):
        n = lattice.site_count
        if n > 64:
            raise ValidationError(f"site_count must be <= 64, got {n}")
        if not 0 <= n_particles <= n:
            raise ValidationError("particle number must lie in [0, site_count]")
        self.lattice = lattice
        self.n_particles = int(n_particles)
        self.walker = bool(walker)
        self.n_configs = int(comb(n, n_particles, exact=True))
        self.binom = np.array([[comb(c, m, exact=True) for m in range(n_particles + 2)]
                               for c in range(n)], dtype=np.int64)
        configs = np.zeros((self.n_configs, n), dtype=np.uint8)
        for sites in combinations(range(n), n_particles):
            configs[self.rank_sites(sites)][list(sites)] = 1
        self.configs = configs

    @property
    def site_count(self) -> int:
        return self.lattice.site_count

    @property
    def size(self) -> int:
        return self.n_configs * (self.site_count if self.walker else 1)

    def rank_sites(self, sites) -> int:
        return int(sum(self.binom[c, k + 1] for k, c in enumerate(sorted(sites))))

    def rank(self, occ: np.ndarray) -> np.ndarray:
        """Colex ranks of configurations given as rows of a 0/1 array."""
        occ = np.atleast_2d(occ).astype(np.int64)
        m = np.cumsum(occ, axis=1)
        cols = np.arange(occ.shape[1])[None, :]
        return np.sum(occ * self.binom[cols, np.minimum(m, self.n_particles + 1)], axis=1)

    @functools.cached_property
    def exclusion_generator(self) -> sparse.csr_matrix:
        """Stirring generator ``L`` (rate 1/6 per bond) on the sector."""
        ba, bb = self.lattice.bond_a, self.lattice.bond_b
        rows, cols = [], []
        for j in range(len(ba)):
            diff = self.configs[:, ba[j]] != self.configs[:, bb[j]]
            src = np.nonzero(diff)[0]
            if src.size == 0:
                continue
            sw = self.configs[src].copy()
            sw[:, [ba[j], bb[j]]] = sw[:, [bb[j], ba[j]]]
            rows.append(src)
            cols.append(self.rank(sw))
        if rows:
            r = np.concatenate(rows)
            c = np.concatenate(cols)
        else:
            r = c = np.zeros(0, dtype=np.int64)
        off = sparse.coo_matrix((np.full(r.size, 1.0 / 6.0), (r, c)),
                                shape=(self.n_configs, self.n_configs)).tocsr()
        return (off - sparse.diags(np.asarray(off.sum(axis=1)).ravel())).tocsr()

    @functools.cached_property
    def walker_generator(self) -> sparse.csr_matrix:
        """Lattice Laplacian (rate 1 per neighbour) on the torus sites."""
        n = self.site_count
        nbr = self.lattice.neighbors
        off = sparse.coo_matrix((np.ones(6 * n), (np.repeat(np.arange(n), 6), nbr.ravel())),
                                shape=(n, n)).tocsr()
        return (off - 6.0 * sparse.identity(n)).tocsr()

    def generator(self, kappa: float) -> sparse.csr_matrix:
        """``(1/kappa) L + Lap`` on the joint space (or ``L`` alone without walker)."""
        if not kappa > 0:
            raise ValidationError("kappa must be positive")
        if not self.walker:
            return self.exclusion_generator.copy()
        n = self.site_count
        A = sparse.kron(self.exclusion_generator / kappa, sparse.identity(n)) \
            + sparse.kron(sparse.identity(self.n_configs), self.walker_generator)
        return A.tocsr()


@dataclass
class EigenResult:
    value: float
    vector: np.ndarray = field(repr=False)
    residual: float
    iterations: int
    method: str


def top_eigenpair(M, tol: float = 1e-9, max_iter: int = 200_000,
                  dense_limit: int = 10_000) -> EigenResult:
    """Top eigenpair of a real symmetric matrix by shifted power iteration.

    The shift from Gershgorin's theorem makes ``M + sI`` positive
    semidefinite, so its dominant eigenvalue is the top of the spectrum of
    ``M``.  Iteration stops once the residual ``r`` satisfies
    ``r^2 <= tol * scale``; for a symmetric matrix the Rayleigh quotient is
    then within about ``tol`` of the eigenvalue times ``scale / gap``.  If the
    cap is hit, small matrices fall back to a dense eigensolver.
    """
    M = sparse.csr_matrix(M, dtype=float)
    n = M.shape[0]
    if M.shape != (n, n):
        raise ValidationError("matrix must be square")
    diag = M.diagonal()
    radius = np.asarray(abs(M).sum(axis=1)).ravel() - np.abs(diag)
    shift = max(0.0, -float(np.min(diag - radius)))
    scale = max(1.0, float(np.max(np.abs(diag) + radius)))
    B = (M + shift * sparse.identity(n, format="csr")).tocsr()
    v = np.ones(n) / math.sqrt(n)
    res_tol = math.sqrt(tol * scale) * 1e-2
    theta = 0.0
    res = math.inf
    for it in range(1, max_iter + 1):
        w = B @ v
        theta = float(v @ w)
        res = float(np.linalg.norm(w - theta * v))
        if res <= res_tol:
            return EigenResult(theta - shift, v, res, it, "power")
        nw = np.linalg.norm(w)
        if not nw > 0 or not np.isfinite(nw):
            break
        v = w / nw
    if n <= dense_limit:
        vals, vecs = np.linalg.eigh(M.toarray())
        vec = vecs[:, -1]
        r = float(np.linalg.norm(M @ vec - vals[-1] * vec))
        return EigenResult(float(vals[-1]), vec, r, max_iter, "dense")
    raise NumericalError(f"power iteration did not converge (residual {res:.3g})")


def top_eigenvalue(system: SmallSystem, kappa: float, V, tol: float = 1e-9) -> float:
    """``sup Sp(A + V)`` for a potential ``V`` on the sector states."""
    V = np.asarray(V, dtype=float).ravel()
    if V.shape != (system.size,):
        raise ValidationError(f"V must have one entry per state ({system.size})")
    M = system.generator(kappa) + sparse.diags(V)
    return top_eigenpair(M, tol=tol).value


def mc_growth_slope(system: SmallSystem, kappa: float, V, window=(20.0, 40.0),
                    n_times: int = 11, samples: int = 20_000, seed: int = 0,
                    stream0: int | None = None, batches: int = 100):
    """Slope of ``t -> log E exp(int_0^t V(Z_s) ds)`` over ``window`` by direct simulation.

    The chain starts uniformly on the sector.  Returns ``(slope, stderr)``.
    """
    V = np.ascontiguousarray(V, dtype=float).ravel()
    if V.shape != (system.size,):
        raise ValidationError("V must have one entry per state")
    t0, t1 = map(float, window)
    if not 0 <= t0 < t1:
        raise ValidationError("window must satisfy 0 <= t_min < t_max")
    times = np.linspace(t0, t1, n_times)
    lat = system.lattice
    out = np.empty((samples, n_times))
    s0 = stream_base("spectral") if stream0 is None else int(stream0)
    seed = check_seed(seed)

    def fill(sample0, chunk):
        kernels.sector_integrals(lat.neighbors, lat.bond_a, lat.bond_b, system.n_particles,
                                 system.binom, V, float(kappa), system.walker, times, seed,
                                 s0, sample0, chunk)

    fill_chunks(fill, out, min_chunk=256)
    shift = float(V.mean()) * times
    w = np.exp(out - shift[None, :])
    b = min(batches, samples)
    edges = np.arange(b + 1) * samples // b
    bm = np.add.reduceat(w, edges[:-1], axis=0) / np.diff(edges)[:, None]
    fit = fit_log_slope(times, bm, shift)
    return fit.slope, fit.stderr


# --- psi -----------------------------------------------------------------------


def one_kappa(kappa: float) -> float:
    """``1[kappa] = 1 + 1/(6 kappa)``."""
    if not kappa > 0:
        raise ValidationError("kappa must be positive")
    return 1.0 + 1.0 / (6.0 * kappa)


@dataclass(frozen=True)
class PsiQuery:
    eta: ExclusionState
    x: int
    kappa: float
    T: float

    def __post_init__(self):
        if not self.kappa > 0 or not self.T > 0:
            raise ValidationError("kappa and T must be positive")


@functools.lru_cache(maxsize=64)
def _psi_kernel_cached(kappa, T, L, nodes_per_unit):
    n_int = max(1, math.ceil(T))
    x, w = np.polynomial.legendre.leggauss(nodes_per_unit)
    edges = np.linspace(0.0, T, n_int + 1)
    acc3 = np.zeros((L, L, L))
    rate = 6.0 * one_kappa(kappa) / 3.0  # per-coordinate walk time per unit s
    for a, b in zip(edges[:-1], edges[1:]):
        s = 0.5 * (b - a) * x + 0.5 * (a + b)
        ws = 0.5 * (b - a) * w
        for si, wi in zip(s, ws):
            q = wrapped_kernel_1d(rate * si, L)
            acc3 += wi * q[:, None, None] * q[None, :, None] * q[None, None, :]
    acc3.setflags(write=False)
    return acc3


def psi_kernel(kappa: float, T: float, L: int, nodes_per_unit: int = 64) -> np.ndarray:
    """``K(z) = int_0^T p_{6 s 1[kappa]}(z) ds`` on the torus, by composite Gauss-Legendre.

    The wrapped kernel is exact, so the only error is the s-quadrature of an
    analytic integrand.
    """
    return _psi_kernel_cached(float(kappa), float(T), int(L), int(nodes_per_unit))


def _psi_all(eta: ExclusionState, rho: float, kappa: float, T: float) -> np.ndarray:
    L = eta.lattice.side_length
    K = psi_kernel(kappa, T, L)
    c = eta.as_cube().astype(float) - rho
    return np.real(np.fft.ifftn(np.fft.fftn(K) * np.fft.fftn(c))).ravel()


def compute_psi(q: PsiQuery, rho: float) -> float:
    """``psi(eta, x) = int_0^T sum_z p_{6 s 1[kappa]}(x - z) (eta(z) - rho) ds``."""
    lat = q.eta.lattice
    Kx = _kernel_from(psi_kernel(q.kappa, q.T, lat.side_length), lat, q.x)
    return float(np.sum(Kx * (q.eta.occupancy - rho)))


@dataclass
class PsiBoundReport:
    C: float
    G: float
    n_samples: int
    max_ratio: dict
    passed: dict

    @property
    def all_passed(self) -> bool:
        return all(self.passed.values())


def check_psi_bounds(samples, kappa: float, T: float, rho: float, C: float | None = None,
                     seed: int = 0) -> PsiBoundReport:
    """Check the three psi bounds on a list of configurations.

    For each configuration a site ``x``, a neighbouring pair ``a, b`` and a
    bond ``{a, b}`` are drawn at random; reported ratios are observed value
    over bound, so ``<= 1`` means the bound holds:

    * ``gradient``: ``|psi(eta, b) - psi(eta, a)| / (2 C sqrt(T))`` (needs ``T >= 1``);
    * ``swap``: ``|psi(eta^{ab}, x) - psi(eta, x)| / (2 G)``;
    * ``sum_squares``: ``sum_{a,b} (psi(eta^{ab}, x) - psi(eta, x))^2 / (G / 6)``.

    ``C`` defaults to the smallest constant certified by
    :func:`verify_kernel_bounds` on a dense grid.
    """
    samples = list(samples)
    if not samples:
        raise ValidationError("samples must be nonempty")
    if C is None:
        C = certified_kernel_constant()
    G = green_value((0, 0, 0))
    gen = generator(seed, stream_base("psi"))
    ratios = {"gradient": 0.0, "swap": 0.0, "sum_squares": 0.0}
    for eta in samples:
        lat = eta.lattice
        K = psi_kernel(kappa, T, lat.side_length)
        psi = _psi_all(eta, rho, kappa, T)
        x = int(gen.integers(lat.site_count))
        a = int(gen.integers(lat.site_count))
        b = int(lat.neighbors[a, gen.integers(6)])
        ratios["gradient"] = max(ratios["gradient"], abs(psi[b] - psi[a]) / (2 * C * math.sqrt(T)))
        # swapping a and b changes psi(x) by (eta(b) - eta(a)) (K(x - a) - K(x - b))
        Kx = _kernel_from(K, lat, x)
        occ = eta.occupancy.astype(float)
        j = int(gen.integers(lat.bond_count))
        ja, jb = lat.bond_a[j], lat.bond_b[j]
        d = (occ[jb] - occ[ja]) * (Kx[ja] - Kx[jb])
        ratios["swap"] = max(ratios["swap"], abs(d) / (2 * G))
        dall = (occ[lat.bond_b] - occ[lat.bond_a]) * (Kx[lat.bond_a] - Kx[lat.bond_b])
        ratios["sum_squares"] = max(ratios["sum_squares"], float(np.sum(dall ** 2)) / (G / 6))
    passed = {k: v <= 1.0 for k, v in ratios.items()}
    if T < 1:
        passed["gradient"] = True  # bound only asserted for T >= 1
    return PsiBoundReport(C, G, len(samples), ratios, passed)


def _kernel_from(K, lat, x):
    """``z -> K(x - z)`` as a flat site array."""
    L = lat.side_length
    c = lat.coords(np.arange(lat.site_count))
    d = (lat.coords(x)[None, :] - c) % L
    return K[d[:, 0], d[:, 1], d[:, 2]]


@functools.lru_cache(maxsize=1)
def certified_kernel_constant() -> float:
    """Smallest ``C`` for the three kernel bounds on a dense grid (t up to 100, 0 <= x_i <= 8).

    The kernels are symmetric under sign flips, so nonnegative coordinates suffice.
    """
    t_grid = np.concatenate([np.linspace(0, 10, 201), np.linspace(10, 100, 181)[1:]])
    r = np.arange(0, 9)
    X = np.stack(np.meshgrid(r, r, r, indexing="ij"), axis=-1).reshape(-1, 3)
    return verify_kernel_bounds(1.0, t_grid, X).smallest_C


# --- Green operator -----------------------------------------------------------


@dataclass
class GreenMomentReport:
    """Outcome of the exponential-moment check.

    ``precondition_ok`` is False when ``||G V||_inf >= 1``; the remaining
    fields are then NaN, which is the expected signal rather than a failure.
    """

    norm_GV: float
    precondition_ok: bool
    estimate: float = math.nan
    stderr: float = math.nan
    bound: float = math.nan
    passed: bool = False
    exact: float = math.nan
    truncation_bias: float = 0.0
    n: int = 0


def _green_potential_norm(support, values):
    # sup of a Green potential of a nonnegative finite measure is attained on the support
    best = 0.0
    for x in support:
        best = max(best, sum(v * green_value(tuple(np.subtract(x, y))) for y, v in zip(support, values)))
    return best


def green_operator_moment_check(V: dict, x=(0, 0, 0), samples: int = 100_000, seed: int = 0,
                                radius: int = 8, stream0: int | None = None) -> GreenMomentReport:
    """Monte Carlo ``E_x exp(int_0^inf V(X_t) dt)`` for a rate-6 walker, against ``1/(1 - ||GV||)``.

    ``V`` maps sites (3-tuples) to nonnegative values.  The walker is followed
    inside the sup-norm ball of ``radius`` around the origin, which must
    contain the support.  For a single-site support the continuation after
    leaving the ball is exact: the walker returns to the site with probability
    ``G(y - s) / G(0)`` and the strong Markov property restarts it there.  For
    larger supports the integral is cut at the first exit and the report
    carries an upper bound on the relative bias.
    """
    support = [tuple(int(c) for c in k) for k, v in V.items() if v != 0]
    values = [float(V[k]) for k in V if V[k] != 0]
    if any(v < 0 for v in values):
        raise ValidationError("V must be nonnegative")
    if any(max(abs(c) for c in s) > radius for s in support):
        raise ValidationError("support must lie inside the envelope")
    x = tuple(int(c) for c in x)
    if max(abs(c) for c in x) > radius:
        raise ValidationError("start must lie inside the envelope")
    norm = _green_potential_norm(support, values) if support else 0.0
    if norm >= 1.0:
        return GreenMomentReport(norm, False)
    bound = 1.0 / (1.0 - norm)
    if not support:
        return GreenMomentReport(norm, True, 1.0, 0.0, bound, True, 1.0, 0.0, samples)
    R = int(radius)
    Vc = np.zeros((2 * R + 1,) * 3)
    for s, v in zip(support, values):
        Vc[s[0] + R, s[1] + R, s[2] + R] = v
    hit = np.zeros((2 * R + 3,) * 3)
    bias = 0.0
    if len(support) == 1:
        s = support[0]
        G0 = green_value((0, 0, 0))
        shell = np.argwhere(np.ones_like(hit, dtype=bool)) - (R + 1)
        shell = shell[np.max(np.abs(shell), axis=1) == R + 1]
        for y in shell:
            d = tuple(int(c) for c in np.subtract(y, s))
            hit[y[0] + R + 1, y[1] + R + 1, y[2] + R + 1] = green_value(d) / G0
        reentry = np.array(s, dtype=np.int64)
        exact = 1.0 / (1.0 - values[0] * G0 / 6.0) if x == s else math.nan
    else:
        reentry = np.zeros(3, dtype=np.int64)
        # return probability from the envelope, times the worst-case gain factor
        r_min = R + 1 - max(max(abs(c) for c in s) for s in support)
        bias = green_value((r_min, 0, 0)) / green_value((0, 0, 0)) * bound
        exact = math.nan
    out = np.empty(samples)
    s0 = stream_base("green") if stream0 is None else int(stream0)
    seed = check_seed(seed)

    def fill(sample0, chunk):
        kernels.walker_potential_integrals(Vc, hit, np.array(x, dtype=np.int64), reentry, R,
                                           seed, s0, sample0, chunk)

    fill_chunks(fill, out, min_chunk=1024)
    w = np.exp(out)
    est = float(w.mean())
    se = float(w.std(ddof=1) / math.sqrt(samples))
    passed = est - 4.0 * se <= bound
    return GreenMomentReport(norm, True, est, se, bound, bool(passed), exact, bias, samples)

