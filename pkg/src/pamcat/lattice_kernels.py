"""Transition kernels and Green functions of the continuous-time simple random walk.

All lattice kernels use the total-jump-rate-1 convention: in ``d = 1`` the walk
jumps left/right at rate 1/2 each, and in ``d = 3`` each coordinate moves as an
independent one-dimensional walk of rate 1/3.  A walker with generator
``Delta`` (rate 6) at time ``t`` is therefore described by ``kernel_value(6 t, x)``.
"""
from __future__ import annotations

import functools
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate, special

__all__ = [
    "KernelQuery",
    "KernelBoundReport",
    "kernel_1d",
    "kernel_value",
    "wrapped_kernel_1d",
    "torus_kernel",
    "green_value",
    "green_value_bessel",
    "cutoff_green",
    "gaussian_kernel",
    "verify_kernel_bounds",
]

UNIT_VECTORS = np.array(
    [[1, 0, 0], [-1, 0, 0], [0, 1, 0], [0, -1, 0], [0, 0, 1], [0, 0, -1]], dtype=np.int64
)


@dataclass(frozen=True)
class KernelQuery:
    """A request for ``p_t^{(d)}(x)``."""

    dimension: int
    time: float
    displacement: tuple[int, ...]

    def __post_init__(self):
        if self.dimension not in (1, 3):
            raise ValueError(f"dimension must be 1 or 3, got {self.dimension}")
        if len(self.displacement) != self.dimension:
            raise ValueError("displacement length does not match dimension")
        if not self.time >= 0:
            raise ValueError(f"time must be nonnegative, got {self.time}")

    def value(self) -> float:
        return float(kernel_value(self.time, self.displacement))


def _check_time(t):
    t = np.asarray(t, dtype=float)
    if np.any(~(t >= 0)):
        raise ValueError("kernel time must be nonnegative")
    return t


def kernel_1d(t, n):
    """``p_t^{(1)}(n) = exp(-t) I_n(t)`` for the rate-1 walk on Z."""
    t = _check_time(t)
    return special.ive(np.abs(np.asarray(n)), t)


def kernel_value(t, x):
    """Transition probability ``p_t(x)`` of the rate-1 walk on Z or Z^3.

    ``x`` is an integer, or an integer array whose last axis has length 3.
    Scalars in give a float out.
    """
    t = _check_time(t)
    x = np.asarray(x)
    if x.ndim == 0:
        out = kernel_1d(t, x)
    else:
        if x.shape[-1] == 1:
            out = kernel_1d(t, x[..., 0])
        elif x.shape[-1] == 3:
            tau = t / 3.0
            out = (
                special.ive(np.abs(x[..., 0]), tau)
                * special.ive(np.abs(x[..., 1]), tau)
                * special.ive(np.abs(x[..., 2]), tau)
            )
        else:
            raise ValueError("displacement must have 1 or 3 components")
    return float(out) if np.ndim(out) == 0 else out


def wrapped_kernel_1d(t: float, L: int) -> np.ndarray:
    """Kernel of the rate-1 walk on the cycle Z/LZ at time ``t`` (length-L array).

    Exact up to rounding: evaluated through the cycle's Fourier modes.
    """
    _check_time(t)
    j = np.arange(L)
    decay = np.exp(-t * (1.0 - np.cos(2.0 * np.pi * j / L)))
    n = np.arange(L)
    return (decay[None, :] * np.cos(2.0 * np.pi * np.outer(n, j) / L)).sum(axis=1) / L


def torus_kernel(t: float, L: int) -> np.ndarray:
    """``p_t`` on the L x L x L torus, indexed ``[x1, x2, x3]`` with wrap-around."""
    q = wrapped_kernel_1d(t / 3.0, L)
    return q[:, None, None] * q[None, :, None] * q[None, None, :]


# --- Green function -----------------------------------------------------------


def _green_fourier_rule(x, n):
    # Inner k3 integral done in closed form; the remaining (k1, k2) square is
    # split along its diagonal and Duffy-mapped so the 1/|k| corner singularity
    # is absorbed by the Jacobian.
    a1, a2, a3 = x
    nodes, weights = np.polynomial.legendre.leggauss(n)
    s = 0.5 * (nodes + 1.0)
    ws = 0.5 * weights
    S, Vv = np.meshgrid(s, s, indexing="ij")
    W = np.outer(ws, ws)

    def integrand(k1, k2):
        A = 1.0 - (np.cos(k1) + np.cos(k2)) / 3.0
        # A - 1/3 written with half-angle sines to avoid cancellation near 0
        amb = (2.0 * np.sin(0.5 * k1) ** 2 + 2.0 * np.sin(0.5 * k2) ** 2) / 3.0
        apb = A + 1.0 / 3.0
        root = np.sqrt(amb * apb)
        val = np.cos(a1 * k1) * np.cos(a2 * k2) / root
        if a3:
            z = (1.0 / 3.0) / (A + root)  # (A - root)/B, rationalised
            val = val * z ** a3
        return val

    k1 = np.pi * S
    k2 = np.pi * S * Vv
    tot = integrand(k1, k2) + integrand(k2, k1)
    return float(np.sum(W * S * tot))  # pi^2 Jacobian cancels the 1/pi^2 prefactor


@functools.lru_cache(maxsize=4096)
def _green_cached(x):
    n = 32
    prev = _green_fourier_rule(x, n)
    while True:
        n *= 2
        cur = _green_fourier_rule(x, n)
        if abs(cur - prev) <= 1e-12 * abs(cur) or n >= 1024:
            return cur
        prev = cur


def _canonical(x):
    x = tuple(sorted(abs(int(c)) for c in x))
    if len(x) != 3:
        raise ValueError("green_value expects a 3-vector")
    return x


def green_value(x=(0, 0, 0)) -> float:
    """Green function ``G(x) = int_0^inf p_t(x) dt`` of the rate-1 walk on Z^3.

    Computed from the Brillouin-zone integral ``(2 pi)^-3 int cos(k.x)/(1 - phi(k)) dk``:
    the integral along one axis is done analytically and the remaining
    two-dimensional integral by Duffy-transformed Gauss-Legendre rules,
    doubled until successive values agree to 1e-12.
    """
    return _green_cached(_canonical(x))


@functools.lru_cache(maxsize=4096)
def _green_bessel_cached(x):
    def f(t):
        tau = t / 3.0
        return special.ive(x[0], tau) * special.ive(x[1], tau) * special.ive(x[2], tau)

    r2 = float(sum(c * c for c in x))
    split = max(50.0, 4.0 * r2)
    head, _ = integrate.quad(f, 0.0, split, limit=500, epsabs=1e-14, epsrel=1e-13)
    tail, _ = integrate.quad(f, split, np.inf, limit=500, epsabs=1e-14, epsrel=1e-13)
    return head + tail


def green_value_bessel(x=(0, 0, 0)) -> float:
    """``G(x)`` from the time integral of the Bessel-product kernel (adaptive quadrature)."""
    return _green_bessel_cached(_canonical(x))


def cutoff_green(T: float) -> float:
    """Cut-off Green function ``G_T(0) = int_T^inf p_s(0) ds``.

    Nonincreasing in ``T``; equals ``green_value(0)`` at ``T = 0``.
    """
    if not T >= 0:
        raise ValueError(f"cutoff time must be nonnegative, got {T}")
    G0 = green_value((0, 0, 0))
    if T == 0:
        return G0

    def f(s):
        return special.ive(0, s / 3.0) ** 3

    pts = [p for p in (1.0, 10.0, 100.0, 1000.0) if p < T]
    head, _ = integrate.quad(f, 0.0, T, points=pts or None, limit=1000,
                             epsabs=1e-15, epsrel=1e-13)
    return max(G0 - head, 0.0)


def gaussian_kernel(t, x):
    """Heat kernel of the continuous Laplacian on R^3: ``(4 pi t)^-3/2 exp(-|x|^2/4t)``."""
    t = np.asarray(t, dtype=float)
    if np.any(~(t > 0)):
        raise ValueError("gaussian_kernel requires t > 0")
    x = np.asarray(x, dtype=float)
    r2 = np.sum(x * x, axis=-1)
    out = (4.0 * np.pi * t) ** -1.5 * np.exp(-r2 / (4.0 * t))
    return float(out) if np.ndim(out) == 0 else out


# --- kernel bounds --------------------------------------------------------------


@dataclass
class KernelBoundReport:
    C: float
    passed: dict = field(default_factory=dict)
    max_ratio: dict = field(default_factory=dict)

    @property
    def all_passed(self) -> bool:
        return all(self.passed.values())

    @property
    def smallest_C(self) -> float:
        """Smallest constant that satisfies all three bounds on the grids checked."""
        return max(self.max_ratio.values())


def verify_kernel_bounds(C: float, t_grid, x_grid) -> KernelBoundReport:
    """Check the three uniform kernel bounds on grids of times and sites.

    Bounds checked, for all grid ``t`` and ``x`` and unit vectors ``e``::

        p^{(1)}_t(n)          <= C (1+t)^(-1/2)
        p_t(x)                <= C (1+t)^(-3/2)
        |p_t(x+e) - p_t(x)|   <= C (1+t)^(-2)

    The one-dimensional bound is checked on every coordinate appearing in
    ``x_grid``.
    """
    t_grid = np.asarray(t_grid, dtype=float)
    x_grid = np.atleast_2d(np.asarray(x_grid, dtype=np.int64))
    if t_grid.size == 0 or x_grid.size == 0:
        raise ValueError("grids must be nonempty")
    _check_time(t_grid)
    coords = np.unique(x_grid.ravel())
    shifted = x_grid[:, None, :] + UNIT_VECTORS[None, :, :]
    r1 = r3 = rg = 0.0
    for t in t_grid:
        p1 = kernel_1d(t, coords)
        r1 = max(r1, float(np.max(p1)) * math.sqrt(1.0 + t))
        p3 = kernel_value(t, x_grid)
        r3 = max(r3, float(np.max(p3)) * (1.0 + t) ** 1.5)
        diff = np.abs(kernel_value(t, shifted) - np.asarray(p3)[:, None])
        rg = max(rg, float(np.max(diff)) * (1.0 + t) ** 2)
    ratios = {"one_dim": r1, "three_dim": r3, "gradient": rg}
    return KernelBoundReport(
        C=C,
        passed={k: v <= C for k, v in ratios.items()},
        max_ratio=ratios,
    )
