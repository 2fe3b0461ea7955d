import math
import warnings

import numpy as np
import pytest
from scipy.linalg import expm

from pamcat.errors import NumericalError, ValidationError
from pamcat.exclusion import ExclusionState, TorusLattice
from pamcat.pam import (
    CatalystTrajectory,
    PamConfig,
    annealed_moment,
    feynman_kac_estimate,
    fk_exponents,
    moments_from_exponents,
    sample_trajectory,
    solve_direct,
)
from pamcat.rng import StirringSchedule


def cfg(**kw):
    base = dict(kappa=1.0, rho=0.5, p=1, t_final=1.0, side=8, samples=1000, seed=1)
    base.update(kw)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        return PamConfig(**base)


def laplacian(lat):
    n = lat.site_count
    A = -6.0 * np.eye(n)
    for i in range(n):
        for j in lat.neighbors[i]:
            A[i, j] += 1.0
    return A


def test_config_validation():
    for bad in (dict(kappa=0), dict(rho=1.2), dict(p=0), dict(t_final=-1), dict(samples=1),
                dict(side=2), dict(times=(0.5, 2.0))):
        with pytest.raises(ValidationError):
            cfg(**bad)


def test_guard_warning():
    with pytest.warns(RuntimeWarning):
        PamConfig(kappa=8, rho=0.5, t_final=1, side=8)
    c = PamConfig(kappa=0.1, rho=0.5, t_final=1, side=32)
    assert c.guard_ok and c.guard_ratio < 1


@pytest.mark.parametrize("rho", [0.0, 1.0])
def test_direct_degenerate(rho):
    c = cfg(rho=rho, t_final=2.0, kappa=2.0)
    traj = sample_trajectory(c.lattice, rho, 2.0, StirringSchedule(1, 1))
    u = solve_direct(c, traj).values
    if rho == 0:
        assert np.all(u == 1.0)
    else:
        assert np.max(np.abs(u / math.exp(2.0) - 1)) < 1e-8


def test_frozen_site_against_dense_exponential():
    lat = TorusLattice(3)
    occ = np.zeros(27, dtype=np.uint8)
    occ[0] = 1
    traj = CatalystTrajectory(ExclusionState(lat, occ), np.zeros(0), np.zeros(0, dtype=np.int64), 1.0)
    c = cfg(side=3, t_final=1.0, kappa=1.0)
    u = solve_direct(c, traj).values
    M = laplacian(lat) + np.diag(occ.astype(float))
    ref = expm(M) @ np.ones(27)
    assert np.max(np.abs(u - ref)) < 1e-8


def test_events_against_piecewise_exponentials():
    lat = TorusLattice(3)
    occ = np.zeros(27, dtype=np.uint8)
    occ[[0, 4, 13]] = 1
    times = np.array([0.2, 0.35, 0.9])
    bonds = np.array([0, 5, 40])
    traj = CatalystTrajectory(ExclusionState(lat, occ.copy()), times, bonds, 1.2)
    c = cfg(side=3, t_final=1.2, kappa=0.7)
    u = solve_direct(c, traj).values
    Lap = laplacian(lat)
    ref = np.ones(27)
    cur = occ.astype(float)
    edges = np.concatenate([[0.0], times, [1.2]])
    for k in range(len(edges) - 1):
        ref = expm((0.7 * Lap + np.diag(cur)) * (edges[k + 1] - edges[k])) @ ref
        if k < len(bonds):
            a, b = lat.bond_a[bonds[k]], lat.bond_b[bonds[k]]
            cur[a], cur[b] = cur[b], cur[a]
    assert np.max(np.abs(u / ref - 1)) < 1e-9
    assert np.all(u > 0)


def test_solver_reports_divergence():
    c = cfg(side=3)
    lat = TorusLattice(3)
    traj = CatalystTrajectory(ExclusionState(lat, np.zeros(27)), np.zeros(0), np.zeros(0, dtype=np.int64), 1.0)
    with pytest.raises(NumericalError):
        solve_direct(c, traj, u0=np.full(27, np.nan))


def test_fk_degenerate():
    e = feynman_kac_estimate(cfg(rho=1.0, p=2, t_final=1.0, kappa=3.0))
    assert e.mean == pytest.approx(math.e ** 2, rel=1e-15) and e.stderr == 0.0
    z = feynman_kac_estimate(cfg(rho=0.0, p=2))
    assert z.mean == 1.0 and z.stderr == 0.0


def test_fk_matches_direct_kappa1():
    f = feynman_kac_estimate(cfg(samples=100_000, seed=4))
    d = annealed_moment(cfg(samples=400, seed=4))
    assert abs(f.mean - d.mean) < 4 * math.hypot(f.stderr, d.stderr)


def test_fk_matches_direct_kappa2():
    f = feynman_kac_estimate(cfg(samples=100_000, kappa=2.0, seed=5))
    d = annealed_moment(cfg(samples=400, kappa=2.0, seed=5))
    assert abs(f.mean - d.mean) < 4 * math.hypot(f.stderr, d.stderr)


@pytest.mark.parametrize("rho,kappa,p", [(0.3, 0.5, 1), (0.5, 2.0, 2), (0.8, 1.0, 1)])
def test_jensen_floor_and_range(rho, kappa, p):
    c = cfg(rho=rho, kappa=kappa, p=p, samples=20_000)
    e = feynman_kac_estimate(c)
    floor = math.exp(p * rho * c.t_final)
    assert e.mean >= floor * (1 - 4 * e.rel_stderr)
    if p == 1:
        assert 1 - 4 * e.stderr <= e.mean <= math.e * (1 + 4 * e.rel_stderr)


def test_moment_monotone_in_p():
    c = cfg(p=3, samples=40_000, t_final=1.0, kappa=0.5)
    ex = fk_exponents(c)
    rates = []
    for p in (1, 2, 3):
        est = moments_from_exponents(ex[:, :, :p], c.rho, c.times)[-1]
        rates.append((est.log_mean / (p * c.t_final), est.rel_stderr / (p * c.t_final)))
    for (a, sa), (b, sb) in zip(rates, rates[1:]):
        assert b >= a - 4 * math.hypot(sa, sb)


def test_multiple_output_times():
    c = cfg(times=(0.5, 1.0), samples=2000)
    ests = feynman_kac_estimate(c, all_times=True)
    assert [e.t for e in ests] == [0.5, 1.0]
    assert ests[-1].mean == feynman_kac_estimate(c).mean


def test_integral_identity_defect():
    from scipy.integrate import simpson

    lat = TorusLattice(3)
    occ = np.zeros(27, dtype=np.uint8)
    occ[[0, 5]] = 1
    traj = CatalystTrajectory(ExclusionState(lat, occ.copy()), np.array([0.4]), np.array([3]), 1.0)
    A = laplacian(lat)
    after = occ.astype(float)
    a, b = lat.bond_a[3], lat.bond_b[3]
    after[a], after[b] = after[b], after[a]

    def u_at(t):
        return np.ones(27) if t == 0 else solve_direct(cfg(side=3, t_final=t), traj).values

    # Simpson on each side of the event; the potential jumps there
    total = np.zeros(27)
    for lo, hi, pot in ((0.0, 0.4, occ.astype(float)), (0.4, 1.0, after)):
        grid = np.linspace(lo, hi, 241)
        rhs = np.array([A @ u + pot * u for u in map(u_at, grid)])
        total += simpson(rhs, x=grid, axis=0)
    u1 = u_at(1.0)
    assert np.max(np.abs(1.0 + total - u1) / u1) < 1e-8
