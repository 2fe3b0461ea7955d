"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -v`` or directly as a script; the
summary lines appear under "acceptance criteria" at the end of the report.
"""
import math
import sys
import time
import warnings

import numpy as np
import pytest
from scipy import stats

from conftest import ACCEPTANCE_LINES
from oracles import uniformization_torus, watson_g0
from pamcat.exclusion import TorusLattice, replica_occupancy, sample_bernoulli
from pamcat.harness import estimate_lyapunov, estimate_lyapunov_pair, run, replay, theorem_rhs
from pamcat.lattice_kernels import UNIT_VECTORS, green_value
from pamcat.pam import (
    PamConfig,
    annealed_moment,
    feynman_kac_estimate,
    sample_trajectory,
    solve_direct,
)
from pamcat.polaron import (
    PolaronOptions,
    gaussian_family_closed_form,
    gaussian_family_value,
    solve_cutoff_polaron,
    solve_polaron,
)
from pamcat.rng import StirringSchedule, generator, stream_base
from pamcat.spectral import (
    SmallSystem,
    certified_kernel_constant,
    check_psi_bounds,
    green_operator_moment_check,
    mc_growth_slope,
    top_eigenvalue,
)

SEED = 20240601


def record(n, ok, detail):
    ACCEPTANCE_LINES.append(f"CRITERION {n}: {'PASS' if ok else 'FAIL'} {detail}")
    return ok


def quiet_config(**kw):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        return PamConfig(**kw)


def test_c01_green_constant():
    t0 = time.perf_counter()
    G0 = green_value((0, 0, 0))
    ref = watson_g0()
    mean_nb = np.mean([green_value(tuple(e)) for e in UNIT_VECTORS])
    elapsed = time.perf_counter() - t0
    err, harm = abs(G0 - ref), abs(mean_nb - (G0 - 1.0))
    ok = err <= 1e-6 and abs(G0 - 1.5163860591) <= 1e-6 and harm <= 1e-7 and elapsed < 10
    record(1, ok, f"G(0)={G0:.13f} |G-oracle|={err:.1e} harmonicity={harm:.1e} ({elapsed:.1f}s)")
    assert ok


def test_c02_duality():
    t0 = time.perf_counter()
    lat = TorusLattice(8)
    gen = generator(SEED, stream_base("misc", 2))
    kernels = {t: uniformization_torus(t, 8) for t in (0.5, 2.0)}
    worst = 0.0
    for case in range(20):
        rho = float(gen.uniform(0.1, 0.9))
        eta = sample_bernoulli(lat, rho, StirringSchedule(SEED, stream_base("misc", 3) + case))
        x = int(gen.integers(lat.site_count))
        occ = replica_occupancy(lat, [0.5, 2.0], [x], 100_000, SEED,
                                stream_base("sse", 100 + case), initial=eta)[:, :, 0]
        cube = eta.as_cube().astype(float)
        cx = lat.coords(x)
        for k, t in enumerate((0.5, 2.0)):
            # sum_y p_t(x - y) eta(y), with the kernel rolled to centre it on x
            K = np.roll(kernels[t][::-1, ::-1, ::-1], shift=tuple(int(c) + 1 for c in cx), axis=(0, 1, 2))
            oracle = float(np.sum(K * cube))
            se = math.sqrt(oracle * (1 - oracle) / occ.shape[0])
            z = abs(occ[:, k].mean() - oracle) / se if se > 0 else 0.0
            worst = max(worst, z)
    elapsed = time.perf_counter() - t0
    ok = worst <= 4.0 and elapsed < 300
    record(2, ok, f"40 cases, max |z|={worst:.2f} ({elapsed:.0f}s)")
    assert ok


def test_c03_equilibrium():
    # nu_rho is invariant and a product measure, so at t = 5 the sites are
    # independent Bernoulli(0.3); every one-site marginal enters one joint test
    lat = TorusLattice(8)
    n = 10_000
    occ = replica_occupancy(lat, [5.0], np.arange(lat.site_count), n, SEED,
                            stream_base("sse", 200), rho=0.3)[:, 0, :]
    ones = occ.sum(axis=0).astype(float)
    obs = np.concatenate([n - ones, ones])
    exp = np.concatenate([np.full(lat.site_count, 0.7 * n), np.full(lat.site_count, 0.3 * n)])
    chi2 = float(np.sum((obs - exp) ** 2 / exp))
    p = float(stats.chi2.sf(chi2, lat.site_count))
    p0 = stats.chisquare([n - ones[0], ones[0]], [0.7 * n, 0.3 * n]).pvalue
    ok = p > 0.01
    record(3, ok, f"joint chi-square over {lat.site_count} sites: {chi2:.1f} "
                  f"(p={p:.3f}); origin alone p={p0:.3f}")
    assert ok


def test_c04_degenerate_solutions():
    details, ok = [], True
    for rho in (0.0, 1.0):
        cfg = quiet_config(kappa=1.0, rho=rho, t_final=2.0, side=8, samples=1000, seed=SEED)
        traj = sample_trajectory(cfg.lattice, rho, 2.0, StirringSchedule(SEED, 5))
        u = solve_direct(cfg, traj).values
        fk = feynman_kac_estimate(cfg)
        if rho == 0.0:
            good = bool(np.all(u == 1.0)) and fk.mean == 1.0
            details.append(f"rho=0 exact={good}")
        else:
            e = math.exp(2.0)
            rel_d, rel_f = float(np.max(np.abs(u / e - 1))), abs(fk.mean / e - 1)
            good = rel_d <= 1e-8 and rel_f <= 1e-8
            details.append(f"rho=1 rel err direct={rel_d:.1e} fk={rel_f:.1e}")
        ok &= good
    record(4, ok, "; ".join(details))
    assert ok


def test_c05_cross_method():
    t0 = time.perf_counter()
    worst, n = 0.0, 0
    for i, rho in enumerate((0.2, 0.5, 0.8)):
        for j, kappa in enumerate((0.5, 2.0, 8.0)):
            for k, t in enumerate((0.5, 1.0)):
                common = dict(kappa=kappa, rho=rho, t_final=t, side=8, seed=SEED + 9 * i + 3 * j + k)
                fk = feynman_kac_estimate(quiet_config(samples=100_000, **common))
                direct = annealed_moment(quiet_config(samples=1000, tolerance=1e-6, **common))
                z = abs(fk.mean - direct.mean) / math.hypot(fk.stderr, direct.stderr)
                worst = max(worst, z)
                n += 1
    elapsed = time.perf_counter() - t0
    ok = worst <= 4.0 and elapsed < 1800
    record(5, ok, f"{n} configurations on the 8^3 torus, max |z|={worst:.2f} ({elapsed:.0f}s)")
    assert ok


def test_c06_spectral_oracle():
    system = SmallSystem(TorusLattice(3), 2)
    gen = generator(SEED, stream_base("spectral", 1))
    worst = 0.0
    for i in range(10):
        V = 0.1 * gen.random(system.size)
        lam = top_eigenvalue(system, 1.0, V)
        slope, se = mc_growth_slope(system, 1.0, V, window=(20.0, 40.0), samples=20_000,
                                    seed=SEED, stream0=stream_base("spectral", 10 + i))
        worst = max(worst, abs(slope - lam) / max(1e-3, 4 * se))
    ok = worst <= 1.0
    record(6, ok, f"10 potentials, max |slope-eig|/max(1e-3,4se)={worst:.2f}")
    assert ok


def test_c07_psi_bounds():
    lat = TorusLattice(16)
    samples = [sample_bernoulli(lat, 0.5, StirringSchedule(SEED, stream_base("psi", 1) + i))
               for i in range(100)]
    C = certified_kernel_constant()
    rep = check_psi_bounds(samples, 1.0, 10.0, 0.5, C=C, seed=SEED)
    ok = rep.all_passed and rep.max_ratio["sum_squares"] <= 1.0
    ratios = ", ".join(f"{k}={v:.3f}" for k, v in rep.max_ratio.items())
    record(7, ok, f"C={C:.6f}, max observed/bound: {ratios}")
    assert ok


def test_c08_green_operator():
    G0 = green_value((0, 0, 0))
    parts, ok = [], True
    for i, g in enumerate((0.1, 0.3, 0.6)):
        rep = green_operator_moment_check({(0, 0, 0): g / G0}, samples=100_000, seed=SEED,
                                          stream0=stream_base("green", 1 + i))
        ok &= rep.precondition_ok and rep.passed
        parts.append(f"|GV|={g}: {rep.estimate:.4f}+-{rep.stderr:.4f} <= {rep.bound:.4f}")
    viol = green_operator_moment_check({(0, 0, 0): 1.2 / G0}, samples=10)
    ok &= not viol.precondition_ok
    parts.append(f"|GV|=1.2 signalled={not viol.precondition_ok}")
    record(8, ok, "; ".join(parts))
    assert ok


@pytest.fixture(scope="module")
def polaron_full():
    return solve_polaron(1.0)


def test_c09_polaron(polaron_full):
    closed = gaussian_family_closed_form(1.0)
    gauss, _ = gaussian_family_value(1.0)
    vals = {c: solve_polaron(c).value / c ** 2 for c in (0.5, 1.0, 2.0, 4.0)}
    spread = (max(vals.values()) - min(vals.values())) / vals[1.0]
    fine = solve_polaron(1.0, PolaronOptions(n=4096)).value
    drift = abs(fine - polaron_full.value) / polaron_full.value
    ok = (abs(gauss - closed) <= 1e-7 and polaron_full.value >= gauss
          and spread <= 1e-4 and drift <= 1e-5)
    record(9, ok, f"gaussian={gauss:.10e} (closed {closed:.10e}), full={polaron_full.value:.10e}, "
                  f"coefficient spread={spread:.1e}, grid doubling={drift:.1e}")
    assert ok


def test_c10_cutoff_degeneracy(polaron_full):
    vals = {eps: solve_cutoff_polaron(1.0, eps, math.inf).value for eps in (1.0, 5.0, 25.0)}
    full = solve_cutoff_polaron(1.0, 0.0, math.inf).value
    # informative only: the short-time window [0, K] with a finite upper cut
    short = {K: solve_cutoff_polaron(1.0, 0.0, K).value for K in (1.0, 5.0, 25.0)}
    ok = all(v <= 1e-6 for v in vals.values()) and full == pytest.approx(polaron_full.value, rel=1e-12)
    literal = ", ".join(f"eps={e:g}: {v:.4e}" for e, v in vals.items())
    window = ", ".join(f"K={K:g}: {v:.1e}" for K, v in short.items())
    record(10, ok, f"[eps,inf) windows {literal}; full={full:.4e}; [0,K] windows {window}")
    assert ok


def test_c11_asymptotic_trend():
    rho = 0.5
    rhs = theorem_rhs(rho, 1)
    ests = [estimate_lyapunov(k, rho, 1, (1.0, 3.0), 40_000, side=16, seed=SEED,
                              stream0=stream_base("fk", 50) + (i << 32))
            for i, k in enumerate((1.0, 2.0, 4.0, 8.0))]
    ok = True
    for e in ests:
        scaled = e.kappa * (e.slope - rho)
        ok &= e.usable and scaled > 0
        ok &= e.slope + 1.96 * e.stderr >= rho            # Jensen floor within CI
        ok &= e.slope - 1.96 * e.stderr <= 1.0            # sandwich
    last = ests[-1].kappa * (ests[-1].slope - rho)
    ok &= rhs / 10 <= last <= 10 * rhs
    row = estimate_lyapunov_pair(0.25, rho, (0.5, 2.0), 20_000, side=16, seed=SEED,
                                 stream0=stream_base("fk", 60))
    ok &= row.gap > 2 * row.gap_se
    scaled = ", ".join(f"k={e.kappa:g}: {e.kappa * (e.slope - rho):.4f}+-{e.kappa * e.stderr:.4f}"
                       for e in ests)
    record(11, ok, f"kappa(lambda1-rho) {scaled}; rhs={rhs:.4f}; "
                   f"gap(kappa=0.25)={row.gap:.4f}+-{row.gap_se:.4f}")
    assert ok


CONFIG = """
[run]
seed = 7
stages = kernels sse moment spectral polaron lyapunov intermittency

[kernels]
times = 0.5 2
points = 0 0 0; 1 0 0

[sse]
rho = 0.3
t = 1
replicas = 2000
sites = 0 5

[moment]
kappa = 1
rho = 0.5
t = 0.5
side = 6
samples = 4000
method = both
direct_samples = 40

[spectral]
particles = 1
mc_check = true
mc_samples = 2000

[polaron]
grid_n = 512

[lyapunov]
kappa = 2
rho = 0.5
t_min = 0.5
t_max = 1.5
side = 8
samples = 3000

[intermittency]
rho = 0.5
kappas = 0.5 1
side = 8
samples = 3000
"""


def test_c12_reproducibility(tmp_path):
    a = run(CONFIG, str(tmp_path / "a"), threads=1)
    b = run(CONFIG, str(tmp_path / "b"), threads=3)
    _, mism = replay(str(tmp_path / "a" / "manifest.json"), str(tmp_path / "c"), threads=2)
    ok = a.outputs == b.outputs and not mism and len(a.outputs) >= len(a.completed) == 7
    record(12, ok, f"{len(a.outputs)} CSV files, digests equal across reruns/threads, "
                   f"replay mismatches={len(mism)}")
    assert ok


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-v", "-p", "no:cacheprovider"]))
