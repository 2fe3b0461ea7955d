import math

import numpy as np
import pytest

from pamcat.errors import ValidationError
from pamcat.polaron import (
    PolaronOptions,
    RadialGrid,
    RadialProfile,
    _window,
    coulomb_energy,
    dirichlet_energy,
    gaussian_family_closed_form,
    gaussian_family_value,
    gaussian_profile,
    objective,
    sigma_ref,
    solve_cutoff_polaron,
    solve_polaron,
    window_energy,
)

SMALL = PolaronOptions(n=768)


@pytest.fixture(scope="module")
def grid():
    return RadialGrid(40.0, 2048)


@pytest.fixture(scope="module")
def p3():
    return solve_polaron(1.0)


@pytest.mark.parametrize("sigma", [0.5, 1.0, 2.0])
def test_gaussian_energies(grid, sigma):
    f = gaussian_profile(grid, sigma)
    assert f.norm2 == pytest.approx(1.0, abs=1e-13)
    assert coulomb_energy(f) == pytest.approx(1 / (4 * math.pi ** 1.5 * sigma), rel=1e-9)
    assert dirichlet_energy(f) == pytest.approx(3 / (4 * sigma ** 2), rel=1e-8)


def test_energy_scaling(grid):
    # f -> g^{3/2} f(g .) scales D by g and B by g^2; a Gaussian of width sigma/g realises it
    a, b = gaussian_profile(grid, 1.6), gaussian_profile(grid, 0.8)
    assert coulomb_energy(b) / coulomb_energy(a) == pytest.approx(2.0, rel=1e-9)
    assert dirichlet_energy(b) / dirichlet_energy(a) == pytest.approx(4.0, rel=1e-9)


def test_erf_window_limits(grid):
    f = gaussian_profile(grid, 1.0)
    D = coulomb_energy(f)
    assert window_energy(f, 0.0, math.inf) == D
    # int_0^inf p_r dr is the Coulomb kernel, so the two halves add up
    head = window_energy(f, 0.0, 0.7)
    tail = window_energy(f, 0.7, math.inf)
    assert head + tail == pytest.approx(D, rel=1e-9)
    assert window_energy(f, 0.2, 0.7) == pytest.approx(window_energy(f, 0.2, math.inf) - tail, rel=1e-9)


def test_window_gradient_finite_difference():
    g = RadialGrid(20.0, 256)
    rng = np.random.default_rng(0)
    f = gaussian_profile(g, 1.0).values * (1 + 0.1 * rng.standard_normal(256))
    for eps, K in ((0.0, math.inf), (0.3, math.inf), (0.0, 2.0)):
        _, grad = _window(g, f, eps, K, grad=True)
        for i in (10, 100, 200):
            h = 1e-6 * max(abs(f[i]), 1e-3)
            fp, fm = f.copy(), f.copy()
            fp[i] += h
            fm[i] -= h
            fd = (_window(g, fp, eps, K) - _window(g, fm, eps, K)) / (2 * h)
            assert grad[i] == pytest.approx(fd, rel=1e-4, abs=1e-10)


def test_normalization_enforced(grid):
    f = RadialProfile(grid, 2.0 * gaussian_profile(grid, 1.0).values)
    with pytest.raises(ValidationError):
        coulomb_energy(f)
    table = gaussian_profile(grid, 1.0).table()
    assert table.shape == (2049, 2) and table[0, 0] == 0.0


def test_gaussian_family():
    v, s = gaussian_family_value(1.0)
    assert v == pytest.approx(gaussian_family_closed_form(1.0), rel=1e-8)
    assert s == pytest.approx(sigma_ref(1.0), rel=1e-4)


def test_polaron_value(p3):
    assert p3.converged
    assert p3.profile.norm2 == pytest.approx(1.0, abs=1e-10)
    assert p3.value >= gaussian_family_closed_form(1.0)
    assert p3.value == pytest.approx(6.8717e-4, rel=1e-4)
    assert objective(p3.profile, 1.0) == pytest.approx(p3.value, rel=1e-12)


@pytest.mark.parametrize("c", [0.5, 3.0])
def test_coefficient_law(p3, c):
    assert solve_polaron(c).value / (c * c) == pytest.approx(p3.value, rel=1e-8)


def test_grid_refinement(p3):
    fine = solve_polaron(1.0, PolaronOptions(n=4096))
    assert abs(fine.value - p3.value) < 1e-6 * p3.value


def test_cutoff_monotone():
    eps_list, K_list = (0.0, 100.0, 1000.0), (1e4, 1e5, math.inf)
    vals = {(e, K): solve_cutoff_polaron(1.0, e, K, SMALL).value for e in eps_list for K in K_list}
    for e in eps_list:
        row = [vals[(e, K)] for K in K_list]
        assert all(a <= b + 1e-9 for a, b in zip(row, row[1:]))
    for K in K_list:
        col = [vals[(e, K)] for e in eps_list]
        assert all(a >= b - 1e-9 for a, b in zip(col, col[1:]))
    assert vals[(0.0, 1e5)] > 0


def test_short_window_has_zero_supremum():
    assert solve_cutoff_polaron(1.0, 0.0, 1.0, SMALL).value == 0.0


def test_validation():
    with pytest.raises(ValidationError):
        solve_cutoff_polaron(1.0, 5.0, 5.0)
    with pytest.raises(ValidationError):
        solve_cutoff_polaron(1.0, -1.0)
    with pytest.raises(ValidationError):
        solve_polaron(0.0)
