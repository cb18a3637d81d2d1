import logging

import numpy as np
import pytest

from exceptions.exceptions import MaxItersExceeded, SingularInverse, TabulationGapTooCoarse
from homogenization.homog import (
    build_effective_model, build_effective_system, closed_form_cell_value, conductivity_drift,
    corrected_initial_data, effective_coefficients, homogenized_conductivity, mean_tensor_error, mean_tensors,
    solve_cell_problem, tabulate_fhom,
)
from models.rds_fd import (
    Grid, Growth, assemble_system, default_instance, heat_instance, oscillatory_diffusion_instance,
    oscillatory_dissipation_instance, quadratic_coefficients,
)
from scheme.mm_engine import run_scheme

SQRT3 = np.sqrt(3.0)


def _wavy_potential():
    """F = ½(2+cos 2πy)U² + cos(3u) + 2, 표 보간이 거친 격자에서 틀리도록"""
    return quadratic_coefficients(
        name='wavy', conductivity=lambda y: 2.0 + np.cos(2.0 * np.pi * y[:, 0]),
        potential=lambda y, u: np.cos(3.0 * u[:, 0]) + 2.0,
        potential_grad=lambda y, u: -3.0 * np.sin(3.0 * u),
        A_cell=lambda y, u: np.ones((len(y), 1, 1)), b_cell=lambda y, t, u: np.zeros_like(u),
        growth=Growth(C_F=0.25),
    )


def test_means_of_oscillatory_metric():
    A_aver, A_harm = mean_tensors(oscillatory_dissipation_instance(), [0.0])
    assert A_aver[0, 0] == pytest.approx(2.0, abs=1e-12)
    assert A_harm[0, 0] == pytest.approx(SQRT3, abs=1e-7)


def test_means_of_constant_metric_coincide():
    A_aver, A_harm = mean_tensors(heat_instance(), [0.3])
    assert A_aver[0, 0] == pytest.approx(1.0)
    assert A_harm[0, 0] == pytest.approx(1.0)


@pytest.mark.parametrize("u", [-1.0, 0.0, 2.0])
def test_harmonic_mean_below_arithmetic_mean(u):
    A_aver, A_harm = mean_tensors(default_instance(), [u])
    assert np.min(np.linalg.eigvalsh(A_aver - A_harm)) >= -1e-12


def test_quadrature_error_estimate():
    coeffs = oscillatory_dissipation_instance()
    error = mean_tensor_error(coeffs, [0.0], 16)
    coarse = mean_tensors(coeffs, [0.0], 16)[1]
    fine = mean_tensors(coeffs, [0.0], 32)[1]
    assert abs(coarse - fine).max() <= error + 1e-15


def test_singular_metric():
    coeffs = quadratic_coefficients(
        name='singular', conductivity=lambda y: np.ones(len(y)), potential=lambda y, u: np.zeros(len(u)),
        potential_grad=lambda y, u: np.zeros_like(u), A_cell=lambda y, u: np.zeros((len(y), 1, 1)),
        b_cell=lambda y, t, u: np.zeros_like(u), growth=Growth(),
    )
    with pytest.raises(SingularInverse):
        mean_tensors(coeffs, [0.0])


def test_cell_problem_matches_harmonic_mean():
    coeffs = oscillatory_diffusion_instance()
    cell = solve_cell_problem(coeffs, [0.0], [[1.0]], resolution=64)
    assert cell.value == pytest.approx(0.5 * SQRT3 + 0.25, abs=1e-6)
    assert cell.value == pytest.approx(closed_form_cell_value(coeffs, [0.0], 1.0), abs=1e-6)
    assert abs(cell.corrector.mean()) < 1e-12
    assert cell.value <= 0.5 * 2.0 + 0.25


def test_cell_problem_zero_macro_gradient():
    cell = solve_cell_problem(default_instance(), [0.5], [[0.0]], resolution=16)
    assert np.max(np.abs(cell.corrector)) < 1e-12
    assert cell.value == pytest.approx(0.25 * 0.5 ** 4 + 0.25)


def test_cell_problem_without_oscillation():
    cell = solve_cell_problem(heat_instance(), [0.0], [[2.0]], resolution=16)
    assert np.max(np.abs(cell.corrector)) < 1e-9
    assert cell.value == pytest.approx(0.5 * 4.0 + 0.25)


def test_cell_problem_rejects_coarse_resolution():
    with pytest.raises(ValueError):
        solve_cell_problem(heat_instance(), [0.0], [[1.0]], resolution=4)


def test_unconverged_cell_solve_raises():
    with pytest.raises(MaxItersExceeded):
        solve_cell_problem(oscillatory_diffusion_instance(dim=2), [0.0], [[1.0, 0.0]],
                           resolution=16, max_iters=2)


def test_harmonic_mean_agrees_with_cell_minimizer(caplog):
    with caplog.at_level(logging.DEBUG, logger='homogenization.homog'):
        drift = conductivity_drift(oscillatory_diffusion_instance(), SQRT3)
    assert drift < 1e-7
    assert any('셀 문제' in record.getMessage() for record in caplog.records)


def test_homogenized_conductivity():
    assert homogenized_conductivity(oscillatory_diffusion_instance())[0, 0] == pytest.approx(SQRT3, abs=1e-7)
    assert homogenized_conductivity(heat_instance())[0, 0] == 1.0


def test_laminate_conductivity_in_two_dimensions():
    # κ 가 y₁ 에만 의존하면 y₁ 방향은 조화 평균, y₂ 방향은 산술 평균
    A = homogenized_conductivity(oscillatory_diffusion_instance(dim=2), resolution=16)
    assert A[0, 0] == pytest.approx(SQRT3, rel=2e-2)
    assert A[1, 1] == pytest.approx(2.0, rel=2e-2)
    assert abs(A[0, 1]) < 1e-2


def test_tabulated_energy_density():
    coeffs = oscillatory_diffusion_instance()
    grid = np.linspace(-1.5, 1.5, 7)
    table = tabulate_fhom(coeffs, grid, grid, resolution=16)
    for u in grid:
        for U in grid:
            assert table(u, U) == pytest.approx(0.5 * SQRT3 * U ** 2 + 0.25, abs=1e-6)
            assert table(u, U) <= 0.5 * 2.0 * U ** 2 + 0.25 + 1e-9
    along_U = table.values[3]
    assert np.all(np.diff(along_U, 2) >= -1e-9)
    assert list(table.to_frame().columns) == ['u', 'U', 'value']


def test_coarse_tabulation_is_rejected():
    grid = np.linspace(-2.0, 2.0, 7)
    with pytest.raises(TabulationGapTooCoarse):
        tabulate_fhom(_wavy_potential(), grid, grid, resolution=8)


def test_effective_model_tensors():
    model = build_effective_model(oscillatory_dissipation_instance())
    assert model.A_aver([0.0])[0, 0] == pytest.approx(2.0)
    assert model.A_harm([0.0])[0, 0] == pytest.approx(SQRT3, abs=1e-7)
    exported = model.tensors_json([0.0, 1.0])
    assert len(exported['tensors']) == 2


def test_averaged_perturbation():
    model = build_effective_model(default_instance())
    assert model.b_aver(0.3, [0.0])[0] == pytest.approx(0.0, abs=1e-12)
    assert model.b_aver(0.3, [1.0])[0] == pytest.approx(-0.5, abs=1e-12)


def test_effective_energy_uses_homogenized_conductivity():
    model = build_effective_model(oscillatory_diffusion_instance())
    assert model.F_hom([0.0], [[1.0]]) == pytest.approx(0.5 * SQRT3 + 0.25, abs=1e-7)


def test_y_independent_effective_system_reproduces_trajectory():
    coeffs = heat_instance()
    grid = Grid(dim=1, cells_per_axis=16)
    assert effective_coefficients(coeffs) is coeffs
    u0 = np.sin(np.pi * grid.nodes[:, 0]) ** 2
    direct = run_scheme(assemble_system(coeffs, 0.5, grid), u0, 0.1, 4)
    effective = run_scheme(build_effective_system(coeffs, grid), u0, 0.1, 4)
    assert np.max(np.abs(direct.nodes - effective.nodes)) < 1e-12


@pytest.mark.parametrize(
    "mode, expected",
    [
        ('aver', 1.0),
        ('harm', 0.5 * SQRT3),
    ],
)
def test_effective_dissipation_modes(mode, expected):
    grid = Grid(dim=1, cells_per_axis=16)
    sys = build_effective_system(oscillatory_dissipation_instance(), grid, dissipation_mode=mode)
    ones = np.ones(sys.dim)
    assert sys.dissipation(ones, ones) == pytest.approx(expected, abs=1e-7)


def test_averaged_energy_mode():
    grid = Grid(dim=1, cells_per_axis=16)
    sys = build_effective_system(oscillatory_diffusion_instance(), grid, energy_mode='aver')
    linear = grid.nodes[:, 0]
    # ∇u = 1 이면 E = ½·2 + ¼
    assert sys.E(0.0, linear) == pytest.approx(1.25, abs=1e-10)


def test_invalid_mode():
    with pytest.raises(ValueError):
        effective_coefficients(oscillatory_dissipation_instance(), dissipation_mode='geometric')


def test_corrected_initial_data():
    grid = Grid.resolving(0.25)
    profile = lambda x: np.sin(np.pi * x[:, 0]) ** 2
    derivative = lambda x: np.pi * np.sin(2.0 * np.pi * x[:, 0])
    base = profile(grid.nodes)
    same = corrected_initial_data(heat_instance(), grid, 0.25, profile, derivative)
    assert np.array_equal(same, base)
    corrected = corrected_initial_data(oscillatory_diffusion_instance(), grid, 0.25, profile, derivative)
    shift = np.max(np.abs(corrected - base))
    assert 0.0 < shift <= 0.25 * np.pi * 0.1
