import logging

import numpy as np
import pytest
from scipy import linalg

from exceptions.exceptions import (
    CoefficientRelationViolated, CoercivityViolated, DimensionMismatch, EllipticityViolated, PeriodicityViolated,
)
from models.rds_fd import (
    DiscreteField, Grid, Growth, assemble_system, box_mesh, check_coefficient_relations, check_coercivity,
    check_ellipticity, check_periodicity, default_instance, energy_grad_check, heat_instance,
    oscillatory_diffusion_instance, oscillatory_dissipation_instance, periodic_mesh, quadratic_coefficients,
)
from scheme.mm_engine import SolverSettings, StepProblem, run_scheme, solve_step


def _linear_operator(apply, size):
    return np.column_stack([apply(np.eye(size)[i]) for i in range(size)])


def test_box_mesh_weights_sum_to_volume():
    for dim in (1, 2):
        mesh = box_mesh(dim, 4)
        assert mesh.weights.sum() == pytest.approx(1.0)
        assert mesh.lumped_weights.sum() == pytest.approx(1.0)


def test_periodic_mesh_has_no_duplicate_end_node():
    mesh = periodic_mesh(1, 8)
    assert mesh.n_nodes == 8
    assert mesh.simplices[-1].tolist() == [7, 0]


def test_resolving_grid():
    grid = Grid.resolving(0.25)
    assert grid.cells_per_axis == 64
    assert grid.h <= 0.25 / 16


def test_heat_step_matches_dense_linear_solve():
    grid = Grid(dim=1, cells_per_axis=4)
    sys = assemble_system(heat_instance(), 1.0, grid)
    u = np.array([0.0, 1.0, 0.5, -0.3, 0.2])
    r = 0.1
    K = _linear_operator(lambda e: sys.energy_grad(0.0, e), sys.dim)
    M = np.diag(sys.metadata['weights'])
    expected = linalg.solve(M / r + K, M @ u / r)
    sol = solve_step(StepProblem(sys, r, 0.0, u, np.zeros(sys.dim)), SolverSettings(grad_tol=1e-12))
    assert np.max(np.abs(sol.state - expected)) < 1e-8


def test_constant_field_energy_is_volume_term():
    grid = Grid(dim=1, cells_per_axis=8)
    sys = assemble_system(default_instance(), 0.5, grid)
    c = 0.7
    assert sys.E(0.0, np.full(sys.dim, c)) == pytest.approx(0.25 * c ** 4 + 0.25)


def test_constant_field_energy_in_two_dimensions():
    grid = Grid(dim=2, cells_per_axis=4)
    sys = assemble_system(heat_instance(dim=2), 1.0, grid)
    assert sys.E(0.0, np.full(sys.dim, 3.0)) == pytest.approx(0.25)


@pytest.mark.parametrize("eps", [0.25, 0.125])
def test_oscillatory_dissipation_of_unit_velocity(eps):
    # ½∫(2+cos(2πx/ε)) dx = 1
    grid = Grid.resolving(eps)
    sys = assemble_system(oscillatory_dissipation_instance(), eps, grid)
    ones = np.ones(sys.dim)
    assert sys.dissipation(ones, ones) == pytest.approx(1.0, abs=1e-10)


def test_energy_converges_at_second_order():
    # E(sin²(πx)) = π²/4 + 1/4
    exact = np.pi ** 2 / 4.0 + 0.25
    errors = []
    for cells in (16, 32, 64):
        grid = Grid(dim=1, cells_per_axis=cells)
        sys = assemble_system(heat_instance(), 1.0, grid)
        u = DiscreteField.from_profile(grid, lambda x: np.sin(np.pi * x[:, 0]) ** 2)
        errors.append(abs(sys.E(0.0, u.flat) - exact))
    assert errors[0] / errors[1] > 3.0
    assert errors[1] / errors[2] > 3.0


@pytest.mark.parametrize(
    "instance, tol",
    [
        (heat_instance, 1e-6),
        (oscillatory_diffusion_instance, 1e-6),
        (default_instance, 1e-5),
    ],
)
def test_energy_gradient_matches_finite_differences(instance, tol):
    grid = Grid(dim=1, cells_per_axis=32)
    sys = assemble_system(instance(), 0.5, grid)
    u = DiscreteField.from_profile(grid, lambda x: np.cos(3.0 * x[:, 0]) + x[:, 0])
    assert energy_grad_check(sys, u) <= tol


def test_energy_gradient_in_two_dimensions():
    grid = Grid(dim=2, cells_per_axis=6)
    sys = assemble_system(default_instance(dim=2), 1.0, grid)
    u = DiscreteField.from_profile(grid, lambda x: np.sin(x[:, 0]) * np.cos(2.0 * x[:, 1]))
    assert energy_grad_check(sys, u) <= 1e-5


def test_lumped_conjugate_closed_form():
    eps = 0.25
    grid = Grid.resolving(eps)
    sys = assemble_system(oscillatory_dissipation_instance(), eps, grid)
    rng = np.random.default_rng(3)
    w = sys.metadata['weights']
    a = 2.0 + np.cos(2.0 * np.pi * grid.nodes[:, 0] / eps)
    for _ in range(5):
        u, xi = rng.normal(size=sys.dim), rng.normal(size=sys.dim)
        assert sys.dissipation_conj(u, xi) == pytest.approx(0.5 * np.sum(xi ** 2 / (w * a)), rel=1e-10)


def test_constant_field_is_steady_state():
    grid = Grid(dim=1, cells_per_axis=16)
    sys = assemble_system(heat_instance(), 1.0, grid)
    traj = run_scheme(sys, np.full(sys.dim, 0.4), 0.3, 3)
    assert np.max(np.abs(traj.nodes - 0.4)) < 1e-10


def test_under_resolved_grid_warns(caplog):
    with caplog.at_level(logging.WARNING):
        assemble_system(oscillatory_diffusion_instance(), 0.25, Grid(dim=1, cells_per_axis=8))
    assert any('해상도' in record.getMessage() for record in caplog.records)


def test_eps_range_and_dimension_checks():
    with pytest.raises(ValueError):
        assemble_system(heat_instance(), 1.5, Grid(dim=1, cells_per_axis=4))
    with pytest.raises(DimensionMismatch):
        assemble_system(heat_instance(dim=2), 1.0, Grid(dim=1, cells_per_axis=4))


def test_field_shape_check():
    with pytest.raises(DimensionMismatch):
        DiscreteField(values=np.zeros((3, 1)), grid=Grid(dim=1, cells_per_axis=4))


def test_field_snapshot_frame():
    grid = Grid(dim=1, cells_per_axis=4)
    frame = DiscreteField.from_flat(np.arange(5.0), grid).to_frame(time=0.5)
    assert list(frame.columns) == ['t', 'x', 'u_0']
    assert frame['t'].eq(0.5).all()


def _coefficients(conductivity=lambda y: np.ones(len(y)), A=1.0, growth=Growth(C_F=0.25),
                  potential=lambda y, u: np.full(len(u), 0.25)):
    return quadratic_coefficients(
        name='sampled', conductivity=conductivity, potential=potential,
        potential_grad=lambda y, u: np.zeros_like(u), A_cell=lambda y, u: np.full((len(y), 1, 1), A),
        b_cell=lambda y, t, u: np.zeros_like(u), growth=growth,
    )


def test_shipped_instances_validate():
    for instance in (default_instance, heat_instance, oscillatory_diffusion_instance,
                     oscillatory_dissipation_instance):
        coeffs = instance()
        assert check_periodicity(coeffs) <= 1e-10
        lo, hi = check_ellipticity(coeffs)
        assert 0.0 < lo <= hi
        assert check_coercivity(coeffs) >= -1e-12
        check_coefficient_relations(coeffs)


def test_nonperiodic_coefficients_rejected():
    with pytest.raises(PeriodicityViolated):
        check_periodicity(_coefficients(conductivity=lambda y: 2.0 + y[:, 0]))


def test_degenerate_metric_rejected():
    with pytest.raises(EllipticityViolated):
        check_ellipticity(_coefficients(A=1e-3))


def test_weak_energy_rejected():
    with pytest.raises(CoercivityViolated):
        check_coercivity(_coefficients(potential=lambda y, u: np.zeros(len(u))))


def test_exponent_relation_rejected():
    with pytest.raises(CoefficientRelationViolated):
        check_coefficient_relations(_coefficients(growth=Growth(p=2.0, q=1.0, r=1.0)))
