import numpy as np
import pytest

from exceptions.exceptions import InvalidSweepPlan, ResolutionRuleViolated
from experiments.gamma_lab import (
    ResolutionRule, SweepPlan, coarse_dissipation, decreasing, empirical_order, initial_data, liminf_witness,
    refinement_ratios, run_eps_sweep, run_tau_sweep, well_preparedness,
)
from models.catalog import build_system, quadratic_system
from models.rds_fd import Grid, heat_instance, oscillatory_diffusion_instance, oscillatory_dissipation_instance
from scheme.mm_engine import SolverSettings, run_scheme

TIGHT = SolverSettings(grad_tol=1e-12)
TAUS = [0.25, 0.125, 0.0625, 0.03125]


def test_empirical_order_of_linear_errors():
    assert empirical_order([0.5, 0.25, 0.125], [0.5, 0.25, 0.125]) == pytest.approx(1.0)
    assert empirical_order([0.5, 0.25, 0.125], [0.4, 0.1, 0.025]) == pytest.approx(2.0)


def test_empirical_order_needs_two_errors_above_floor():
    assert np.isnan(empirical_order([0.5, 0.25, 0.125], [0.0, 1e-12, 1e-3]))


def test_refinement_ratios():
    ratios = refinement_ratios([2.0, 1.0, 0.5])
    assert np.isnan(ratios[0])
    assert ratios[1:] == pytest.approx([0.5, 0.5])


@pytest.mark.parametrize(
    "errors, expected",
    [
        ([1.0, 0.5, 0.25], True),
        ([1.0, 0.9, 0.5], False),
        ([1e-3, 1e-11, 1e-11], True),
        ([0.0, 0.0, 0.0], True),
    ],
)
def test_decreasing(errors, expected):
    assert decreasing(errors, 0.8) is expected


@pytest.mark.parametrize(
    "kwargs",
    [
        {'values': (0.25, 0.125)},
        {'values': (0.25, 0.0625, 0.125)},
        {'metrics': ('sup_state', 'entropy')},
        {'gate_metrics': ('energy',), 'metrics': ('sup_state',)},
        {'u0': 'gaussian'},
        {'decrease_factor': 1.5},
        {'N': 0},
    ],
)
def test_invalid_sweep_plan(kwargs):
    params = {'family': 'eps', 'values': (0.25, 0.125, 0.0625), 'T': 0.1}
    params.update(kwargs)
    with pytest.raises(InvalidSweepPlan):
        SweepPlan(**params)


def test_resolution_rule():
    rule = ResolutionRule()
    assert rule.grid_for(0.25).cells_per_axis == 64
    rule.check(Grid(dim=1, cells_per_axis=64), 0.25)
    with pytest.raises(ResolutionRuleViolated):
        rule.check(Grid(dim=1, cells_per_axis=32), 0.25)


def test_tau_sweep_on_linear_decay():
    table = run_tau_sweep(quadratic_system(), [1.0], 1.0, TAUS, settings=TIGHT)
    assert table.passed
    assert table.rows['tau'].tolist() == TAUS
    assert 0.8 <= table.empirical_orders['sup_state'] <= 1.3
    assert (table.rows['energy_max_increase'] <= 1e-10).all()
    assert table.reference.startswith('tau_ref=')


def test_tau_sweep_at_steady_state():
    table = run_tau_sweep(build_system('forced_decay'), [1.0], 1.0, TAUS, settings=TIGHT)
    assert (table.rows['sup_state'] <= 1e-10).all()
    assert table.passed


def test_tau_sweep_rejects_bad_lists():
    with pytest.raises(InvalidSweepPlan):
        run_tau_sweep(quadratic_system(), [1.0], 1.0, [0.5, 0.25])
    with pytest.raises(InvalidSweepPlan):
        run_tau_sweep(quadratic_system(), [1.0], 1.0, [0.3, 0.2, 0.1])
    with pytest.raises(InvalidSweepPlan):
        run_tau_sweep(quadratic_system(), [1.0], 1.0, TAUS, metrics=('sup_state', 'entropy'))


def test_eps_sweep_without_oscillation_is_exact():
    plan = SweepPlan(family='eps', values=(0.25, 0.125, 0.0625), T=0.05, N=4)
    table = run_eps_sweep(heat_instance(), plan)
    for metric in plan.metrics:
        assert table.rows[metric].abs().max() < 1e-12
    assert table.passed
    assert table.rows['cells'].tolist() == [64, 128, 256]


@pytest.mark.parametrize(
    "mode, expected",
    [
        ('aver', True),
        ('harm', False),
    ],
)
def test_eps_sweep_dissipation_modes(mode, expected):
    plan = SweepPlan(family='eps', values=(0.25, 0.125, 0.0625), T=0.1, N=8, dissipation_mode=mode)
    table = run_eps_sweep(oscillatory_dissipation_instance(), plan)
    assert table.passed is expected


@pytest.mark.parametrize(
    "mode, expected",
    [
        ('hom', True),
        ('aver', False),
    ],
)
def test_eps_sweep_energy_modes(mode, expected):
    plan = SweepPlan(family='eps', values=(0.25, 0.125, 0.0625), T=1.0, N=64, energy_mode=mode)
    table = run_eps_sweep(oscillatory_diffusion_instance(), plan)
    assert table.passed is expected
    if expected:
        assert table.empirical_orders['sup_state'] == pytest.approx(1.0, abs=0.3)


def test_well_preparedness_without_oscillation():
    frame = well_preparedness(heat_instance(), [0.25, 0.125])
    assert frame['state_distance'].max() == 0.0
    assert frame['energy_gap'].max() < 1e-12


def test_initial_data_repeats_profile_per_component():
    grid = Grid(dim=1, cells_per_axis=4)
    values = initial_data(heat_instance(), grid, 0.25, 'cosine')
    assert values == pytest.approx(np.cos(np.pi * grid.nodes[:, 0]))


def test_liminf_witness_on_identical_trajectories():
    traj = run_scheme(quadratic_system(), [1.0], 1.0, 8, TIGHT)
    report = liminf_witness([traj, traj], traj, coarse_steps=(4, 8))
    assert report.jensen_violations == 0
    assert report.table['slack'].abs().max() == 0.0
    assert report.passed
    assert sorted(report.table['coarse_steps'].unique()) == [4, 8]
    assert report.limits_settled
    assert report.limits['limit_slack'].tolist() == [0.0, 0.0]


def test_liminf_witness_on_oscillatory_dissipation():
    plan = SweepPlan(family='eps', values=(0.25, 0.125, 0.0625), T=0.1, N=8)
    table = run_eps_sweep(oscillatory_dissipation_instance(), plan)
    report = liminf_witness([run.trajectory for run in table.runs], [run.effective for run in table.runs],
                            coarse_steps=(2, 4, 8))
    assert report.jensen_violations == 0
    assert report.slack_decreasing
    assert report.limits_settled
    assert report.limits['coarse_steps'].tolist() == [2, 4, 8]
    assert report.passed


def test_coarse_dissipation_below_fine_average():
    traj = run_scheme(quadratic_system(), [1.0], 1.0, 8, TIGHT)
    coarse, violations = coarse_dissipation(traj, 2)
    fine, _ = coarse_dissipation(traj, 8)
    assert violations == 0
    assert coarse <= fine


def test_coarse_steps_must_divide_n():
    traj = run_scheme(quadratic_system(), [1.0], 1.0, 8)
    with pytest.raises(ValueError):
        coarse_dissipation(traj, 3)
    with pytest.raises(ValueError):
        liminf_witness([traj, traj], [traj])
