import numpy as np
import pytest

from exceptions.exceptions import ConjugateOverflow, DimensionMismatch, NonpositiveEnergy
from models.catalog import build_system, quadratic_system, state_dependent_system, stick_slip_system
from models.pgs_model import (
    GronwallConstants, PerturbedGradientSystem, gronwall_constants, probe_conjugate_consistency,
    probe_duality_consequence, probe_mosco_liminf, probe_normalization, probe_perturbation_control,
    probe_power_control, probe_superlinearity, run_all_probes,
)
from utils.sampling import ball_samples, grid_samples, make_rng

SCALAR_SYSTEMS = ['decay', 'forced_decay', 'nonautonomous', 'state_dependent', 'stick_slip']


def _quadratic_dissipation(energy, power, perturbation=lambda t, u: np.zeros(1), name='test'):
    return PerturbedGradientSystem(
        name=name, dim=1, energy=energy, power=power,
        dissipation=lambda u, v: 0.5 * float(v @ v),
        dissipation_conj=lambda u, xi: 0.5 * float(xi @ xi),
        perturbation=perturbation,
    )


def test_autonomous_energy_has_zero_power_constant():
    samples = ball_samples([1.0], 1.0, 50, rng=make_rng(1))
    report = probe_power_control(quadratic_system(), samples)
    assert report.inferred_constants['C'] == 0.0
    assert report.passed


def test_exponential_energy_gives_unit_constant():
    sys = _quadratic_dissipation(energy=lambda t, u: np.exp(t) * (1.0 + float(u @ u)),
                                 power=lambda t, u: np.exp(t) * (1.0 + float(u @ u)))
    report = probe_power_control(sys, ball_samples([0.0], 2.0, 100, rng=make_rng(2)))
    assert report.inferred_constants['C'] == pytest.approx(1.0)
    assert report.passed


def test_linear_in_time_energy_on_two_times():
    sys = _quadratic_dissipation(energy=lambda t, u: (1.0 + t) * float(u @ u),
                                 power=lambda t, u: float(u @ u))
    report = probe_power_control(sys, grid_samples([0.0, 1.0], [[1.0]]))
    assert report.inferred_constants['C'] == pytest.approx(1.0)
    assert report.passed


def test_nonpositive_energy_is_rejected():
    sys = quadratic_system(floor=0.0)
    with pytest.raises(NonpositiveEnergy):
        probe_power_control(sys, grid_samples([0.0], [[0.0]]))


def test_zero_perturbation_gives_zero_beta():
    report = probe_perturbation_control(quadratic_system(), 0.5, ball_samples([0.0], 1.0, 20))
    assert report.inferred_constants['beta'] == 0.0


def test_unit_perturbation_beta():
    # c·Ψ*(B/c)/(1+E) = 0.5·0.5·4/2
    sys = _quadratic_dissipation(energy=lambda t, u: 1.0, power=lambda t, u: 0.0,
                                 perturbation=lambda t, u: np.ones(1))
    report = probe_perturbation_control(sys, 0.5, grid_samples([0.0, 0.5], [[0.0], [3.0]]))
    assert report.inferred_constants['beta'] == pytest.approx(0.5)
    assert report.passed


def test_perturbation_control_rejects_bad_c():
    with pytest.raises(ValueError):
        probe_perturbation_control(quadratic_system(), 1.0, ball_samples([0.0], 1.0, 5))


def test_conjugate_overflow():
    sys = _quadratic_dissipation(energy=lambda t, u: 1.0, power=lambda t, u: 0.0,
                                 perturbation=lambda t, u: np.full(1, 1e6))
    with pytest.raises(ConjugateOverflow):
        probe_perturbation_control(sys, 0.5, grid_samples([0.0], [[0.0]]))


def test_mosco_constant_dissipation():
    sys = quadratic_system()
    velocities = [np.array([v]) for v in (-1.0, 0.5, 2.0)]
    report = probe_mosco_liminf([sys] * 3, [np.zeros(1)] * 3, velocities, sys, np.zeros(1))
    assert report.details['deviations'] == [0.0, 0.0, 0.0]
    assert report.passed


def test_mosco_state_dependent_deviation_decreases():
    sys = state_dependent_system()
    bases = [np.array([1.0 + 1.0 / n]) for n in (1, 2, 4, 8, 16)]
    report = probe_mosco_liminf([sys] * len(bases), bases, [np.array([1.0])], sys, np.array([1.0]))
    deviations = report.details['deviations']
    assert all(b < a for a, b in zip(deviations[:-1], deviations[1:]))
    assert report.inferred_constants['final_deviation'] < 0.1


def test_mosco_judges_the_whole_tail():
    sys = state_dependent_system()
    # 중간에 튀었다가 마지막에만 극한에 닿는 수열
    bases = [np.array([b]) for b in (2.0, 1.0, 1.5, 1.0)]
    report = probe_mosco_liminf([sys] * len(bases), bases, [np.array([1.0])], sys, np.array([1.0]))
    assert report.inferred_constants['final_deviation'] == 0.0
    assert report.inferred_constants['tail_deviation'] == pytest.approx(0.5 * 1.5 ** 2 - 0.5)
    assert not report.passed


def test_superlinearity_of_quadratic_dissipation():
    report = probe_superlinearity(quadratic_system(dim=2), ball_samples([0.0, 0.0], 1.0, 30))
    assert report.passed


def test_normalization_of_stick_slip():
    assert probe_normalization(stick_slip_system(), ball_samples([0.0], 1.0, 30)).passed


@pytest.mark.parametrize("name", ['decay', 'state_dependent', 'stick_slip'])
def test_registered_conjugate_matches_numeric(name):
    sys = build_system(name)
    report = probe_conjugate_consistency(sys, ball_samples(sys.metadata['u0'], 1.0, 3, rng=make_rng(4)))
    assert report.passed


def test_duality_consequence_on_flat_part_of_subdifferential():
    sys = stick_slip_system(mu=0.5)
    report = probe_duality_consequence(sys, np.zeros(1), np.zeros(1), np.array([0.2]), np.array([-0.3]))
    assert report.passed


@pytest.mark.parametrize("name", SCALAR_SYSTEMS)
def test_shipped_systems_pass_all_probes(name):
    sys = build_system(name)
    samples = ball_samples(sys.metadata['u0'], 1.0, 1000, t_range=(0.0, 1.0), rng=make_rng(5))
    reports = run_all_probes(sys, samples)
    assert all(report.passed for report in reports), [r.to_dict() for r in reports if not r.passed]
    assert all(np.isfinite(v) for r in reports for v in r.inferred_constants.values())


def test_gronwall_constants_and_envelope():
    sys = build_system('nonautonomous')
    constants = gronwall_constants(sys, ball_samples([1.0], 1.0, 200, rng=make_rng(6)))
    assert 0.0 < constants.C <= 0.5 + 1e-12
    assert constants.beta > 0.0
    env = constants.envelope(2.0, 0.1, 10)
    assert env[0] == 2.0
    assert np.all(np.diff(env) > 0)


def test_flat_envelope_without_constants():
    assert np.allclose(GronwallConstants().envelope(3.0, 0.1, 5), 3.0)


def test_dimension_check():
    with pytest.raises(DimensionMismatch):
        quadratic_system(dim=2).E(0.0, np.zeros(3))


def test_dissipation_functional_exposes_registered_conjugate():
    psi = state_dependent_system().dissipation_functional(np.array([1.0]))
    assert psi(np.array([2.0])) == pytest.approx(4.0)
    assert psi.conjugate(np.array([2.0])) == pytest.approx(1.0)
