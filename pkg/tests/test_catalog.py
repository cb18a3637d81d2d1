import numpy as np
import pytest

from models.catalog import SYSTEM_CATALOG, build_system, catalog_names, pde_instance_name


@pytest.mark.parametrize("name", catalog_names())
def test_every_entry_builds(name):
    params = {'eps': 0.5} if SYSTEM_CATALOG[name].pde else {}
    sys = build_system(name, params)
    u0 = sys.metadata['u0']
    assert sys.check_dim(u0).size == sys.dim
    assert np.isfinite(sys.E(0.0, u0))
    assert sys.dissipation(u0, np.zeros(sys.dim)) == 0.0


def test_unknown_system_lists_catalog():
    with pytest.raises(KeyError) as info:
        build_system('pendulum')
    assert 'decay' in str(info.value)


def test_pde_instance_name():
    assert pde_instance_name('rds_osc_diffusion') == 'osc_diffusion'


def test_pde_system_resolves_eps():
    sys = build_system('rds_osc_dissipation', {'eps': 0.25})
    assert sys.metadata['grid'].cells_per_axis == 64
    assert sys.dim == 65


def test_decay_exact_solution():
    sys = build_system('forced_decay')
    exact = sys.metadata['exact']
    assert exact(1.0, [0.0])[0] == pytest.approx(1.0 - np.exp(-1.0))


def test_system_parameters_are_forwarded():
    sys = build_system('decay', {'dim': 3, 'floor': 2.0})
    assert sys.dim == 3
    assert sys.E(0.0, np.zeros(3)) == 2.0
