import os

import pytest

from config.config import Config, RunConfig, parse_config, read_config_file
from exceptions.exceptions import ConfigError


@pytest.fixture(autouse=True)
def isolated_env(monkeypatch, tmp_path):
    monkeypatch.setenv('PGS_OUTPUT_ROOT', str(tmp_path / 'runs'))
    monkeypatch.delenv('PGS_SEED', raising=False)
    monkeypatch.delenv('PGS_LOG_LEVEL', raising=False)


def _field(**overrides):
    with pytest.raises(ConfigError) as info:
        parse_config(overrides=overrides)
    return info.value.field


def test_defaults(tmp_path):
    cfg = parse_config(overrides={'command': 'solve'})
    assert cfg.system == 'decay'
    assert cfg.T == 1.0 and cfg.N == 64
    assert cfg.tau == pytest.approx(1.0 / 64)
    assert cfg.seed == 20240521
    assert cfg.output_dir == os.path.join(str(tmp_path / 'runs'), 'solve_decay')


def test_config_file_and_override_precedence(tmp_path):
    path = tmp_path / 'run.env'
    path.write_text(
        "# 강제 감쇠 실행\n"
        "command=tau-sweep\n"
        "system=forced_decay\n"
        "T=2.0\n"
        "N=16\n"
        "system.floor=2\n"
        "system.forcing=0.5\n"
        "tau=0.5,0.25,0.125\n"
        "homog.table=yes\n"
    )
    cfg = parse_config(str(path), overrides={'N': '32', 'seed': None})
    assert cfg.command == 'tau-sweep'
    assert cfg.system == 'forced_decay'
    assert cfg.T == 2.0
    assert cfg.N == 32
    assert cfg.system_params == {'floor': 2, 'forcing': 0.5}
    assert isinstance(cfg.system_params['floor'], int)
    assert cfg.tau_list == (0.5, 0.25, 0.125)
    assert cfg.homog_table is True


def test_to_dict_uses_lists():
    data = parse_config(overrides={'command': 'solve'}).to_dict()
    assert isinstance(data['tau_list'], list)
    assert data['command'] == 'solve'


def test_missing_file():
    with pytest.raises(ConfigError) as info:
        read_config_file('/nonexistent/run.env')
    assert info.value.field == 'config'


def test_command_is_required():
    assert _field(system='decay') == 'command'


def test_unknown_command():
    assert _field(command='plot') == 'command'


def test_unknown_key():
    assert _field(command='solve', colour='red') == 'colour'


def test_unknown_system_lists_catalog():
    with pytest.raises(ConfigError) as info:
        parse_config(overrides={'command': 'solve', 'system': 'pendulum'})
    assert info.value.field == 'system'
    assert 'decay' in str(info.value)


def test_probes_accept_all_systems():
    assert parse_config(overrides={'command': 'probes', 'system': 'all'}).system == 'all'
    assert _field(command='solve', system='all') == 'system'


@pytest.mark.parametrize(
    "key, value",
    [
        ('N', 'abc'),
        ('N', '0'),
        ('T', '-1'),
        ('solver.method', 'newton'),
        ('solver.grad_tol', '0'),
        ('pde.eps', '1.5'),
        ('pde.instance', 'plasma'),
        ('homog.table', 'maybe'),
        ('sweep.dissipation_mode', 'geometric'),
        ('moreau.r', '0.5,0.25'),
        ('system.floor', 'high'),
    ],
)
def test_invalid_values_name_their_key(key, value):
    assert _field(command='solve', **{key: value}) == key


def test_moreau_values_must_fit_horizon():
    assert _field(command='moreau', T='0.1') == 'moreau.r'
    assert parse_config(overrides={'command': 'solve', 'T': '0.1'}).T == 0.1


def test_tau_sweep_needs_three_values():
    assert _field(command='tau-sweep', tau='0.5,0.25') == 'tau'
    assert _field(command='tau-sweep', tau='0.5,0.125,0.25') == 'tau'


def test_eps_sweep_resolution_rule():
    with pytest.raises(ConfigError) as info:
        parse_config(overrides={'command': 'eps-sweep', 'system': 'rds_osc_diffusion', 'pde.cells': '32'})
    assert info.value.field == 'pde.cells'
    assert 'resolution rule' in str(info.value)
    cfg = parse_config(overrides={'command': 'eps-sweep', 'system': 'rds_osc_diffusion', 'pde.cells': '1024'})
    assert cfg.pde_cells == 1024


def test_eps_values_must_lie_in_unit_interval():
    assert _field(command='eps-sweep', eps='2.0,1.0,0.5') == 'eps'


def test_environment_seed(monkeypatch):
    monkeypatch.setenv('PGS_SEED', '7')
    assert parse_config(overrides={'command': 'solve'}).seed == 7
    assert parse_config(overrides={'command': 'solve', 'seed': '11'}).seed == 11


def test_invalid_environment_seed(monkeypatch):
    monkeypatch.setenv('PGS_SEED', 'seven')
    with pytest.raises(ConfigError) as info:
        Config()
    assert info.value.field == 'PGS_SEED'


def test_run_config_tau():
    assert RunConfig(command='solve', T=2.0, N=8).tau == 0.25
