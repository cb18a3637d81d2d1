import json
import logging

import pandas as pd
import pytest

from main import EXIT_ERROR, EXIT_FAIL, EXIT_PASS, build_parser, main, overrides_from_args


@pytest.fixture(autouse=True)
def reset_root_handlers(monkeypatch):
    monkeypatch.delenv('PGS_SEED', raising=False)
    root = logging.getLogger()
    before = list(root.handlers)
    yield
    for handler in root.handlers[:]:
        if handler not in before:
            root.removeHandler(handler)
            handler.close()


def _read_json(path):
    with open(path, encoding='utf-8') as f:
        return json.load(f)


def test_solve_writes_trajectory_and_manifest(tmp_path):
    out = tmp_path / 'solve'
    assert main(['solve', '--system', 'decay', '--N', '16', '--output', str(out)]) == EXIT_PASS
    frame = pd.read_csv(out / 'trajectory.csv')
    assert list(frame.columns[:3]) == ['t_n', 'energy', 'step_iters']
    assert len(frame) == 17
    manifest = _read_json(out / 'manifest.json')
    assert manifest['passed'] is True
    assert manifest['command'] == 'solve'
    assert 'trajectory.csv' in manifest['files']
    assert _read_json(out / 'config.json')['N'] == 16
    assert (out / 'pgslab.log').exists()


def test_reruns_are_byte_identical(tmp_path):
    args = ['solve', '--system', 'forced_decay', '--N', '32', '--seed', '3']
    assert main(args + ['--output', str(tmp_path / 'a')]) == EXIT_PASS
    assert main(args + ['--output', str(tmp_path / 'b')]) == EXIT_PASS
    for name in ('trajectory.csv', 'manifest.json'):
        assert (tmp_path / 'a' / name).read_bytes() == (tmp_path / 'b' / name).read_bytes()


def test_solve_pde_writes_field_snapshots(tmp_path):
    out = tmp_path / 'pde'
    assert main(['solve', '--system', 'rds_heat', '--T', '0.05', '--N', '8', '--set', 'pde.eps=0.5',
                 '--output', str(out)]) == EXIT_PASS
    fields = pd.read_csv(out / 'fields.csv')
    assert list(fields.columns) == ['t', 'x', 'u_0']
    assert fields['t'].nunique() == 9


def test_means_on_oscillatory_dissipation(tmp_path):
    out = tmp_path / 'means'
    assert main(['means', '--set', 'pde.instance=osc_dissipation', '--output', str(out)]) == EXIT_PASS
    means = _read_json(out / 'means.json')
    assert means['A_aver'] == pytest.approx(2.0, abs=1e-12)
    assert means['A_harm'] == pytest.approx(1.7320508, abs=1e-7)
    assert means['min_eig_aver_minus_harm'] > 0.0


def test_cell_matches_closed_form(tmp_path):
    out = tmp_path / 'cell'
    assert main(['cell', '--output', str(out)]) == EXIT_PASS
    cell = _read_json(out / 'cell.json')
    assert cell['value'] == pytest.approx(0.5 * 3 ** 0.5 + 0.25, abs=1e-6)
    corrector = pd.read_csv(out / 'corrector.csv')
    assert len(corrector) == 64


@pytest.mark.parametrize("command", ['edb', 'moreau', 'probes'])
def test_decay_diagnostics_pass(command, tmp_path):
    out = tmp_path / command
    assert main([command, '--system', 'decay', '--output', str(out)]) == EXIT_PASS
    assert (out / f'{command}.json').exists()


def test_probes_record_constants(tmp_path):
    out = tmp_path / 'probes'
    assert main(['probes', '--system', 'nonautonomous', '--set', 'probes.samples=200',
                 '--output', str(out)]) == EXIT_PASS
    constants = _read_json(out / 'manifest.json')['probe_constants']
    assert set(constants) == {'nonautonomous.C', 'nonautonomous.beta'}


def test_failed_gate_returns_one(tmp_path):
    out = tmp_path / 'tau'
    code = main(['tau-sweep', '--tau', '0.25,0.125,0.0625', '--set', 'sweep.decrease_factor=0.01',
                 '--output', str(out)])
    assert code == EXIT_FAIL
    assert _read_json(out / 'manifest.json')['passed'] is False
    assert (out / 'tau_sweep.csv').exists()


def test_config_errors_return_two(tmp_path, capsys):
    assert main(['solve', '--system', 'pendulum', '--output', str(tmp_path / 'x')]) == EXIT_ERROR
    assert 'pendulum' in capsys.readouterr().err
    assert main(['solve', '--set', 'N', '--output', str(tmp_path / 'y')]) == EXIT_ERROR
    assert main(['solve', '--config', str(tmp_path / 'missing.env')]) == EXIT_ERROR


def test_overrides_from_args():
    args = build_parser().parse_args(['eps-sweep', '--eps', '0.5,0.25,0.125', '--cells', '256',
                                      '--set', 'sweep.workers = 2'])
    overrides = overrides_from_args(args)
    assert overrides == {'command': 'eps-sweep', 'eps': '0.5,0.25,0.125', 'pde.cells': '256',
                         'sweep.workers': '2'}
