import json
import runpy

import pandas as pd
import pytest

import bpcs.main
from bpcs import cli
from bpcs.model import load_instance, save_instance


@pytest.fixture
def instance_file(tmp_path, worked_example):
    path = tmp_path / 'worked.json'
    save_instance(worked_example, str(path))
    return str(path)


@pytest.fixture
def chain_file(tmp_path, chain):
    path = tmp_path / 'chain.json'
    save_instance(chain, str(path))
    return str(path)


class TestMain:

    def test_usage(self, capsys):
        assert cli.main([]) == cli.EXIT_INVALID
        assert 'commands:' in capsys.readouterr().out
        assert cli.main(['--help']) == cli.EXIT_OK

    def test_version(self, capsys):
        assert cli.main(['--version']) == cli.EXIT_OK
        assert capsys.readouterr().out.startswith('bpcs ')

    def test_unknown_command(self, capsys):
        assert cli.main(['fly']) == cli.EXIT_INVALID
        assert '**** Unknown command: fly' in capsys.readouterr().out

    def test_bad_flag(self):
        assert cli.main(['solve', '--no-such-flag']) == cli.EXIT_INVALID

    def test_command_help(self):
        assert cli.main(['solve', '--help']) == cli.EXIT_OK

    def test_stray_arguments(self, capsys, instance_file):
        assert cli.main(['solve', '-i', instance_file, 'extra']) == cli.EXIT_INVALID
        assert '**** Unexpected arguments: extra' in capsys.readouterr().out

    def test_launcher_module(self, capsys):
        assert bpcs.main.main(['--version']) == cli.EXIT_OK


class TestGenerate:

    def test_writes_named_instance(self, tmp_path, capsys):
        out = tmp_path / 'gen.json'
        assert cli.main(['generate', '--seed', '3', '-o', str(out)]) == cli.EXIT_OK
        inst = load_instance(str(out))
        assert inst.name == 'h60-f10-s0.6-sif-3'
        assert 'h60-f10-s0.6-sif-3' in capsys.readouterr().out

    def test_same_seed_same_bytes(self, tmp_path):
        a, b = tmp_path / 'a.json', tmp_path / 'b.json'
        cli.main(['generate', '--compact', '--tasks', '4', '--seed', '5', '-o', str(a)])
        cli.main(['generate', '--compact', '--tasks', '4', '--seed', '5', '-o', str(b)])
        assert a.read_bytes() == b.read_bytes()

    def test_invalid_arguments(self, tmp_path, capsys):
        code = cli.main(['generate', '--horizon', '45', '-o', str(tmp_path / 'x.json')])
        assert code == cli.EXIT_INVALID
        out = capsys.readouterr().out
        assert '**** generate failed: invalid input.' in out
        assert '... Reason:' in out


class TestSolve:

    def test_prints_routes(self, capsys, instance_file):
        assert cli.main(['solve', '-i', instance_file]) == cli.EXIT_OK
        out = capsys.readouterr().out
        assert 'worked-example: optimal' in out

    def test_writes_solution_and_stats(self, tmp_path, instance_file):
        sol = tmp_path / 'sol.json'
        stats = tmp_path / 'stats.csv'
        lp = tmp_path / 'root.lp'
        code = cli.main(['solve', '-i', instance_file, '-o', str(sol), '--stats', str(stats), '--timings',
                         '--dump-lp', str(lp)])
        assert code == cli.EXIT_OK
        assert json.loads(sol.read_text())['columns']
        frame = pd.read_csv(stats)
        assert frame.loc[0, 'status'] == 'optimal'
        assert 'runtime' in frame.columns
        assert 'Minimize' in lp.read_text()

    def test_missing_file(self, tmp_path, capsys):
        assert cli.main(['solve', '-i', str(tmp_path / 'none.json')]) == cli.EXIT_INVALID
        assert '**** solve failed: invalid input.' in capsys.readouterr().out

    def test_malformed_instance(self, tmp_path):
        path = tmp_path / 'bad.json'
        path.write_text('{"tasks": []}')
        assert cli.main(['solve', '-i', str(path)]) == cli.EXIT_INVALID

    def test_infeasible(self, tmp_path, chain, capsys):
        tight = chain.replace(tasks=tuple(t.__class__(t.id, 2, 6, 6, t.weight, t.location, t.exec_times)
                                          for t in chain.tasks))
        path = tmp_path / 'tight.json'
        save_instance(tight, str(path))
        assert cli.main(['solve', '-i', str(path)]) == cli.EXIT_INFEASIBLE
        assert '**** No feasible plan found' in capsys.readouterr().out

    def test_config_file_and_flags(self, tmp_path, instance_file):
        config = tmp_path / 'solver.jsn'
        config.write_text(json.dumps({'features': 'basic', 'time-limit': 30}))
        stats = tmp_path / 'stats.csv'
        assert cli.main(['solve', '-i', instance_file, '--config', str(config), '--features', 'no-cgc',
                         '--stats', str(stats)]) == cli.EXIT_OK
        assert pd.read_csv(stats).loc[0, 'features'] == 'no-cgc'

    def test_bad_config_key(self, tmp_path, instance_file):
        config = tmp_path / 'solver.jsn'
        config.write_text(json.dumps({'speed': 'max'}))
        assert cli.main(['solve', '-i', instance_file, '--config', str(config)]) == cli.EXIT_INVALID


def test_simulate_from_saved_plan(tmp_path, instance_file):
    sol = tmp_path / 'sol.json'
    cli.main(['solve', '-i', instance_file, '-o', str(sol)])
    metrics = tmp_path / 'm.csv'
    hist = tmp_path / 'h.csv'
    code = cli.main(['simulate', '-i', instance_file, '--solution', str(sol), '--scenarios', '20',
                     '--histogram', str(hist), '-o', str(metrics)])
    assert code == cli.EXIT_OK
    frame = pd.read_csv(metrics)
    assert frame.loc[0, 'scenarios'] == 20
    assert 0.0 <= frame.loc[0, 'sl_mean'] <= 1.0
    assert list(pd.read_csv(hist).columns) == ['delay', 'count']


def test_simulate_is_reproducible(tmp_path, instance_file):
    a, b = tmp_path / 'a.csv', tmp_path / 'b.csv'
    for out in (a, b):
        cli.main(['simulate', '-i', instance_file, '--scenarios', '15', '--seed', '9', '-o', str(out)])
    assert a.read_bytes() == b.read_bytes()


def test_compare_table(tmp_path, chain_file):
    out = tmp_path / 'cmp.csv'
    code = cli.main(['compare', '-i', chain_file, '--scenarios', '2', '--gammas', '0.8,0.9',
                     '--evpi-scenarios', '1', '-o', str(out)])
    assert code == cli.EXIT_OK
    frame = pd.read_csv(out)
    assert list(frame['travel_times']) == ['best', 'mean', 'median', 'worst', 'stochastic-0.8', 'stochastic-0.9']


def test_bad_gammas(chain_file):
    assert cli.main(['compare', '-i', chain_file, '--gammas', 'high']) == cli.EXIT_INVALID


def test_saa_prints_count(capsys, chain_file):
    code = cli.main(['saa', '-i', chain_file, '--start', '5', '--step', '5', '--batches', '2'])
    assert code == cli.EXIT_OK
    assert capsys.readouterr().out.strip().splitlines()[-1] == '5'


def test_solve_is_reproducible(tmp_path, instance_file):
    outputs = []
    for run in ('a', 'b'):
        sol = tmp_path / ('%s.json' % run)
        stats = tmp_path / ('%s.csv' % run)
        assert cli.main(['solve', '-i', instance_file, '-o', str(sol), '--stats', str(stats)]) == cli.EXIT_OK
        outputs.append((sol.read_bytes(), stats.read_bytes()))
    assert outputs[0] == outputs[1]


def test_python_dash_m(monkeypatch, capsys):
    monkeypatch.setattr('sys.argv', ['bpcs', '--version'])
    with pytest.raises(SystemExit) as exit_info:
        runpy.run_module('bpcs', run_name='__main__')
    assert exit_info.value.code == cli.EXIT_OK
    assert capsys.readouterr().out.startswith('bpcs ')
