import os

import pandas as pd
import pytest

import run
from lattice import PSL2Z, enumerate_arrays
from utils.base import manifest_path, read_config


def _run(*argv):
    return run.main(list(argv) + ['--track', 'False'])


def test_count_writes_csv_and_manifest(tmp_path, cache_env):
    out = str(tmp_path / 'count.csv')
    assert _run('count', '--group', 'psl2z', '--tmax', '3', '--out', out, '--threads', '1') == 0
    with open(out) as f:
        assert f.readline().strip() == 't,N'
    table = pd.read_csv(out)
    assert table['N'].iloc[-1] == len(enumerate_arrays(3.0, PSL2Z))
    assert table['t'].iloc[-1] == pytest.approx(3.0)
    manifest = read_config(manifest_path(out))
    assert manifest['command'] == 'count'
    assert manifest['group'] == 'psl2z'
    assert manifest['schema_version'] == '1'
    assert manifest['cache_0'].startswith('counts_psl2z_')


def test_manifest_replays_bit_exactly(tmp_path, cache_env):
    first = str(tmp_path / 'first.csv')
    second = str(tmp_path / 'second.csv')
    assert _run('target', '--radius', 'constant:0.2', '--T', '50', '--trials', '6', '--seed', '7',
                '--out', first, '--threads', '1') == 0
    assert _run('--config', manifest_path(first), '--out', second) == 0
    for a, b in ((first, second), (first[:-4] + '_trials.csv', second[:-4] + '_trials.csv')):
        with open(a, 'rb') as fa, open(b, 'rb') as fb:
            assert fa.read() == fb.read()


def test_replay_without_out_leaves_the_recorded_run_alone(tmp_path, monkeypatch, cache_env):
    first = str(tmp_path / 'first.csv')
    assert _run('target', '--radius', 'constant:0.2', '--T', '30', '--trials', '4', '--out', first,
                '--threads', '1') == 0
    assert 'out' not in read_config(manifest_path(first))
    with open(first, 'rb') as f:
        recorded = f.read()
    replay_dir = tmp_path / 'replay'
    replay_dir.mkdir()
    monkeypatch.chdir(replay_dir)
    assert _run('--config', manifest_path(first)) == 0
    assert (replay_dir / 'target.csv').read_bytes() == recorded
    with open(first, 'rb') as f:
        assert f.read() == recorded


def test_target_writes_the_second_moment_bound(tmp_path):
    out = str(tmp_path / 'target.csv')
    assert _run('target', '--radius', 'powerlaw:0.5,0.5', '--T', '60', '--trials', '6', '--checkpoints', '3,30',
                '--c4', '2', '--out', out, '--threads', '1') == 0
    l2 = pd.read_csv(str(tmp_path / 'target_l2.csv'), comment='#')
    assert l2.columns.tolist() == ['T', 'second_moment', 'first', 'second', 'third', 'bound_ratio']
    # horizons before the first radius below R have no bound
    assert list(l2['T']) == [30, 60]
    assert (l2['bound_ratio'] > 0).all()
    assert os.path.exists(manifest_path(str(tmp_path / 'target_l2.csv')))


def test_target_above_R_skips_the_bound(tmp_path):
    out = str(tmp_path / 'target.csv')
    assert _run('target', '--radius', 'constant:0.5', '--T', '10', '--trials', '2', '--out', out) == 0
    assert not os.path.exists(str(tmp_path / 'target_l2.csv'))


def test_shells_writes_the_bound_table_and_well_roundedness(tmp_path, cache_env):
    out = str(tmp_path / 'shells.csv')
    assert _run('shells', '--group', 'gamma2', '--imin', '3', '--imax', '6', '--r', '0.1,0.5', '--c4', '2',
                '--t0', '1', '--eps', '0.2', '--out', out, '--threads', '1') == 0
    with open(out) as f:
        assert '# c4=2 t0=1 max_ratio=' in f.read()
    table = pd.read_csv(out, comment='#')
    assert table.columns.tolist() == ['h', 'i', 'r', 'count', 'ratio', 'in_regime']
    assert len(table) == 8
    rounded = pd.read_csv(str(tmp_path / 'shells_well_roundedness.csv'), comment='#')
    assert rounded.columns.tolist() == ['t', 'ratio', 'flagged']
    assert not rounded['flagged'].any()


def test_flags_win_over_the_config(tmp_path):
    config = tmp_path / 'run.cfg'
    config.write_text('# replay\ncommand=target\nT=50\ntrials=6\nradius=constant:0.2\n')
    args = run.parse_args(['--config', str(config), '--T', '20'])
    assert args.command == 'target'
    assert args.T == 20
    assert args.trials == 6
    assert run.parse_args(['target']).T == 10_000


def test_target_csv_does_not_depend_on_threads(tmp_path):
    outputs = []
    for threads in ('1', '3'):
        out = str(tmp_path / f'target_{threads}.csv')
        assert _run('target', '--radius', 'constant:0.2', '--T', '40', '--trials', '120', '--seed', '3',
                    '--checkpoints', '20', '--out', out, '--threads', threads) == 0
        with open(out, 'rb') as f:
            outputs.append(f.read())
    assert outputs[0] == outputs[1]
    report = pd.read_csv(str(tmp_path / 'target_1.csv'))
    assert list(report.columns) == run.REPORT_COLUMNS
    assert list(report['T']) == [20, 40]


def test_twoball_csv(tmp_path):
    out = str(tmp_path / 'twoball.csv')
    assert _run('twoball', '--d', '4,6', '--samples', '2000', '--out', out) == 0
    table = pd.read_csv(out)
    assert list(table.columns) == run.TWOBALL_COLUMNS
    assert len(table) == 2


def test_conditions_outputs(tmp_path):
    out = str(tmp_path / 'conditions.txt')
    assert _run('conditions', '--radius', 'powerlaw:0.5,0.5', '--smax', '2000', '--out', out,
                '--bound_T', '100', '--h', '1', '--c4', '2') == 0
    with open(out) as f:
        text = f.read()
    assert '# condition3: holds-empirically' in text
    assert '# condition4: fails-empirically' in text
    assert '# bound_rhs' in text
    witness = str(tmp_path / 'conditions_condition3.csv')
    assert pd.read_csv(witness, comment='#').columns.tolist() == ['s', 'ratio']
    assert os.path.exists(manifest_path(witness))


def test_fit_csv(tmp_path, cache_env):
    out = str(tmp_path / 'fit.csv')
    assert _run('fit', '--group', 'psl2z', '--tmax', '8', '--out', out) == 0
    assert pd.read_csv(out).columns.tolist() == ['group', 't_lo', 't_hi', 'kappa', 'q', 'c4']


def test_selftest_reports_every_gate(tmp_path):
    out = str(tmp_path / 'selftest.csv')
    code = _run('reduce-selftest', '--quick', 'True', '--out', out)
    table = pd.read_csv(out)
    assert table.columns.tolist() == ['check', 'value', 'threshold', 'passed']
    assert code == (0 if table['passed'].all() else 3)
    assert table.loc[table['check'].str.startswith('enumeration_oracle'), 'passed'].all()


def test_validation_errors_exit_with_two(tmp_path):
    assert _run('target', '--radius', 'bogus:1', '--out', str(tmp_path / 'x.csv')) == 2
    assert _run('count', '--no-such-flag') == 2
    assert run.main([]) == 2
    assert _run('count', '--tmax', '40', '--out', str(tmp_path / 'y.csv')) == 2


def test_tracking_logs_to_a_local_store(tmp_path, cache_env):
    store = tmp_path / 'mlruns'
    out = str(tmp_path / 'count.csv')
    code = run.main(['count', '--group', 'gamma2', '--tmax', '2', '--out', out, '--track', 'True',
                     '--tracking_uri', f'file:{store}', '--experiment_name', 'tests'])
    assert code == 0
    assert store.exists()
