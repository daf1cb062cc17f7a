"""
End-to-end tests for the command-line entry point

Feature: onebit-ofdm, Property 7: Reproducible Command-Line Runs
Byte-identical CSV output for identical seeds and configs, exit codes for
configuration errors, and the trace subcommand outputs.
"""

import json

import pytest
import pandas as pd
import sys
import os

# Add the project root to the path so we can import components
sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from app import build_parser, cli_main, resolve_config, EXIT_OK, EXIT_USAGE


SMALL_EXPERIMENT = {
    'N': 8, 'K': 2, 'W': 16, 'L': 4, 'D': 1,
    'snr_db_grid': [0.0, 10.0],
    'trials': 3,
    'base_seed': 11,
    'detectors': [
        {'variant': 'zf', 'use_quantized': False},
        {'variant': 'zf', 'use_quantized': True},
        {'variant': 'em_apg', 'B': 5, 'max_em_iters': 50},
        {'variant': 'onebox', 'onebox_step_schedule': [0.02, 0.002, 40]},
    ],
}


@pytest.fixture(autouse=True)
def clean_environment(monkeypatch, tmp_path):
    for name in ('ONEBIT_WORKERS', 'ONEBIT_RECORD_TIMING', 'ONEBIT_OUTPUT_DIR', 'ONEBIT_LOG_LEVEL'):
        monkeypatch.delenv(name, raising=False)
    monkeypatch.chdir(tmp_path)


@pytest.fixture
def config_path(tmp_path):
    path = tmp_path / 'experiment.json'
    path.write_text(json.dumps(SMALL_EXPERIMENT))
    return path


class TestBerCommand:
    """ber subcommand"""

    def test_writes_csv_and_manifest(self, config_path, tmp_path):
        out = tmp_path / 'out'
        assert cli_main(['ber', '--config', str(config_path), '--out', str(out)]) == EXIT_OK

        frame = pd.read_csv(out / 'ber.csv')
        assert set(frame['detector']) == {'zf_fullres', 'zf_onebit', 'em_apg_b5', 'onebox'}
        manifest = json.loads((out / 'manifest.json').read_text())
        assert manifest['command'] == 'ber'
        assert manifest['base_seed'] == 11
        assert set(manifest['sigma_c_sq']) == {'0', '10'}
        assert manifest['version']

    def test_identical_runs_give_identical_bytes(self, config_path, tmp_path):
        outputs = []
        for run, workers in enumerate(('1', '2', '8')):
            out = tmp_path / f'run{run}'
            argv = ['ber', '--config', str(config_path), '--out', str(out), '--seed', '5', '--workers', workers]
            assert cli_main(argv) == EXIT_OK
            outputs.append((out / 'ber.csv').read_bytes())
        assert outputs[0] == outputs[1] == outputs[2]

    def test_seed_changes_results(self, config_path, tmp_path):
        for seed in ('1', '2'):
            cli_main(['ber', '--config', str(config_path), '--out', str(tmp_path / seed), '--seed', seed])
        first = json.loads((tmp_path / '1' / 'manifest.json').read_text())['sigma_c_sq']
        second = json.loads((tmp_path / '2' / 'manifest.json').read_text())['sigma_c_sq']
        assert first != second

    def test_trials_override(self, config_path, tmp_path):
        out = tmp_path / 'out'
        cli_main(['ber', '--config', str(config_path), '--out', str(out), '--trials', '1'])
        assert (pd.read_csv(out / 'ber.csv')['trials'] == 1).all()

    def test_environment_output_dir(self, config_path, tmp_path, monkeypatch):
        monkeypatch.setenv('ONEBIT_OUTPUT_DIR', str(tmp_path / 'from_env'))
        assert cli_main(['ber', '--config', str(config_path), '--trials', '1']) == EXIT_OK
        assert (tmp_path / 'from_env' / 'ber.csv').is_file()


class TestTraceCommand:
    """trace subcommand"""

    def test_one_csv_per_iterative_detector(self, config_path, tmp_path):
        out = tmp_path / 'traces'
        assert cli_main(['trace', '--config', str(config_path), '--out', str(out), '--snr-db', '5']) == EXIT_OK
        assert sorted(p.name for p in out.glob('trace_*.csv')) == ['trace_em_apg_b5.csv', 'trace_onebox.csv']
        frame = pd.read_csv(out / 'trace_onebox.csv')
        assert len(frame) == 41
        manifest = json.loads((out / 'manifest.json').read_text())
        assert manifest['snr_db'] == 5.0
        assert manifest['traces']['onebox']['iterations'] == 40


class TestUsageErrors:
    """Configuration and usage problems exit with status 2"""

    def test_missing_config_names_path(self, tmp_path, capsys):
        missing = tmp_path / 'nowhere.json'
        assert cli_main(['ber', '--config', str(missing)]) == EXIT_USAGE
        assert str(missing) in capsys.readouterr().err

    def test_unknown_flag(self, config_path):
        assert cli_main(['ber', '--config', str(config_path), '--bogus']) == EXIT_USAGE

    def test_config_and_preset_exclusive(self, config_path):
        assert cli_main(['ber', '--config', str(config_path), '--preset', 'qam4_256x36x512']) == EXIT_USAGE

    def test_malformed_json(self, tmp_path, capsys):
        path = tmp_path / 'broken.json'
        path.write_text('{"N": 8, ')
        assert cli_main(['ber', '--config', str(path)]) == EXIT_USAGE
        assert 'malformed JSON' in capsys.readouterr().err

    def test_invalid_values(self, tmp_path):
        path = tmp_path / 'bad.json'
        path.write_text(json.dumps(dict(SMALL_EXPERIMENT, W=12)))
        assert cli_main(['ber', '--config', str(path)]) == EXIT_USAGE

    def test_wrong_value_type(self, tmp_path, capsys):
        path = tmp_path / 'typed.json'
        path.write_text(json.dumps(dict(SMALL_EXPERIMENT, N='8')))
        assert cli_main(['ber', '--config', str(path)]) == EXIT_USAGE
        assert "'N' must be an integer" in capsys.readouterr().err

    def test_wrong_detector_value_type(self, tmp_path):
        path = tmp_path / 'typed.json'
        path.write_text(json.dumps(dict(SMALL_EXPERIMENT, detectors=[{'variant': 'em_apg', 'B': '5'}])))
        assert cli_main(['ber', '--config', str(path)]) == EXIT_USAGE

    def test_negative_seed(self, config_path, capsys):
        assert cli_main(['ber', '--config', str(config_path), '--seed', '-1']) == EXIT_USAGE
        assert 'base_seed' in capsys.readouterr().err

    def test_invalid_override(self, config_path):
        assert cli_main(['ber', '--config', str(config_path), '--workers', '0']) == EXIT_USAGE

    def test_invalid_environment_value(self, config_path, monkeypatch):
        monkeypatch.setenv('ONEBIT_WORKERS', 'many')
        assert cli_main(['ber', '--config', str(config_path)]) == EXIT_USAGE


class TestPresets:
    """Published settings resolve without being run"""

    def test_preset_with_overrides(self):
        args = build_parser().parse_args(['ber', '--preset', 'qam16_256x20x512', '--seed', '3', '--trials', '2'])
        config = resolve_config(args)
        assert (config.N, config.K, config.W, config.D) == (256, 20, 512, 2)
        assert config.base_seed == 3
        assert config.trials == 2
