#!/usr/bin/env python3
"""
Test script for the proxdiff run services.

Tests configuration, reports, experiment specs, the services and the CLI.
"""

import sys
import os
import json
import tempfile
from pathlib import Path

import numpy as np
import pytest

# Add parent directory to path
sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from proxdiff_py.backend import cli
from proxdiff_py.backend.config import PGMConfig
from proxdiff_py.backend.experiments import BUILTIN_SPECS, ExperimentSpec, builtin_spec, load_spec, spec_from_dict
from proxdiff_py.backend.reports import (
    Reports, read_samples_csv, report_header, spec_digest, write_csv, write_histogram_csv, write_samples_csv,
)
from proxdiff_py.backend.services.base_service import BaseService
from proxdiff_py.backend.services.experiment import ExperimentService, evaluate_check
from proxdiff_py.backend.services.sampling import SamplingService
from proxdiff_py.backend.services.training import TrainingService
from proxdiff_py.backend.services.verification import SUITES, VerificationService
from proxdiff_py.core.errors import ConfigError
from proxdiff_py.core.proxnet import init_params, lambda_encoding, load_params
from proxdiff_py.core.schedules import pgm_coefficients, ve_schedule


class MockService(BaseService):
    """Mock service for testing base service functionality."""

    def _run(self):
        if self.config.get('fail'):
            return Reports.error_entry("asked to fail")
        return Reports.success_entry({'value': self.config.get('value', 1)})

    def get_info(self):
        return {'name': self.name, 'version': '1.0.0'}


SMALL_SCHEDULE = {'kind': 've', 'T': 1.0, 'K': 10, 'lambda': 'exp(10t-8)'}


def test_config():
    """Test configuration management."""
    print("Testing run configuration...")

    config = PGMConfig()
    assert config.get('schedule.kind') == 've', "Default schedule incorrect"
    assert config.get('sampler.chains') == 10000, "Default chain count incorrect"
    assert config.get('potential.beta') == 10.0, "Default potential incorrect"
    assert config.get('missing.key', 'x') == 'x', "Missing keys must return the default"
    print("  ✓ Default values correct")

    config.set('sampler.chains', 50)
    config.set('new.section.value', 3)
    assert config.get('sampler.chains') == 50 and config.get('new.section.value') == 3, "Set failed"
    section = config.get_section('sampler')
    section['chains'] = 7
    assert config.get('sampler.chains') == 50, "get_section must return a copy"
    print("  ✓ Get/set")

    with tempfile.TemporaryDirectory() as tmp:
        path = config.save(Path(tmp) / 'run.json')
        reloaded = PGMConfig(str(path))
        assert reloaded.get('sampler.chains') == 50, "Saved value not reloaded"
        print("  ✓ Save and reload")

        partial = Path(tmp) / 'partial.json'
        partial.write_text(json.dumps({'sampler': {'kind': 'pula'}}))
        merged = PGMConfig(str(partial))
        assert merged.get('sampler.kind') == 'pula' and merged.get('sampler.seed') == 0, \
            "User file must merge over the defaults"
        print("  ✓ Deep merge over defaults")

        broken = Path(tmp) / 'broken.json'
        broken.write_text('{\n  "sampler": {"kind": "pgm",}\n}\n')
        with pytest.raises(ConfigError) as info:
            PGMConfig(str(broken))
        assert info.value.lineno == 2, f"Line number not reported: {info.value}"
        assert ':2:' in str(info.value), "Message must carry path:line:col"
        print("  ✓ Malformed JSON reports its line")

        with pytest.raises(ConfigError):
            PGMConfig(str(Path(tmp) / 'absent.json'))
        print("  ✓ Missing file rejected")

    print("✓ Configuration tests passed\n")


def test_base_service():
    """Test base service functionality."""
    print("Testing BaseService...")

    service = MockService("test", {'value': 5})
    assert service.name == "test", "Service name incorrect"
    assert not service.is_running(), "Service should not be running initially"
    assert service.get_status()['last_success'] is None, "No result before the first run"
    print("  ✓ Service initialized")

    result = service.run()
    assert result == {'success': True, 'data': {'value': 5}}, f"Unexpected result {result}"
    status = service.get_status()
    assert status['last_success'] is True and status['elapsed_seconds'] >= 0.0, "Status not recorded"
    assert not service.is_running(), "Service must stop running after run()"
    print("  ✓ Run and status")

    service.configure({'fail': True})
    assert service.config['value'] == 5, "configure must merge, not replace"
    result = service.run()
    assert not result['success'] and result['error'] == "asked to fail", "Error entry expected"
    assert service.get_status()['last_success'] is False, "Failure not recorded"
    print("  ✓ Configure and failure")

    print("✓ BaseService tests passed\n")


def test_reports():
    """Test report entries and writers."""
    print("Testing reports...")

    assert Reports.success_entry([1], samples='a.csv') == {'success': True, 'data': [1], 'samples': 'a.csv'}
    assert Reports.error_entry("bad", step=3) == {'success': False, 'error': "bad", 'step': 3}
    ok, message = Reports.validate_required_params({'a': 1}, ['a', 'b', 'c'])
    assert not ok and message == "Missing required parameters: b, c", message
    assert Reports.validate_required_params({'a': 1}, ['a']) == (True, "")
    print("  ✓ Entries")

    assert spec_digest({'a': 1, 'b': [1, 2]}) == spec_digest({'b': [1, 2], 'a': 1}), "Key order must not matter"
    assert spec_digest({'a': np.float64(1.0)}) == spec_digest({'a': 1.0}), "numpy scalars serialize as floats"
    assert spec_digest({'a': 1}) != spec_digest({'a': 2}), "Digest must change with the spec"
    header = report_header({'a': 1}, [3, 1])
    assert header['seeds'] == [3, 1] and len(header['spec_sha256']) == 64, "Header incomplete"
    assert {'numpy_version', 'scipy_version', 'python_version', 'proxdiff_version'} <= set(header)
    print("  ✓ Digest and header")

    with tempfile.TemporaryDirectory() as tmp:
        samples = np.array([[0.1, -2.0], [1.0 / 3.0, 5e-300]])
        path = write_samples_csv(Path(tmp) / 'deep' / 'samples.csv', samples)
        assert path.read_text().splitlines()[0] == 'x0,x1', "Sample header incorrect"
        assert np.array_equal(read_samples_csv(path), samples), "Samples must be written at full precision"

        path = write_csv(Path(tmp) / 'rows.csv', [{'a': 1, 'b': None}, {'a': 2, 'c': [1, 2]}])
        lines = path.read_text().splitlines()
        assert lines[0] == 'a,b,c' and lines[1] == '1,,', f"CSV rows incorrect: {lines}"

        path = write_histogram_csv(Path(tmp) / 'hist.csv', {'edges': [0.0, 0.5, 1.0], 'counts': [3, 4]})
        assert path.read_text().splitlines() == ['left,right,count', '0.0,0.5,3', '0.5,1.0,4']
    print("  ✓ Writers")

    print("✓ Report tests passed\n")


def test_experiment_specs():
    """Test experiment spec validation and the built-ins."""
    print("Testing experiment specs...")

    base = {
        'name': 'small',
        'potential': {'f': {'kind': 'zero', 'dim': 1}, 'g': {'kind': 'interval'}, 'beta': 0.0},
        'schedule': SMALL_SCHEDULE,
        'samplers': [{'kind': 'pgm'}, {'label': 'em', 'kind': 'pgm_em'}],
    }
    spec = spec_from_dict(base)
    assert spec.seeds == [0] and spec.chains == 10000, "Defaults not applied"
    assert [spec.label(e) for e in spec.samplers] == ['pgm', 'em'], "Labels incorrect"
    settings = spec.cell_settings({'kind': 'pgm', 'schedule': {'K': 5}, 'label': 'x'})
    assert settings['schedule']['K'] == 5 and settings['schedule']['kind'] == 've', "Override not merged"
    assert 'label' not in settings['sampler'] and settings['sampler']['chains'] == 10000
    print("  ✓ spec_from_dict")

    bad_cases = [
        {k: v for k, v in base.items() if k != 'samplers'},
        dict(base, samplers=[{'kind': 'nope'}]),
        dict(base, samplers=[{'kind': 'pgm'}, {'kind': 'pgm'}]),
        dict(base, metrics=['accuracy']),
        dict(base, metrics=['w1']),
        dict(base, seeds=[]),
        dict(base, colour='red'),
    ]
    for case in bad_cases:
        with pytest.raises(ConfigError):
            spec_from_dict(case)
    print("  ✓ Invalid specs rejected")

    with tempfile.TemporaryDirectory() as tmp:
        path = Path(tmp) / 'spec.json'
        path.write_text(json.dumps(base))
        assert load_spec(str(path)).name == 'small', "Spec not loaded"
        path.write_text('[1, 2]')
        with pytest.raises(ConfigError):
            load_spec(str(path))
    print("  ✓ load_spec")

    for name in BUILTIN_SPECS:
        spec = builtin_spec(name, chains=100, seeds=[1, 2])
        assert isinstance(spec, ExperimentSpec) and spec.chains == 100 and spec.seeds == [1, 2], name
    with pytest.raises(ConfigError):
        builtin_spec('no-such-study')
    print("  ✓ Built-ins")

    print("✓ Experiment spec tests passed\n")


def test_evaluate_check():
    """Test post-run checks against aggregated metrics."""
    print("Testing experiment checks...")

    agg = {'a': {'feasibility': 0.5, 'w1': 0.4}, 'b': {'feasibility': 0.9, 'w1': 0.1}}
    assert evaluate_check({'kind': 'band', 'label': 'a', 'metric': 'feasibility', 'lo': 0.4, 'hi': 0.6}, agg)['within_band']
    assert evaluate_check({'kind': 'greater', 'label': 'b', 'other': 'a', 'metric': 'feasibility'}, agg)['within_band']
    up = {'kind': 'monotone', 'metric': 'feasibility', 'order': ['a', 'b'], 'direction': 'nondecreasing'}
    assert evaluate_check(up, agg)['within_band']
    assert not evaluate_check(dict(up, direction='nonincreasing'), agg)['within_band']
    slope = evaluate_check({'kind': 'slope', 'metric': 'w1', 'x': {'a': 10, 'b': 40}, 'max': -0.9}, agg)
    assert slope['slope'] == pytest.approx(-1.0) and slope['within_band'], f"Slope {slope}"
    print("  ✓ band, greater, monotone, slope")

    missing = evaluate_check({'kind': 'band', 'label': 'c', 'metric': 'feasibility', 'lo': 0, 'hi': 1}, agg)
    assert missing['within_band'] is None and 'missing' in missing['note'], "Missing label must be flagged"
    assert evaluate_check({'kind': 'other'}, agg)['within_band'] is None, "Unknown kind must be flagged"
    print("  ✓ Missing metrics flagged")

    print("✓ Experiment check tests passed\n")


def test_training_service():
    """Training with zero epochs writes the initialization."""
    print("Testing TrainingService...")

    with tempfile.TemporaryDirectory() as tmp:
        service = TrainingService({
            'train': {'epochs': 0, 'hidden': 8, 'seed': 3},
            'prior': {'kind': 'interval', 'lo': -1.0, 'hi': 1.0},
            'schedule': SMALL_SCHEDULE,
            'out': tmp,
        })
        assert service.get_info()['outputs'][0] == 'params.json'
        result = service.run()
        assert result['success'], f"Training failed: {result.get('error')}"
        assert result['data']['epochs'] == 0 and result['data']['final_loss'] is None
        assert result['data']['prox_error'] >= 0.0, "Interval prior must report the clamp error"

        shift, scale = lambda_encoding(ve_schedule("exp(10t-8)", T=1.0, K=10))
        expected = init_params(1, 8, 3, skip=False, lambda_shift=shift, lambda_scale=scale)
        saved = load_params(Path(tmp) / 'params.json')
        assert np.array_equal(saved.flat(), expected.flat()), "Zero epochs must return the initialization"
        for name in ('training_curve.csv', 'train_report.json'):
            assert (Path(tmp) / name).exists(), f"{name} not written"
        print("  ✓ params.json equals init_params")

        failing = TrainingService({
            'train': {'epochs': 1, 'learning_rate': -1.0},
            'prior': {'kind': 'interval'},
            'schedule': SMALL_SCHEDULE,
            'out': tmp,
        })
        result = failing.run()
        assert not result['success'] and 'learning_rate' in result['error'], "Invalid settings must be reported"
        print("  ✓ Invalid settings reported")

        result = TrainingService({'train': {'epochs': 0}, 'out': tmp}).run()
        assert not result['success'], "Missing sections must be an error entry"
        assert result['error'] == "Missing required parameters: prior, schedule", result['error']
        print("  ✓ Missing sections reported")

    print("✓ TrainingService tests passed\n")


def test_sampling_service():
    """A small PGM run writes samples, metadata and a histogram."""
    print("Testing SamplingService...")

    with tempfile.TemporaryDirectory() as tmp:
        service = SamplingService({
            'schedule': SMALL_SCHEDULE,
            'potential': PGMConfig.DEFAULT_CONFIG['potential'],
            'sampler': {'kind': 'pgm', 'chains': 200, 'seed': 4, 'prox': 'analytic'},
            'out': tmp,
            'emit_hist': 10,
        })
        result = service.run()
        assert result['success'], f"Sampling failed: {result.get('error')}"
        samples = read_samples_csv(result['samples'])
        assert samples.shape == (200, 1), f"Unexpected sample shape {samples.shape}"
        assert np.array_equal(samples, service.batch.samples), "CSV must match the batch"
        metadata = json.loads((Path(tmp) / 'metadata.json').read_text())
        assert metadata['seed'] == 4 and metadata['steps'] == 10, "Metadata incomplete"
        hist = (Path(tmp) / 'histogram.csv').read_text().splitlines()
        assert len(hist) == 11, "Histogram must have one row per bin"
        print("  ✓ Outputs written")

        learned = SamplingService({
            'schedule': SMALL_SCHEDULE,
            'potential': PGMConfig.DEFAULT_CONFIG['potential'],
            'sampler': {'kind': 'pgm', 'chains': 10, 'prox': 'learned'},
            'out': tmp,
        })
        result = learned.run()
        assert not result['success'] and 'params' in result['error'], "Learned prox without params must fail"
        print("  ✓ Missing parameter file reported")

        broken = Path(tmp) / 'broken_params.json'
        broken.write_text('{"layers": [')
        learned.configure({'params': str(broken)})
        with pytest.raises(ConfigError):
            learned.run()
        assert not learned.is_running(), "Service must stop running after an exception"
        print("  ✓ Malformed parameter file raised as ConfigError")

        result = SamplingService({'sampler': {'kind': 'pgm'}, 'out': tmp}).run()
        assert result['error'] == "Missing required parameters: schedule, potential", result['error']
        print("  ✓ Missing sections reported")

    print("✓ SamplingService tests passed\n")


def test_experiment_service():
    """A two-cell experiment with one failing cell."""
    print("Testing ExperimentService...")

    spec = spec_from_dict({
        'name': 'tiny',
        'potential': PGMConfig.DEFAULT_CONFIG['potential'],
        'schedule': SMALL_SCHEDULE,
        'samplers': [{'kind': 'pgm'}, {'label': 'broken', 'kind': 'pgm', 'schedule': {'kind': 'nope'}}],
        'seeds': [0, 1],
        'chains': 100,
        'checks': [{'kind': 'band', 'label': 'pgm', 'metric': 'feasibility', 'lo': 0.0, 'hi': 1.0}],
    })
    with tempfile.TemporaryDirectory() as tmp:
        service = ExperimentService({'spec': spec, 'workers': 2, 'out': tmp})
        result = service.run()
        assert not result['success'], "A failed cell must fail the experiment"
        report = result['data']
        assert report['failures'] == 2 and len(report['cells']) == 4, "Cell accounting incorrect"
        assert [r['sampler'] for r in report['cells']] == ['broken', 'broken', 'pgm', 'pgm'], "Rows not sorted"
        assert report['checks'][0]['within_band'] is True, "Feasibility lies in [0, 1]"
        root = Path(tmp) / 'tiny'
        assert (root / 'summary.csv').exists() and (root / 'report.json').exists(), "Reports not written"
        assert (root / 'pgm' / '1' / 'samples.csv').exists(), "Per-cell samples not written"
        print("  ✓ Cells, failures and reports")

        empty = spec_from_dict({'name': 'empty', 'potential': {}, 'schedule': SMALL_SCHEDULE, 'samplers': []})
        result = ExperimentService({'spec': empty, 'out': tmp}).run()
        assert result['success'] and result['data']['cells'] == [], "Empty sampler list is a valid run"
        assert (Path(tmp) / 'empty' / 'summary.csv').read_text().startswith('experiment,sampler,seed')
        print("  ✓ Empty sampler list")

        result = ExperimentService({'out': tmp}).run()
        assert not result['success'] and result['error'] == "Missing required parameters: spec", result
        print("  ✓ Missing spec reported")

    print("✓ ExperimentService tests passed\n")


def test_verification_service():
    """Fast suites pass; a sign-flipped coefficient is caught."""
    print("Testing VerificationService...")

    service = VerificationService({'suites': ['reconstruction', 'coefficients', 'w1-axioms']})
    result = service.run()
    assert result['success'], f"Checks failed: {[e for e in service.entries if not e['passed']]}"
    assert result['data']['failed'] == 0 and result['data']['total'] == len(service.entries)
    print("  ✓ Reference implementation passes")

    def flipped(s, k):
        a1, a2, a3 = pgm_coefficients(s, k)
        return a1, a2, -a3

    service = VerificationService({'suites': ['coefficients'], 'coefficient_fn': flipped})
    result = service.run()
    assert not result['success'], "Flipped alpha3 must be detected"
    failed = {e['name'] for e in result['data']['checks'] if not e['passed']}
    assert failed == {'signs/ve', 'signs/vp'}, f"Only the sign checks should fail: {failed}"
    print("  ✓ Sign flip detected")

    service = VerificationService({'suites': ['envelope-gradient', 'score-gap']})
    service.run()
    names = {e['name']: e for e in service.entries}
    assert 'suite-error' not in names, f"Suite raised: {names.get('suite-error')}"
    assert names['envelope-gradient/ball']['passed'], f"Ball envelope gradient: {names['envelope-gradient/ball']}"
    for beta in ('1', '10', '100'):
        entry = names[f'score-gap/beta={beta}']
        assert entry['passed'], f"Score gap bound at beta={beta}: {entry}"
    print("  ✓ envelope-gradient and score-gap run without errors")

    result = VerificationService({'suites': ['no-such-suite']}).run()
    assert not result['success'] and result['data']['checks'][0]['name'] == 'unknown-suite'
    assert 'coefficients' in SUITES
    print("  ✓ Unknown suite reported")

    print("✓ VerificationService tests passed\n")


def test_cli():
    """Test CLI exit codes."""
    print("Testing CLI...")

    assert cli.main([]) == cli.EXIT_USAGE, "No command is a usage error"
    assert cli.main(['sample', '--chains', 'many']) == cli.EXIT_USAGE, "Bad argument is a usage error"
    assert cli.main(['experiment']) == cli.EXIT_USAGE, "Experiment needs a spec"
    print("  ✓ Usage errors")

    with tempfile.TemporaryDirectory() as tmp:
        broken = Path(tmp) / 'broken.json'
        broken.write_text('{\n\n  "schedule": oops\n}\n')
        assert cli.main(['sample', '--config', str(broken)]) == cli.EXIT_USAGE, "Malformed config"
        assert cli.main(['experiment', '--config', str(broken), '--builtin', 'table1-feasibility']) == cli.EXIT_USAGE
        print("  ✓ Malformed configuration")

        code = cli.main(['verify', '--out', tmp, '--suites', 'reconstruction', 'w1-axioms'])
        assert code == cli.EXIT_OK, f"Verification exit code {code}"
        report = json.loads((Path(tmp) / 'verify_report.json').read_text())
        assert report['success'] and report['failed'] == 0, "verify_report.json incomplete"
        print("  ✓ verify")

        config = Path(tmp) / 'run.json'
        config.write_text(json.dumps({'schedule': SMALL_SCHEDULE}))
        out = Path(tmp) / 'sample'
        code = cli.main(['sample', '--config', str(config), '--out', str(out), '--chains', '50', '--seed', '2'])
        assert code == cli.EXIT_OK and read_samples_csv(out / 'samples.csv').shape == (50, 1), "sample failed"
        print("  ✓ sample")

        broken_params = Path(tmp) / 'params.json'
        broken_params.write_text('{"format_version": 1,\n  "layers": oops}')
        config.write_text(json.dumps({'schedule': SMALL_SCHEDULE, 'sampler': {'kind': 'pgm', 'prox': 'learned'}}))
        code = cli.main(['sample', '--config', str(config), '--out', str(out), '--params', str(broken_params)])
        assert code == cli.EXIT_USAGE, f"Malformed parameter file exit code {code}"
        print("  ✓ Malformed --params is a usage error")

    print("✓ CLI tests passed\n")


def main():
    """Run all tests."""
    print("=" * 60)
    print("proxdiff Backend Tests")
    print("=" * 60 + "\n")

    try:
        test_config()
        test_base_service()
        test_reports()
        test_experiment_specs()
        test_evaluate_check()
        test_training_service()
        test_sampling_service()
        test_experiment_service()
        test_verification_service()
        test_cli()

        print("=" * 60)
        print("✓ ALL TESTS PASSED")
        print("=" * 60)
        return 0

    except AssertionError as e:
        print(f"\n✗ TEST FAILED: {e}")
        return 1
    except Exception as e:
        print(f"\n✗ ERROR: {e}")
        import traceback
        traceback.print_exc()
        return 1


if __name__ == '__main__':
    sys.exit(main())
