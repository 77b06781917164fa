"""End-to-end reproduction runs: full-size runs are slow, the seeded repeat runs are small"""

import json

import pytest

from qcap.exceptions import QcapValidationError
from qcap.models import TrainConfig
from qcap.pipeline import CapabilityPipeline

SIM4_FILES = ('error_model.json', 'circuits.jsonl', 'values.jsonl', 'dataset/train.jsonl', 'dataset/validation.jsonl',
              'dataset/test.jsonl', 'checkpoint.json', 'predictions_test.csv', 'mirror_circuits.jsonl',
              'mirror_dataset/test.jsonl', 'predictions_mirror.csv')
RING_FILES = ('error_model.json', 'circuits.jsonl', 'values.jsonl', 'dataset/train.jsonl', 'dataset/validation.jsonl',
              'dataset/test.jsonl', 'checkpoint.json', 'predictions_test.csv')


def _report(path):
    report = json.loads(path.read_text())
    report.pop('runtime_seconds')
    return report


@pytest.mark.slow
def test_reproduce_sim4(tmp_path):
    summary = CapabilityPipeline().reproduce_sim4(7, tmp_path)
    assert summary['k'] == 132
    assert sum(summary['dataset'].values()) >= 2500
    test, mirror = summary['results']['test'], summary['results']['mirror']
    assert test['mae'] <= 0.004
    assert test['pearson_r'] >= 0.90
    assert mirror['n_records'] >= 500
    assert mirror['mae'] <= 0.015
    assert mirror['pearson_r'] >= 0.80
    assert summary['runtime_seconds'] <= 60 * 60
    for name in ('summary.json', 'report_test.json', 'report_mirror.json', 'scatter_test.svg'):
        assert (tmp_path / name).exists(), name


@pytest.mark.slow
def test_reproduce_ring24(tmp_path):
    summary = CapabilityPipeline().reproduce_ring100(7, tmp_path, qubits=24)
    assert summary['k'] == 6 * 24
    assert summary['results']['test']['mae'] <= 0.003


@pytest.mark.slow
def test_reproduce_ring100_smoke(tmp_path):
    summary = CapabilityPipeline().reproduce_ring100(7, tmp_path, n_circuits=200)
    assert summary['graph'] == 'ring:100'
    report = json.loads((tmp_path / 'report_test.json').read_text())
    assert report['n_records'] == summary['dataset']['test']


def test_sim4_repeat_is_byte_identical(tmp_path):
    cfg = TrainConfig(max_epochs=2, seed=3)
    for name, workers in (('a', 1), ('b', 2)):
        CapabilityPipeline(max_workers=workers).reproduce_sim4(3, tmp_path / name, n_circuits=60, n_mirror=12, cfg=cfg)
    for name in SIM4_FILES:
        assert (tmp_path / 'a' / name).read_bytes() == (tmp_path / 'b' / name).read_bytes(), name
    for name in ('report_test.json', 'report_mirror.json'):
        assert _report(tmp_path / 'a' / name) == _report(tmp_path / 'b' / name)


def test_large_ring_repeat_is_byte_identical(tmp_path):
    cfg = TrainConfig(max_epochs=2, seed=3)
    for name, workers in (('a', 1), ('b', 2)):
        CapabilityPipeline(max_workers=workers).reproduce_ring100(3, tmp_path / name, qubits=8, n_circuits=40,
                                                                  max_depth=10, cfg=cfg)
    for name in RING_FILES:
        assert (tmp_path / 'a' / name).read_bytes() == (tmp_path / 'b' / name).read_bytes(), name
    assert _report(tmp_path / 'a' / 'report_test.json') == _report(tmp_path / 'b' / 'report_test.json')


def test_empty_split_is_refused(tmp_path):
    with pytest.raises(QcapValidationError):
        CapabilityPipeline(max_workers=1)._report_split(None, [], 'test', tmp_path)
