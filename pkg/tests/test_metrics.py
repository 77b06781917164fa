import math

import numpy as np
import pandas as pd
import pytest

from qcap.exceptions import ConstantSeries, QcapValidationError
from qcap.metrics import (
    bayes_factor_pst,
    build_report,
    mae,
    pearson,
    prediction_table,
    read_predictions,
    scatter_plot,
    write_predictions,
)
from qcap.models import EvalReport
from qcap.simulators import sample_shots


def test_mae_example():
    assert mae([0.9, 0.8], [0.91, 0.78]) == pytest.approx(0.015)


def test_mae_rejects_empty_and_mismatched():
    with pytest.raises(QcapValidationError):
        mae([], [])
    with pytest.raises(QcapValidationError):
        mae([0.9, 0.8], [0.9])


def test_pearson_examples():
    assert pearson([0.9, 0.8, 0.7], [0.95, 0.85, 0.75]) == pytest.approx(1.0)
    assert pearson([0.9, 0.8, 0.7], [0.7, 0.8, 0.9]) == pytest.approx(-1.0)
    assert -1.0 <= pearson([0.9, 0.8, 0.7, 0.95], [0.91, 0.7, 0.8, 0.9]) <= 1.0


def test_pearson_constant_series():
    with pytest.raises(ConstantSeries):
        pearson([0.9, 0.9, 0.9], [0.8, 0.85, 0.9])
    with pytest.raises(ConstantSeries):
        pearson([0.8, 0.85, 0.9], [1.0, 1.0, 1.0])


def test_metrics_ignore_record_order(rng):
    targets = rng.uniform(0.8, 1.0, 50)
    predictions = targets + rng.normal(0, 0.01, 50)
    order = rng.permutation(50)
    assert mae(targets[order], predictions[order]) == pytest.approx(mae(targets, predictions), abs=1e-15)
    assert pearson(targets[order], predictions[order]) == pytest.approx(pearson(targets, predictions))


def test_bayes_factor_of_identical_predictors_is_zero():
    shots = [(1000, 950), (1000, 900)]
    assert bayes_factor_pst([0.95, 0.9], [0.95, 0.9], shots) == 0.0


def test_bayes_factor_is_antisymmetric():
    shots = [(1000, 950), (1000, 900), (500, 480)]
    a, b = [0.94, 0.91, 0.95], [0.96, 0.88, 0.97]
    assert bayes_factor_pst(a, b, shots) == pytest.approx(-bayes_factor_pst(b, a, shots))


def test_bayes_factor_prefers_empirical_frequencies(rng):
    shots = [(1000, int(k)) for k in rng.integers(850, 1000, 30)]
    empirical = [k / n for n, k in shots]
    perturbed = [min(p + 0.02, 1.0) for p in empirical]
    assert bayes_factor_pst(empirical, perturbed, shots) > 0.0


def test_bayes_factor_is_decisive_for_generating_probabilities():
    rng = np.random.default_rng(2048)
    probabilities = rng.uniform(0.85, 0.97, 120)
    shots = [sample_shots(p, 2048, rng) for p in probabilities]
    perturbed = probabilities + 0.02
    assert bayes_factor_pst(probabilities, perturbed, shots) >= 2.0


def test_bayes_factor_single_record_value():
    expected = (950 * math.log10(0.95 / 0.9) + 50 * math.log10(0.05 / 0.1))
    assert bayes_factor_pst([0.95], [0.9], [(1000, 950)]) == pytest.approx(expected)


def test_bayes_factor_clips_certain_predictions():
    value = bayes_factor_pst([1.0], [0.9], [(1000, 900)], clip=1e-6)
    assert math.isfinite(value)
    assert value < 0.0


def test_bayes_factor_needs_shots():
    with pytest.raises(QcapValidationError):
        bayes_factor_pst([0.9], [0.8], [None])
    with pytest.raises(QcapValidationError):
        bayes_factor_pst([0.9, 0.8], [0.8, 0.8], [(100, 90)])


def test_prediction_csv_round_trip(tmp_path, rng):
    targets = rng.uniform(0.8, 1.0, 20)
    predictions = targets + rng.normal(0, 0.01, 20)
    table = prediction_table([f"c-{i}" for i in range(20)], targets, predictions)
    write_predictions(table, tmp_path / 'p.csv')
    loaded = read_predictions(tmp_path / 'p.csv')
    assert loaded['id'].tolist() == table['id'].tolist()
    assert np.array_equal(loaded['prediction'].to_numpy(), predictions)
    assert mae(loaded['target'], loaded['prediction']) == mae(targets, predictions)
    assert pearson(loaded['target'], loaded['prediction']) == pearson(targets, predictions)


def test_read_predictions_requires_columns(tmp_path):
    pd.DataFrame({'id': ['a'], 'value': [0.9]}).to_csv(tmp_path / 'p.csv', index=False)
    with pytest.raises(QcapValidationError):
        read_predictions(tmp_path / 'p.csv')
    with pytest.raises(QcapValidationError):
        read_predictions(tmp_path / 'missing.csv')


def test_build_report():
    table = prediction_table(['a', 'b', 'c'], [0.9, 0.8, 0.7], [0.91, 0.79, 0.72])
    report = build_report('data', 'model', table, 1.5)
    assert isinstance(report, EvalReport)
    assert report.n_records == 3
    assert report.mae == pytest.approx(mae([0.9, 0.8, 0.7], [0.91, 0.79, 0.72]))
    assert report.pearson_r == pytest.approx(pearson([0.9, 0.8, 0.7], [0.91, 0.79, 0.72]))
    assert report.log10_bayes_factor is None
    assert [r.id for r in report.records] == ['a', 'b', 'c']


def test_build_report_omits_undefined_pearson():
    table = prediction_table(['a', 'b'], [0.9, 0.9], [0.91, 0.8])
    assert build_report('data', 'model', table, 0.0).pearson_r is None


def test_build_report_compares_pst_predictors():
    table = prediction_table(['a', 'b'], [0.95, 0.9], [0.95, 0.9])
    other = prediction_table(['b', 'a'], [0.9, 0.95], [0.85, 0.97])
    shots = [(1000, 950), (1000, 900)]
    report = build_report('data', 'model', table, 0.0, compare=other, compare_id='other', shots=shots, metric='pst')
    assert report.log10_bayes_factor == pytest.approx(bayes_factor_pst([0.95, 0.9], [0.97, 0.85], shots))
    assert report.compare_id == 'other'


def test_build_report_refuses_fidelity_comparison():
    table = prediction_table(['a', 'b'], [0.95, 0.9], [0.95, 0.9])
    with pytest.raises(QcapValidationError):
        build_report('data', 'model', table, 0.0, compare=table, metric='fidelity')


def test_build_report_requires_matching_ids():
    table = prediction_table(['a', 'b'], [0.95, 0.9], [0.95, 0.9])
    other = prediction_table(['a', 'z'], [0.95, 0.9], [0.95, 0.9])
    with pytest.raises(QcapValidationError):
        build_report('data', 'model', table, 0.0, compare=other, shots=[(10, 9), (10, 9)], metric='pst')


def test_scatter_plot_writes_file(tmp_path):
    table = prediction_table(['a', 'b', 'c'], [0.9, 0.8, 0.7], [0.91, 0.79, 0.72])
    scatter_plot(table, tmp_path / 'scatter.svg', title='test')
    assert (tmp_path / 'scatter.svg').stat().st_size > 0
