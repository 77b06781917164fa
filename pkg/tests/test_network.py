import dataclasses

import numpy as np
import pytest

from qcap.circuits import Circuit, Layer
from qcap.config import settings
from qcap.dataset import DatasetRecord
from qcap.encoding import ChannelSpec, encode_circuit
from qcap.error_generators import accumulate, build_tracked_set, compute_propagation, fidelity_from, pst_from
from qcap.exceptions import DimensionMismatch, QcapValidationError, SchemaError
from qcap.network import (
    Mlp,
    QpaModel,
    build_model,
    forward,
    from_checkpoint,
    load_checkpoint,
    loss_and_gradients,
    predict_batch,
    save_checkpoint,
    to_checkpoint,
)
from tests.builders import fidelity_split, pst_split

SMALL_UNITS = (4, 3, 1)


def _model(g, metric='fidelity', seed=0, **kwargs):
    ts = build_tracked_set(g, 2)
    kwargs.setdefault('dense_units', SMALL_UNITS)
    return build_model(ts, g, ChannelSpec.for_graph(g), metric, np.random.default_rng(seed), **kwargs)


def _zero(model: QpaModel) -> QpaModel:
    model.set_flat(np.zeros(model.parameter_count()))
    return model


def _record(c: Circuit, g, ts, metric='fidelity', target=1.0) -> DatasetRecord:
    tensor = encode_circuit(c, g, ChannelSpec.for_graph(g), c.depth, metric)
    return DatasetRecord(c.id, tensor, compute_propagation(c, ts), target, metric, None, c)


def _constant_net(model: QpaModel, label: str, value: float):
    """Make the network of ``label`` emit ``value`` regardless of its input"""
    j = model.ts.labels().index(label)
    model.nets[j].biases[-1][...] = value
    return j


def test_build_model_counts(ring4):
    model = _model(ring4, dense_units=(30, 20, 10, 5, 5, 1))
    assert len(model.nets) == 132
    assert model.measurement_nets == []
    j = model.ts.labels().index('H:X@[0]')
    assert model.filters.windows[j] == (0, 1, 3)
    assert model.nets[j].input_width == 33


def test_pst_model_has_measurement_nets_for_xy_errors(ring4):
    model = _model(ring4, 'pst')
    assert len(model.measurement_nets) == sum(gen.pauli.contains_xy() for gen in model.ts)
    assert all(model.ts[j].pauli.contains_xy() for j in model.measured)
    assert all(net.input_width == 2 * len(w) for net, w in zip(model.measurement_nets, model.filters.measurement_windows))


def test_windows_contain_support(ring4):
    model = _model(ring4)
    for gen, window in zip(model.ts, model.filters.windows):
        assert set(gen.support) <= set(window)
        assert list(window) == sorted(window)


def test_build_model_is_seeded(ring4):
    assert np.array_equal(_model(ring4, seed=3).get_flat(), _model(ring4, seed=3).get_flat())
    assert not np.array_equal(_model(ring4, seed=3).get_flat(), _model(ring4, seed=4).get_flat())


def test_model_invariants(ring4):
    model = _model(ring4)
    with pytest.raises(QcapValidationError):
        QpaModel(model.ts, model.filters, model.nets, (0,), [model.nets[0]], 'fidelity', model.n_ch, SMALL_UNITS)
    with pytest.raises(DimensionMismatch):
        QpaModel(model.ts, model.filters, model.nets[:-1], (), [], 'fidelity', model.n_ch, SMALL_UNITS)
    with pytest.raises(QcapValidationError):
        Mlp.initialize(5, (3, 2), np.random.default_rng(0))


def test_zero_weights_predict_one(ring4):
    model = _zero(_model(ring4))
    split = fidelity_split(ring4, 1)
    prediction, E, mhat = forward(model, split.train[0])
    assert prediction == 1.0
    assert not E.any()
    assert np.all(predict_batch(model, split.test) == 1.0)


def test_constant_hamiltonian_rate_on_identity_circuit(ring4):
    model = _zero(_model(ring4, zero_idle_windows=False))
    theta = 0.01
    _constant_net(model, 'H:X@[0]', theta)
    c = Circuit('idle', 4, 'ring:4', (0,), (Layer(()),) * 2)
    prediction, E, _ = forward(model, _record(c, ring4, model.ts))
    assert prediction == pytest.approx(1 - (2 * theta) ** 2)
    assert predict_batch(model, [_record(c, ring4, model.ts)])[0] == pytest.approx(prediction, abs=1e-15)


def test_coherent_cancellation_is_representable(ring4):
    model = _zero(_model(ring4, zero_idle_windows=False))
    _constant_net(model, 'H:Z@[0]', 0.02)
    c = Circuit('c', 4, 'ring:4', (0,), (Layer(()), Layer.of([('Xpi', (0,))])))
    prediction, _, _ = forward(model, _record(c, ring4, model.ts))
    assert prediction == 1.0


def test_negative_stochastic_rates_are_reported(ring4, caplog):
    model = _zero(_model(ring4, zero_idle_windows=False))
    _constant_net(model, 'S:X@[0]', -0.01)
    c = Circuit('idle', 4, 'ring:4', (0,), (Layer(()),))
    with caplog.at_level('WARNING', logger='qcap.network'):
        prediction, _, _ = forward(model, _record(c, ring4, model.ts))
    assert prediction == pytest.approx(1.01)
    assert 'negative stochastic' in caplog.text


def test_idle_windows_emit_nothing(ring4):
    model = _zero(_model(ring4))
    _constant_net(model, 'H:X@[0]', 0.01)
    c = Circuit('idle', 4, 'ring:4', (0,), (Layer(()),) * 2)
    prediction, E, _ = forward(model, _record(c, ring4, model.ts))
    assert prediction == 1.0
    assert not E.any()


def test_forward_matches_manual_evaluation(ring4):
    model = _model(ring4, output_gain=1.0)
    record = fidelity_split(ring4, 2).train[0]
    prediction, E, _ = forward(model, record)
    I = record.tensor.I[:, :record.tensor.true_depth, :].astype(float)
    manual = np.zeros_like(E)
    for j, (net, window) in enumerate(zip(model.nets, model.filters.windows)):
        for i in range(record.tensor.true_depth):
            x = I[list(window), i, :].reshape(1, -1)
            if x.any():
                manual[i, j] = net.forward(x)[0][0]
    assert np.allclose(E, manual, atol=1e-14)
    assert prediction == pytest.approx(fidelity_from(accumulate(manual, record.tables)), abs=1e-12)


def test_pst_forward_adds_measurement_rates(ring4):
    model = _model(ring4, 'pst', output_gain=1.0)
    record = pst_split(ring4, 3).train[0]
    prediction, E, mhat = forward(model, record)
    m = {model.ts[j]: rate for j, rate in zip(model.measured, mhat)}
    assert len(mhat) == len(model.measured)
    assert prediction == pytest.approx(pst_from(accumulate(E, record.tables, m)), abs=1e-12)
    assert predict_batch(model, [record])[0] == pytest.approx(prediction, abs=1e-12)


def test_predict_batch_is_elementwise(ring4):
    model = _model(ring4, output_gain=1.0)
    records = fidelity_split(ring4, 4).train
    predictions = predict_batch(model, records, batch_size=5)
    singles = np.array([forward(model, r)[0] for r in records])
    assert np.allclose(predictions, singles, atol=1e-12)
    order = np.random.default_rng(0).permutation(len(records))
    assert np.allclose(predict_batch(model, [records[i] for i in order]), predictions[order], atol=1e-12)


def test_weight_sharing_across_time(ring4):
    model = _model(ring4, output_gain=1.0)
    flip = Layer.of([('Xpi', (0,))])
    c = Circuit('c', 4, 'ring:4', (0,), (flip, Layer(()), flip, Layer(())))
    _, E, _ = forward(model, _record(c, ring4, model.ts))
    assert np.array_equal(E[0], E[2])
    assert np.array_equal(E[1], E[3])


def test_locality(ring4):
    model = _model(ring4, output_gain=1.0)
    j = model.ts.labels().index('H:X@[0]')
    assert 2 not in model.filters.windows[j]
    a = Circuit('a', 4, 'ring:4', (0, 1, 2), (Layer.of([('Xpi', (0,)), ('Ypi', (2,))]),))
    b = Circuit('b', 4, 'ring:4', (0, 1, 2), (Layer.of([('Xpi', (0,)), ('Zpi', (2,))]),))
    _, Ea, _ = forward(model, _record(a, ring4, model.ts))
    _, Eb, _ = forward(model, _record(b, ring4, model.ts))
    assert np.array_equal(Ea[:, j], Eb[:, j])


def test_record_dimension_mismatch(ring4, line3):
    model = _model(ring4)
    record = fidelity_split(line3, 1).train[0]
    with pytest.raises(DimensionMismatch):
        forward(model, record)


def test_perfect_predictions_have_zero_loss(ring4):
    model = _model(ring4, output_gain=1.0)
    records = fidelity_split(ring4, 5).train[:6]
    exact = [dataclasses.replace(r, target=float(p)) for r, p in zip(records, predict_batch(model, records))]
    loss, grads = loss_and_gradients(model, exact)
    assert loss == pytest.approx(0.0, abs=1e-12)
    assert all(np.allclose(g, 0.0, atol=1e-8) for g in grads)


def test_scale_multiplies_loss_and_gradients_by_four(ring4):
    records = fidelity_split(ring4, 6).train[:6]
    model = _model(ring4, output_gain=1.0, scale=1.0)
    loss, grads = loss_and_gradients(model, records)
    model.scale = 2.0
    loss2, grads2 = loss_and_gradients(model, records)
    assert loss2 == pytest.approx(4 * loss)
    for g, g2 in zip(grads, grads2):
        assert np.allclose(g2, 4 * g)


def test_empty_batch_rejected(ring4):
    with pytest.raises(QcapValidationError):
        loss_and_gradients(_model(ring4), [])


@pytest.mark.parametrize('metric', ['fidelity', 'pst'])
def test_gradients_match_finite_differences(line3, metric):
    split = pst_split(line3, 7, count=12) if metric == 'pst' else fidelity_split(line3, 7, count=12)
    records = [r for r in split.train + split.validation + split.test if r.circuit.width == 2][:4]
    assert records
    ts = build_tracked_set(line3, 2)
    model = build_model(ts, line3, ChannelSpec.for_graph(line3), metric, np.random.default_rng(11),
                        dense_units=SMALL_UNITS, scale=1.0, output_gain=0.3)
    bias_rng = np.random.default_rng(13)
    for net in model.nets + model.measurement_nets:
        for b in net.biases:
            # keep hidden pre-activations off the ReLU kink
            b[:] = bias_rng.uniform(0.05, 0.3, b.shape)
    _, grads = loss_and_gradients(model, records)
    analytic = np.concatenate([g.ravel() for g in grads])
    flat = model.get_flat()
    step = 1e-6
    picks = np.random.default_rng(12).choice(flat.size, size=min(300, flat.size), replace=False)
    if metric == 'pst':
        # always check the measurement networks too
        measurement_start = sum(p.size for net in model.nets for p in net.parameters())
        picks = np.union1d(picks, np.arange(measurement_start, flat.size)[:100])
    numeric = []
    for t in picks:
        shifted = flat.copy()
        shifted[t] += step
        model.set_flat(shifted)
        plus, _ = loss_and_gradients(model, records)
        shifted[t] -= 2 * step
        model.set_flat(shifted)
        minus, _ = loss_and_gradients(model, records)
        numeric.append((plus - minus) / (2 * step))
    model.set_flat(flat)
    np.testing.assert_allclose(analytic[picks], numeric, rtol=1e-4, atol=1e-7)


def test_checkpoint_round_trip(tmp_path, ring4):
    model = _model(ring4, 'pst', output_gain=1.0)
    model.train_history = [{'epoch': 1, 'train_loss': 2.0, 'val_loss': 3.0}]
    save_checkpoint(model, tmp_path / 'ckpt.json')
    loaded = load_checkpoint(tmp_path / 'ckpt.json')
    assert np.array_equal(loaded.get_flat(), model.get_flat())
    assert loaded.measured == model.measured
    assert loaded.train_history == model.train_history
    records = pst_split(ring4, 9).test
    assert np.array_equal(predict_batch(loaded, records), predict_batch(model, records))


def test_checkpoint_tracked_set_mismatch(ring4):
    ckpt = to_checkpoint(_model(ring4))
    ckpt.tracked_set = list(reversed(ckpt.tracked_set))
    with pytest.raises(SchemaError):
        from_checkpoint(ckpt)


def test_checkpoint_measurement_window_mismatch(ring4):
    ckpt = to_checkpoint(_model(ring4, 'pst'))
    ckpt.measurement_nets[0].window = ckpt.measurement_nets[0].window[:-1]
    with pytest.raises(SchemaError):
        from_checkpoint(ckpt)
    ckpt = to_checkpoint(_model(ring4, 'pst'))
    ckpt.measurement_nets[0].error = 'H:X@[7]'
    with pytest.raises(SchemaError):
        from_checkpoint(ckpt)


def test_window_groups_cover_every_net(ring4, monkeypatch):
    monkeypatch.setattr(settings, 'NET_GROUP_SIZE', 5)
    model = _model(ring4, 'pst')
    for measurement, windows in ((False, model.filters.windows), (True, model.filters.measurement_windows)):
        groups = model.window_groups(measurement)
        members = [j for _, group in groups for j in group]
        assert sorted(members) == list(range(len(windows)))
        assert all(len(group) <= 5 and all(windows[j] == window for j in group) for window, group in groups)


def test_grouping_does_not_change_results(ring4, monkeypatch):
    records = pst_split(ring4, 4).train[:6]
    model = _model(ring4, 'pst', seed=5, output_gain=0.3)
    loss, grads = loss_and_gradients(model, records)
    predictions = predict_batch(model, records)
    monkeypatch.setattr(settings, 'NET_GROUP_SIZE', 1)
    single_loss, single_grads = loss_and_gradients(model, records)
    assert single_loss == pytest.approx(loss, rel=1e-12)
    for g, single in zip(grads, single_grads):
        np.testing.assert_allclose(single, g, rtol=1e-10, atol=1e-15)
    np.testing.assert_allclose(predict_batch(model, records), predictions, rtol=1e-12)
