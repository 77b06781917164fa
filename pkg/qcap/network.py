"""
Physics-aware capability model.

One small dense network per tracked error reads the circuit tensor restricted
to a window of qubits around that error, one layer at a time, and emits the
error's rate for that layer. The rates never meet a learned combiner: they go
through the fixed propagation head (pull to circuit end, sum, square the H
terms), so gradients are computed analytically through the head and then by
ordinary backpropagation through each network.
"""

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Sequence, Tuple, Union

import numpy as np

from qcap.base_logging import Logger
from qcap.circuits import ConnectivityGraph, GraphFactory
from qcap.config import settings
from qcap.dataset import DatasetRecord
from qcap.encoding import ChannelSpec
from qcap.error_generators import TrackedErrorSet, accumulate, build_tracked_set, fidelity_from, pst_from
from qcap.exceptions import DimensionMismatch, QcapValidationError, SchemaError
from qcap.models import Checkpoint, NetRow

logger = Logger("qcap.network")

MEASUREMENT_NET_POLICY = 'xy-containing'


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(0.0, x)


@dataclass
class Mlp:
    """Dense network with rectified hidden layers and a linear scalar output"""
    weights: List[np.ndarray]
    biases: List[np.ndarray]

    @classmethod
    def initialize(cls, input_width: int, units: Sequence[int], rng: np.random.Generator,
                   output_gain: float = 1.0) -> 'Mlp':
        """Symmetric uniform weights in +-1/sqrt(fan_in), zero biases"""
        if units[-1] != 1:
            raise QcapValidationError(f"Networks have a scalar output, got widths {list(units)}")
        weights, biases = [], []
        fan_in = input_width
        for t, width in enumerate(units):
            limit = 1.0 / np.sqrt(fan_in)
            if t == len(units) - 1:
                limit *= output_gain
            weights.append(rng.uniform(-limit, limit, size=(fan_in, width)))
            biases.append(np.zeros(width))
            fan_in = width
        return cls(weights, biases)

    @property
    def input_width(self) -> int:
        return self.weights[0].shape[0]

    def parameters(self) -> List[np.ndarray]:
        out = []
        for W, b in zip(self.weights, self.biases):
            out.extend((W, b))
        return out

    def parameter_count(self) -> int:
        return sum(p.size for p in self.parameters())

    def forward(self, X: np.ndarray) -> Tuple[np.ndarray, List[np.ndarray]]:
        activations = [X]
        a = X
        last = len(self.weights) - 1
        for t, (W, b) in enumerate(zip(self.weights, self.biases)):
            z = a @ W + b
            a = relu(z) if t < last else z
            activations.append(a)
        return a[:, 0], activations


@dataclass(frozen=True)
class FilterSpec:
    """Qubit windows of the gate networks (radius l) and the measurement networks (radius l_meas)"""
    l: int
    l_meas: int
    windows: Tuple[Tuple[int, ...], ...]
    measurement_windows: Tuple[Tuple[int, ...], ...]

    @classmethod
    def build(cls, ts: TrackedErrorSet, l: int, l_meas: int, measured: Sequence[int]) -> 'FilterSpec':
        if l < 0 or l_meas < 0:
            raise QcapValidationError(f"Filter hop radii must be nonnegative, got {l}, {l_meas}")
        g = ts.graph
        windows = tuple(g.qubits_within(gen.support, l) for gen in ts)
        measurement_windows = tuple(g.qubits_within(ts[j].support, l_meas) for j in measured)
        return cls(l, l_meas, windows, measurement_windows)


@dataclass
class QpaModel:
    ts: TrackedErrorSet
    filters: FilterSpec
    nets: List[Mlp]
    measured: Tuple[int, ...]
    measurement_nets: List[Mlp]
    metric: str
    n_ch: int
    dense_units: Tuple[int, ...]
    scale: float = settings.TARGET_SCALE
    zero_idle_windows: bool = True
    train_history: List[dict] = field(default_factory=list)

    def __post_init__(self):
        if len(self.nets) != self.ts.k:
            raise DimensionMismatch(f"{len(self.nets)} gate networks for {self.ts.k} tracked errors")
        if (self.metric == 'pst') != bool(self.measurement_nets):
            raise QcapValidationError("Measurement networks are present exactly for PST models")

    @property
    def k(self) -> int:
        return self.ts.k

    def parameters(self) -> List[np.ndarray]:
        out = []
        for net in self.nets + self.measurement_nets:
            out.extend(net.parameters())
        return out

    def parameter_count(self) -> int:
        return sum(p.size for p in self.parameters())

    def window_groups(self, measurement: bool = False) -> List[Tuple[Tuple[int, ...], List[int]]]:
        """
        (window, net indices) for nets reading the same window, in first-use
        order, at most ``settings.NET_GROUP_SIZE`` nets per group. Groups of
        one window are adjacent.
        """
        windows = self.filters.measurement_windows if measurement else self.filters.windows
        shared = {}
        for j, window in enumerate(windows):
            shared.setdefault(window, []).append(j)
        size = settings.NET_GROUP_SIZE
        return [(window, members[i:i + size]) for window, members in shared.items()
                for i in range(0, len(members), size)]

    def get_flat(self) -> np.ndarray:
        return np.concatenate([p.ravel() for p in self.parameters()])

    def set_flat(self, flat: np.ndarray):
        offset = 0
        for p in self.parameters():
            p[...] = flat[offset:offset + p.size].reshape(p.shape)
            offset += p.size
        if offset != flat.size:
            raise DimensionMismatch(f"Flat parameter vector has {flat.size} entries, model has {offset}")


def build_model(ts: TrackedErrorSet, g: ConnectivityGraph, spec: ChannelSpec, metric: str,
                rng: np.random.Generator, filter_hops: int = None, measurement_filter_hops: int = None,
                dense_units: Sequence[int] = None, scale: float = None, zero_idle_windows: bool = True,
                output_gain: float = None) -> QpaModel:
    if metric not in ('fidelity', 'pst'):
        raise QcapValidationError(f"Unknown metric {metric}")
    if ts.graph != g:
        raise DimensionMismatch(f"Tracked set is for {ts.graph.name}, model requested for {g.name}")
    filter_hops = settings.FILTER_HOPS if filter_hops is None else filter_hops
    measurement_filter_hops = settings.MEASUREMENT_FILTER_HOPS if measurement_filter_hops is None else measurement_filter_hops
    dense_units = tuple(dense_units or settings.DENSE_UNITS)
    output_gain = settings.OUTPUT_GAIN if output_gain is None else output_gain

    measured = tuple(j for j, gen in enumerate(ts) if gen.pauli.contains_xy()) if metric == 'pst' else ()
    filters = FilterSpec.build(ts, filter_hops, measurement_filter_hops, measured)
    nets = [Mlp.initialize(len(window) * spec.n_ch, dense_units, rng, output_gain) for window in filters.windows]
    measurement_nets = [Mlp.initialize(2 * len(window), dense_units, rng, output_gain)
                        for window in filters.measurement_windows]
    model = QpaModel(ts, filters, nets, measured, measurement_nets, metric, spec.n_ch, dense_units,
                     settings.TARGET_SCALE if scale is None else scale, zero_idle_windows)
    logger.info(f"Built {metric} model on {g.name}: {len(nets)} gate networks, "
                f"{len(measurement_nets)} measurement networks, {model.parameter_count()} parameters")
    return model


# Batched evaluation

@dataclass
class PreparedRecord:
    """A dataset record reshaped for the batched head"""
    id: str
    I: np.ndarray
    M: np.ndarray
    index: np.ndarray
    sign: np.ndarray
    key_is_h: np.ndarray
    key_mask: np.ndarray
    meas_index: np.ndarray
    target: float

    @property
    def depth(self) -> int:
        return self.index.shape[0]


def prepare_record(model: QpaModel, record: DatasetRecord) -> PreparedRecord:
    tensor, tables = record.tensor, record.tables
    if tensor.n != model.ts.graph.n or tensor.n_ch != model.n_ch:
        raise DimensionMismatch(f"Record {record.id} tensor is {tensor.n}x{tensor.n_ch}, "
                                f"model expects {model.ts.graph.n}x{model.n_ch}")
    if tables.k != model.k or tables.depth != tensor.true_depth:
        raise DimensionMismatch(f"Record {record.id} tables are {tables.index.shape}, "
                                f"expected ({tensor.true_depth}, {model.k})")
    keys = list(tables.keys)
    position = {key: idx for idx, key in enumerate(keys)}
    meas_index = []
    for j in model.measured:
        gen = model.ts[j]
        if gen not in position:
            position[gen] = len(keys)
            keys.append(gen)
        meas_index.append(position[gen])
    key_is_h = np.array([key.kind == 'H' for key in keys], dtype=bool)
    if model.metric == 'pst':
        key_mask = np.array([key.pauli.contains_xy() for key in keys], dtype=bool)
    else:
        key_mask = np.ones(len(keys), dtype=bool)
    return PreparedRecord(record.id, tensor.I[:, :tensor.true_depth, :], tensor.M.astype(float),
                          tables.index, tables.sign.astype(float), key_is_h, key_mask,
                          np.array(meas_index, dtype=np.int64), record.target)


def _prepared(model: QpaModel, records) -> List[PreparedRecord]:
    return [r if isinstance(r, PreparedRecord) else prepare_record(model, r) for r in records]


@dataclass
class _Batch:
    I: np.ndarray
    M: np.ndarray
    global_index: np.ndarray
    sign: np.ndarray
    key_record: np.ndarray
    key_is_h: np.ndarray
    key_mask: np.ndarray
    meas_global: np.ndarray
    targets: np.ndarray
    depths: List[int]

    @property
    def size(self) -> int:
        return len(self.targets)

    @property
    def n_keys(self) -> int:
        return len(self.key_record)


def _assemble(records: List[PreparedRecord]) -> _Batch:
    offsets = np.cumsum([0] + [len(r.key_is_h) for r in records])
    return _Batch(
        I=np.concatenate([r.I for r in records], axis=1).astype(float),
        M=np.stack([r.M for r in records]),
        global_index=np.concatenate([r.index + offsets[b] for b, r in enumerate(records)]),
        sign=np.concatenate([r.sign for r in records]),
        key_record=np.concatenate([np.full(len(r.key_is_h), b) for b, r in enumerate(records)]),
        key_is_h=np.concatenate([r.key_is_h for r in records]),
        key_mask=np.concatenate([r.key_mask for r in records]),
        meas_global=np.stack([r.meas_index + offsets[b] for b, r in enumerate(records)]),
        targets=np.array([r.target for r in records]),
        depths=[r.depth for r in records],
    )


@dataclass
class _GroupCache:
    members: List[int]
    rows: np.ndarray
    weights: List[np.ndarray]
    activations: List[np.ndarray]


def _run_groups(model: QpaModel, nets: List[Mlp], measurement: bool, inputs, rows_total: int):
    """
    Evaluate the nets window by window: nets sharing a window share its input
    rows, so their stacked weights go through one batched matmul per layer.
    All-zero rows are skipped when ``model.zero_idle_windows``.
    """
    outputs = np.zeros((rows_total, len(nets)))
    caches = []
    current = None
    for window, members in model.window_groups(measurement):
        if window != current:
            current, X = window, inputs(window)
            rows = np.flatnonzero(X.any(axis=1)) if model.zero_idle_windows else np.arange(rows_total)
            X_rows = X[rows]
        weights = [np.stack([nets[j].weights[t] for j in members]) for t in range(len(nets[members[0]].weights))]
        biases = [np.stack([nets[j].biases[t] for j in members]) for t in range(len(weights))]
        activations = [X_rows]
        a = activations[0]
        last = len(weights) - 1
        for t, (W, b) in enumerate(zip(weights, biases)):
            z = np.matmul(a, W) + b[:, None, :]
            a = relu(z) if t < last else z
            activations.append(a)
        if rows.size:
            outputs[np.ix_(rows, members)] = a[:, :, 0].T
        caches.append(_GroupCache(members, rows, weights, activations))
    return outputs, caches


def _group_grads(cache: _GroupCache, d_out: np.ndarray, grads: List[List[np.ndarray]]):
    """Backpropagate ``d_out`` (rows x nets) through one window group into ``grads``"""
    weights, acts = cache.weights, cache.activations
    delta = d_out[np.ix_(cache.rows, cache.members)].T[:, :, None]
    for t in range(len(weights) - 1, -1, -1):
        a = acts[t]
        grad_W = np.matmul(a.T if t == 0 else a.transpose(0, 2, 1), delta)
        grad_b = delta.sum(axis=1)
        for g, j in enumerate(cache.members):
            grads[j][2 * t] = grad_W[g]
            grads[j][2 * t + 1] = grad_b[g]
        if t > 0:
            delta = np.matmul(delta, weights[t].transpose(0, 2, 1)) * (acts[t] > 0)


def _forward(model: QpaModel, batch: _Batch):
    rows_total = batch.I.shape[1]
    E, gate_caches = _run_groups(
        model, model.nets, False,
        lambda window: batch.I[list(window)].transpose(1, 0, 2).reshape(rows_total, -1), rows_total)
    mhat, meas_caches = _run_groups(
        model, model.measurement_nets, True,
        lambda window: batch.M[:, :, list(window)].reshape(batch.size, -1), batch.size)

    v = np.bincount(batch.global_index.ravel(), weights=(batch.sign * E).ravel(), minlength=batch.n_keys)
    if model.measurement_nets:
        v += np.bincount(batch.meas_global.ravel(), weights=mhat.ravel(), minlength=batch.n_keys)
    terms = np.where(batch.key_is_h, v * v, v) * batch.key_mask
    prediction = 1.0 - np.bincount(batch.key_record, weights=terms, minlength=batch.size)
    return prediction, E, mhat, v, gate_caches, meas_caches


def forward(model: QpaModel, record: Union[DatasetRecord, PreparedRecord]) -> Tuple[float, np.ndarray, np.ndarray]:
    """(prediction, per-layer rate matrix, measurement rates) for one record"""
    prepared = _prepared(model, [record])[0]
    batch_prediction, E, mhat, _, _, _ = _forward(model, _assemble([prepared]))
    if isinstance(record, DatasetRecord):
        m = {model.ts[j]: float(rate) for j, rate in zip(model.measured, mhat[0])}
        v = accumulate(E, record.tables, m)
        if v.has_negative_stochastic():
            logger.warning(f"Record {record.id}: negative stochastic rates at the circuit end")
        prediction = pst_from(v) if model.metric == 'pst' else fidelity_from(v)
    else:
        prediction = float(batch_prediction[0])
    return prediction, E, mhat[0]


def predict_batch(model: QpaModel, records: Sequence, batch_size: int = None) -> np.ndarray:
    batch_size = batch_size or settings.EVAL_BATCH_SIZE
    prepared = _prepared(model, records)
    predictions = [_forward(model, _assemble(prepared[i:i + batch_size]))[0]
                   for i in range(0, len(prepared), batch_size)]
    return np.concatenate(predictions) if predictions else np.zeros(0)


def loss_and_gradients(model: QpaModel, records: Sequence) -> Tuple[float, List[np.ndarray]]:
    """
    Scaled mean squared error and its gradient for every array of
    ``model.parameters()``, in the same order.
    """
    prepared = _prepared(model, records)
    if not prepared:
        raise QcapValidationError("Cannot compute a loss on an empty batch")
    batch = _assemble(prepared)
    prediction, E, mhat, v, gate_caches, meas_caches = _forward(model, batch)

    s = model.scale
    residual = s * prediction - s * batch.targets
    loss = float(np.mean(residual ** 2))
    d_prediction = 2.0 * s * residual / batch.size
    d_v = -np.where(batch.key_is_h, 2.0 * v, 1.0) * batch.key_mask * d_prediction[batch.key_record]
    d_E = batch.sign * d_v[batch.global_index]

    gate_grads = [[np.zeros_like(p) for p in net.parameters()] for net in model.nets]
    for cache in gate_caches:
        _group_grads(cache, d_E, gate_grads)
    meas_grads = [[np.zeros_like(p) for p in net.parameters()] for net in model.measurement_nets]
    if model.measurement_nets:
        d_mhat = d_v[batch.meas_global]
        for cache in meas_caches:
            _group_grads(cache, d_mhat, meas_grads)
    return loss, [g for per_net in gate_grads + meas_grads for g in per_net]


# Checkpoints

def _net_row(label: str, window: Sequence[int], net: Mlp) -> NetRow:
    return NetRow(error=label, window=list(window),
                  weights=[W.tolist() for W in net.weights], biases=[b.tolist() for b in net.biases])


def _net_from(row: NetRow) -> Mlp:
    return Mlp([np.array(W, dtype=float).reshape(len(W), -1) for W in row.weights],
               [np.array(b, dtype=float) for b in row.biases])


def to_checkpoint(model: QpaModel) -> Checkpoint:
    ts = model.ts
    return Checkpoint(
        schema=settings.CHECKPOINT_SCHEMA, metric=model.metric, graph=ts.graph.name, hops=ts.hops,
        max_weight=ts.max_weight, filter_hops=model.filters.l, measurement_filter_hops=model.filters.l_meas,
        n_ch=model.n_ch, dense_units=list(model.dense_units), scale=model.scale,
        zero_idle_windows=model.zero_idle_windows, tracked_set=ts.labels(),
        nets=[_net_row(gen.label, window, net) for gen, window, net in zip(ts, model.filters.windows, model.nets)],
        measurement_nets=[_net_row(ts[j].label, window, net) for j, window, net
                          in zip(model.measured, model.filters.measurement_windows, model.measurement_nets)],
        measurement_net_policy=MEASUREMENT_NET_POLICY, parameter_count=model.parameter_count(),
        train_history=model.train_history,
    )


def from_checkpoint(ckpt: Checkpoint) -> QpaModel:
    if ckpt.schema_version != settings.CHECKPOINT_SCHEMA:
        raise SchemaError(f"checkpoint schema {ckpt.schema_version} is not supported")
    g = GraphFactory.create(ckpt.graph)
    ts = build_tracked_set(g, ckpt.hops, ckpt.max_weight)
    if ts.labels() != ckpt.tracked_set:
        raise SchemaError("checkpoint tracked set does not match the rebuilt tracked set")
    column = {label: j for j, label in enumerate(ts.labels())}
    unknown = [row.error for row in ckpt.measurement_nets if row.error not in column]
    if unknown:
        raise SchemaError(f"measurement networks for untracked errors {unknown}")
    measured = tuple(column[row.error] for row in ckpt.measurement_nets)
    filters = FilterSpec.build(ts, ckpt.filter_hops, ckpt.measurement_filter_hops, measured)
    nets = [_net_from(row) for row in ckpt.nets]
    for row, window, net in zip(ckpt.nets, filters.windows, nets):
        if tuple(row.window) != window or net.input_width != len(window) * ckpt.n_ch:
            raise SchemaError(f"network for {row.error} does not match its window {window}")
    measurement_nets = [_net_from(row) for row in ckpt.measurement_nets]
    for row, window, net in zip(ckpt.measurement_nets, filters.measurement_windows, measurement_nets):
        if tuple(row.window) != window or net.input_width != 2 * len(window):
            raise SchemaError(f"measurement network for {row.error} does not match its window {window}")
    return QpaModel(ts, filters, nets, measured, measurement_nets, ckpt.metric,
                    ckpt.n_ch, tuple(ckpt.dense_units), ckpt.scale, ckpt.zero_idle_windows,
                    list(ckpt.train_history))


def save_checkpoint(model: QpaModel, path: Path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'w') as f:
        json.dump(to_checkpoint(model).model_dump(by_alias=True), f)
    logger.info(f"Saved checkpoint ({model.parameter_count()} parameters) to {path}")


def load_checkpoint(path: Path) -> QpaModel:
    path = Path(path)
    if not path.exists():
        raise QcapValidationError(f"Checkpoint not found: {path}")
    with open(path, 'r') as f:
        try:
            ckpt = Checkpoint.model_validate(json.load(f))
        except Exception as e:
            raise SchemaError(f"invalid checkpoint {path}: {e}")
    model = from_checkpoint(ckpt)
    logger.info(f"Loaded {model.metric} checkpoint from {path}")
    return model
