"""
Capability pipeline service: each stage reads and writes files so stages can
be run one at a time from the command line or chained by the reproduction runs.
"""

import json
import time
from pathlib import Path
from typing import Dict, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from qcap.base_logging import Logger
from qcap.circuits import GraphFactory, make_sampler_config, sample_circuits
from qcap.config import settings
from qcap.dataset import (
    DatasetSplit,
    assemble,
    read_circuits,
    read_dataset,
    read_simulations,
    read_split,
    write_circuits,
    write_simulations,
    write_split,
)
from qcap.encoding import ChannelSpec
from qcap.error_generators import ErrorModel, ErrorModelFactory, build_tracked_set, default_hops
from qcap.exceptions import QcapValidationError
from qcap.metrics import build_report, prediction_table, read_predictions, scatter_plot, write_predictions
from qcap.models import TrainConfig
from qcap.network import QpaModel, build_model, load_checkpoint, predict_batch, save_checkpoint
from qcap.simulators import simulate_circuits
from qcap.training import train

logger = Logger("qcap.pipeline")


def _write_json(payload: dict, path: Path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'w') as f:
        json.dump(payload, f, indent=2)


class CapabilityPipeline:
    """Dataset generation, training and evaluation stages"""

    def __init__(self, max_workers: int = None):
        self.max_workers = max_workers or settings.MAX_WORKERS
        logger.info(f"Initializing CapabilityPipeline with max_workers={self.max_workers}")

    def generate_model(self, graph_spec: str, family: str, seed: int, out: Path, rate_factor: float = 1.0,
                       **kwargs) -> dict:
        g = GraphFactory.create(graph_spec)
        model = ErrorModelFactory.create(family, g, seed, **kwargs)
        if rate_factor != 1.0:
            model = model.scaled(rate_factor)
        model.save(out)
        return {'command': 'gen-model', 'graph': g.name, 'family': family, 'seed': seed, 'rate_factor': rate_factor,
                'gate_entries': len(model.gates), 'out': str(out)}

    def generate_circuits(self, graph_spec: str, count: int, kind: str, seed: int, out: Path,
                          widths: Tuple[int, int] = None, max_depth: int = None, start: int = 0) -> dict:
        g = GraphFactory.create(graph_spec)
        cfg = make_sampler_config(g, seed, widths, max_depth)
        circuits = sample_circuits(g, cfg, count, kind, start)
        write_circuits(circuits, out)
        depths = [c.depth for c in circuits]
        return {'command': 'gen-circuits', 'graph': g.name, 'kind': kind, 'seed': seed, 'count': len(circuits),
                'mean_depth': float(np.mean(depths)) if depths else 0.0, 'out': str(out)}

    def simulate(self, circuits_path: Path, model_path: Path, metric: str, method: str, out: Path,
                 seed: int, shots: int = None, hops: int = None, max_weight: int = None) -> dict:
        circuits = read_circuits(circuits_path)
        model = ErrorModel.load(model_path)
        ts = None
        if method == 'first_order':
            g = GraphFactory.create(model.graph)
            default_h, default_w = default_hops(g.name, g.n)
            ts = build_tracked_set(g, default_h if hops is None else hops, default_w if max_weight is None else max_weight)
        results = simulate_circuits(circuits, model, metric, method, ts, shots, seed, self.max_workers)
        write_simulations(results, out)
        values = [r.value for r in results]
        return {'command': 'simulate', 'metric': metric, 'method': method, 'seed': seed, 'count': len(results),
                'mean_value': float(np.mean(values)) if values else None,
                'min_value': float(np.min(values)) if values else None, 'out': str(out)}

    def encode(self, circuits_path: Path, values_path: Path, graph_spec: str, hops: Optional[int],
               max_weight: Optional[int], threshold: Optional[float], fractions: Sequence[float], seed: int,
               out_dir: Path) -> dict:
        g = GraphFactory.create(graph_spec)
        default_h, default_w = default_hops(g.name, g.n)
        ts = build_tracked_set(g, default_h if hops is None else hops, default_w if max_weight is None else max_weight)
        circuits = read_circuits(circuits_path)
        results = read_simulations(values_path)
        metrics = {r.metric for r in results}
        if len(metrics) > 1:
            raise QcapValidationError(f"Simulation file mixes metrics {sorted(metrics)}")
        metric = metrics.pop() if metrics else 'fidelity'
        values = {r.id: r.value for r in results}
        shots = {r.id: r.shots for r in results if r.shots}
        split = assemble(circuits, values, ts, threshold, fractions, seed, metric, shots)
        paths = write_split(split, out_dir)
        return {'command': 'encode', 'graph': g.name, 'hops': ts.hops, 'k': ts.k, 'metric': metric, 'seed': seed,
                'threshold': threshold, 'counts': {name: len(part) for name, part in split.parts().items()},
                'files': {name: str(path) for name, path in paths.items()}}

    def train(self, dataset_dir: Path, seed: int, out: Path, cfg: TrainConfig = None, filter_hops: int = None,
              measurement_filter_hops: int = None, dense_units: Sequence[int] = None, scale: float = None,
              split: DatasetSplit = None) -> dict:
        split = split or read_split(dataset_dir)
        cfg = cfg or TrainConfig(seed=seed)
        ts = split.ts
        model = build_model(ts, ts.graph, ChannelSpec.for_graph(ts.graph), split.metric,
                            np.random.default_rng([seed, 5]), filter_hops, measurement_filter_hops, dense_units, scale)
        model, history = train(model, split, cfg)
        save_checkpoint(model, out)
        best = min(history, key=lambda h: h['val_loss'])
        return {'command': 'train', 'metric': model.metric, 'seed': seed, 'epochs': len(history),
                'best_epoch': best['epoch'], 'best_val_loss': best['val_loss'],
                'parameter_count': model.parameter_count(), 'out': str(out)}

    def predict(self, checkpoint_path: Path, dataset_path: Path, out: Path, model: QpaModel = None) -> dict:
        model = model or load_checkpoint(checkpoint_path)
        _, records, _ = read_dataset(dataset_path)
        start = time.perf_counter()
        predictions = predict_batch(model, records)
        table = prediction_table([r.id for r in records], [r.target for r in records], predictions)
        write_predictions(table, out)
        return {'command': 'predict', 'count': len(records), 'runtime_seconds': time.perf_counter() - start,
                'out': str(out)}

    def evaluate(self, pred_path: Path, truth_path: Path, out: Path, compare_path: Path = None,
                 scatter: Path = None, model_id: str = None) -> dict:
        start = time.perf_counter()
        header, records, _ = read_dataset(truth_path)
        truth = pd.DataFrame({'id': [r.id for r in records], 'target': [r.target for r in records]})
        shots = {r.id: r.shots for r in records}
        predicted = read_predictions(pred_path)
        try:
            table = truth.merge(predicted[['id', 'prediction']], on='id', how='left', validate='one_to_one')
        except pd.errors.MergeError as e:
            raise QcapValidationError(f"{pred_path} and {truth_path} do not pair one-to-one by id: {e}")
        if table['prediction'].isna().any():
            raise QcapValidationError(f"{pred_path} has no prediction for {int(table['prediction'].isna().sum())} records")
        table['abs_error'] = (table['prediction'] - table['target']).abs()

        compare = read_predictions(compare_path) if compare_path else None
        report = build_report(str(truth_path), model_id or str(pred_path), table, 0.0, compare,
                              str(compare_path) if compare_path else None,
                              [shots[i] for i in table['id']], header.metric)
        report.runtime_seconds = time.perf_counter() - start
        _write_json(report.model_dump(), out)
        write_predictions(table, Path(out).with_suffix('.csv'))
        if scatter:
            scatter_plot(table, scatter, title=Path(str(truth_path)).stem)
        logger.info(f"Evaluation: MAE={report.mae:.6g} r={report.pearson_r} over {report.n_records} records")
        return {'command': 'evaluate', 'n_records': report.n_records, 'mae': report.mae, 'pearson_r': report.pearson_r,
                'log10_bayes_factor': report.log10_bayes_factor, 'out': str(out)}

    def _report_split(self, model: QpaModel, records, label: str, out_dir: Path) -> Dict[str, float]:
        if not records:
            raise QcapValidationError(f"The {label} split is empty; nothing to evaluate")
        start = time.perf_counter()
        predictions = predict_batch(model, records)
        table = prediction_table([r.id for r in records], [r.target for r in records], predictions)
        write_predictions(table, out_dir / f"predictions_{label}.csv")
        report = build_report(label, 'qpa', table, time.perf_counter() - start)
        _write_json(report.model_dump(), out_dir / f"report_{label}.json")
        scatter_plot(table, out_dir / f"scatter_{label}.svg", title=label)
        logger.info(f"{label}: MAE={report.mae:.6g} r={report.pearson_r} ({report.n_records} records)")
        return {'n_records': report.n_records, 'mae': report.mae, 'pearson_r': report.pearson_r}

    def reproduce_sim4(self, seed: int, out_dir: Path, n_circuits: int = 4000, n_mirror: int = 600,
                       cfg: TrainConfig = None) -> dict:
        """Four-qubit ring, coherent errors, exact fidelities, plus a mirror-circuit test set"""
        out_dir = Path(out_dir)
        start = time.perf_counter()
        logger.info("=" * 80)
        logger.info(f"Reproducing the 4-qubit simulated experiment (seed {seed}) into {out_dir}")
        logger.info("=" * 80)
        try:
            g = GraphFactory.create('ring:4')
            model = ErrorModelFactory.create('coherent', g, seed)
            model.save(out_dir / 'error_model.json')

            sampler = make_sampler_config(g, seed)
            circuits = sample_circuits(g, sampler, n_circuits, 'iid')
            write_circuits(circuits, out_dir / 'circuits.jsonl')
            sims = simulate_circuits(circuits, model, 'fidelity', 'exact', max_workers=self.max_workers)
            write_simulations(sims, out_dir / 'values.jsonl')

            hops, max_weight = default_hops(g.name, g.n)
            ts = build_tracked_set(g, hops, max_weight)
            split = assemble(circuits, {s.id: s.value for s in sims}, ts, settings.DEFAULT_THRESHOLD,
                             settings.DEFAULT_SPLIT, seed)
            write_split(split, out_dir / 'dataset')

            summary = self.train(out_dir / 'dataset', seed, out_dir / 'checkpoint.json', cfg or TrainConfig(seed=seed),
                                 split=split)
            qpa = load_checkpoint(out_dir / 'checkpoint.json')
            results = {'test': self._report_split(qpa, split.test, 'test', out_dir)}

            pool = {c.key() for c in circuits}
            mirrors = [c for c in sample_circuits(g, sampler, n_mirror, 'mirror') if c.key() not in pool]
            write_circuits(mirrors, out_dir / 'mirror_circuits.jsonl')
            mirror_sims = simulate_circuits(mirrors, model, 'fidelity', 'exact', max_workers=self.max_workers)
            mirror_split = assemble(mirrors, {s.id: s.value for s in mirror_sims}, ts, None, (0.0, 0.0, 1.0), seed)
            write_split(mirror_split, out_dir / 'mirror_dataset')
            results['mirror'] = self._report_split(qpa, mirror_split.test, 'mirror', out_dir)
        except Exception as e:
            logger.error(f"Reproduction failed: {e}")
            raise

        payload = {'command': 'reproduce-sim4', 'seed': seed, 'graph': g.name, 'k': ts.k,
                   'dataset': {name: len(part) for name, part in split.parts().items()},
                   'train': summary, 'results': results, 'runtime_seconds': time.perf_counter() - start,
                   'out': str(out_dir)}
        _write_json(payload, out_dir / 'summary.json')
        logger.info(f"Reproduction completed in {payload['runtime_seconds'] / 60:.2f} minutes")
        return payload

    def reproduce_ring100(self, seed: int, out_dir: Path, qubits: int = 100, n_circuits: int = 1000,
                          max_depth: int = 22, cfg: TrainConfig = None) -> dict:
        """Large ring, qubit-independent weight-1 errors, first-order fidelities"""
        out_dir = Path(out_dir)
        start = time.perf_counter()
        logger.info("=" * 80)
        logger.info(f"Reproducing the large-ring experiment on ring:{qubits} (seed {seed}) into {out_dir}")
        logger.info("=" * 80)
        try:
            g = GraphFactory.create(f"ring:{qubits}")
            model = ErrorModelFactory.create('weight1', g, seed)
            model.save(out_dir / 'error_model.json')
            ts = build_tracked_set(g, 1, 1)

            circuits = sample_circuits(g, make_sampler_config(g, seed, max_depth=max_depth), n_circuits, 'iid')
            write_circuits(circuits, out_dir / 'circuits.jsonl')
            sims = simulate_circuits(circuits, model, 'fidelity', 'first_order', ts, max_workers=self.max_workers)
            write_simulations(sims, out_dir / 'values.jsonl')

            split = assemble(circuits, {s.id: s.value for s in sims}, ts, settings.LARGE_DEVICE_THRESHOLD,
                             settings.DEFAULT_SPLIT, seed)
            write_split(split, out_dir / 'dataset')
            summary = self.train(out_dir / 'dataset', seed, out_dir / 'checkpoint.json', cfg or TrainConfig(seed=seed),
                                 split=split)
            qpa = load_checkpoint(out_dir / 'checkpoint.json')
            results = {'test': self._report_split(qpa, split.test, 'test', out_dir)}
        except Exception as e:
            logger.error(f"Reproduction failed: {e}")
            raise

        payload = {'command': 'reproduce-ring100', 'seed': seed, 'graph': g.name, 'k': ts.k,
                   'dataset': {name: len(part) for name, part in split.parts().items()},
                   'train': summary, 'results': results, 'runtime_seconds': time.perf_counter() - start,
                   'out': str(out_dir)}
        _write_json(payload, out_dir / 'summary.json')
        logger.info(f"Reproduction completed in {payload['runtime_seconds'] / 60:.2f} minutes")
        return payload
