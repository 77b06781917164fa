"""
Command-line entry point.

Usage:
    python -m qcap gen-model --graph ring:4 --family coherent --seed 7 --out model.json
    python -m qcap gen-circuits --graph ring:4 --count 4000 --kind iid --seed 7 --out circuits.jsonl
    python -m qcap simulate --circuits circuits.jsonl --model model.json --metric fidelity --method exact --seed 7 --out values.jsonl
    python -m qcap encode --circuits circuits.jsonl --values values.jsonl --graph ring:4 --hops 2 --threshold 0.85 --split 56.25,18.75,25 --seed 7 --out dataset/
    python -m qcap train --dataset dataset/ --seed 7 --out checkpoint.json
    python -m qcap predict --checkpoint checkpoint.json --dataset dataset/test.jsonl --out predictions.csv
    python -m qcap evaluate --pred predictions.csv --truth dataset/test.jsonl --out report.json
    python -m qcap reproduce-sim4 --seed 7 --out runs/sim4
    python -m qcap reproduce-ring100 --seed 7 --qubits 24 --out runs/ring24

Exit codes: 0 success, 2 validation error, 3 numerical failure.
"""

import argparse
import json
import sys
from pathlib import Path
from typing import List, Optional

from pydantic import ValidationError

from qcap.base_logging import Logger
from qcap.config import settings
from qcap.dataset import parse_fractions
from qcap.error_generators import ErrorModelFactory
from qcap.exceptions import NumericalError, QcapValidationError
from qcap.models import TrainConfig
from qcap.pipeline import CapabilityPipeline

logger = Logger("qcap.main")

EXIT_OK, EXIT_VALIDATION, EXIT_NUMERICAL = 0, 2, 3


def _int_pair(text: str):
    try:
        low, high = (int(p) for p in text.split(','))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected two comma-separated integers, got '{text}'")
    return low, high


def _int_list(text: str):
    try:
        return [int(p) for p in text.split(',')]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got '{text}'")


def _add_train_options(p: argparse.ArgumentParser):
    p.add_argument('--lr', type=float, default=settings.LEARNING_RATE, help='Adam step size (default: 1e-3)')
    p.add_argument('--batch-size', type=int, default=settings.BATCH_SIZE)
    p.add_argument('--max-epochs', type=int, default=settings.MAX_EPOCHS)
    p.add_argument('--patience', type=int, default=settings.PATIENCE)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog='qcap', description="Physics-aware capability learning for noisy Clifford circuits")
    subparsers = parser.add_subparsers(dest='command', required=True)

    p = subparsers.add_parser('gen-model', help='Sample an error model for a device')
    p.add_argument('--graph', required=True, help='Device graph, e.g. ring:4, tbar:5, bowtie:5 or an edge-list JSON file')
    p.add_argument('--family', default='coherent', choices=ErrorModelFactory.list_models())
    p.add_argument('--max-strength', type=float, help='Per-gate strength cap (coherent/stochastic)')
    p.add_argument('--measurement-strength', type=float, help='Terminal bit-flip rate cap (stochastic)')
    p.add_argument('--max-s', type=float, help='Stochastic rate cap (weight1)')
    p.add_argument('--max-h', type=float, help='Hamiltonian rate cap (weight1)')
    p.add_argument('--rate-factor', type=float, default=1.0, help='Multiply every sampled rate, e.g. 0.5 to halve them')
    p.add_argument('--seed', type=int, required=True)
    p.add_argument('--out', type=Path, required=True)

    p = subparsers.add_parser('gen-circuits', help='Sample random circuits')
    p.add_argument('--graph', required=True)
    p.add_argument('--count', type=int, required=True)
    p.add_argument('--kind', default='iid', choices=['iid', 'mirror'])
    p.add_argument('--widths', type=_int_pair, help='Inclusive width range, e.g. 1,4')
    p.add_argument('--max-depth', type=int, help='Single depth cap for every width')
    p.add_argument('--start', type=int, default=0, help='Index of the first circuit (for extending a set)')
    p.add_argument('--seed', type=int, required=True)
    p.add_argument('--out', type=Path, required=True)

    p = subparsers.add_parser('simulate', help='Compute ground-truth fidelity or PST values')
    p.add_argument('--circuits', type=Path, required=True)
    p.add_argument('--model', type=Path, required=True)
    p.add_argument('--metric', default='fidelity', choices=['fidelity', 'pst'])
    p.add_argument('--method', default='exact', choices=['exact', 'first_order'])
    p.add_argument('--shots', type=int, help='Also sample binomial shot counts (PST only)')
    p.add_argument('--hops', type=int, help='Tracked-set hop cutoff for the first-order method')
    p.add_argument('--max-weight', type=int, choices=[1, 2])
    p.add_argument('--seed', type=int, required=True)
    p.add_argument('--out', type=Path, required=True)

    p = subparsers.add_parser('encode', help='Filter, split and encode a dataset')
    p.add_argument('--circuits', type=Path, required=True)
    p.add_argument('--values', type=Path, required=True)
    p.add_argument('--graph', required=True)
    p.add_argument('--hops', type=int)
    p.add_argument('--max-weight', type=int, choices=[1, 2])
    p.add_argument('--threshold', type=float, default=settings.DEFAULT_THRESHOLD,
                   help='Keep circuits whose value is at least this (negative disables filtering)')
    p.add_argument('--split', type=parse_fractions, default=settings.DEFAULT_SPLIT,
                   help='train,validation,test fractions or percentages (default: 56.25,18.75,25)')
    p.add_argument('--seed', type=int, required=True)
    p.add_argument('--out', type=Path, required=True)

    p = subparsers.add_parser('train', help='Train a physics-aware model')
    p.add_argument('--dataset', type=Path, required=True, help='Directory written by encode')
    p.add_argument('--filter-hops', type=int, default=settings.FILTER_HOPS)
    p.add_argument('--measurement-filter-hops', type=int, default=settings.MEASUREMENT_FILTER_HOPS)
    p.add_argument('--dense-units', type=_int_list, default=list(settings.DENSE_UNITS))
    p.add_argument('--scale', type=float, default=settings.TARGET_SCALE)
    _add_train_options(p)
    p.add_argument('--seed', type=int, required=True)
    p.add_argument('--out', type=Path, required=True)

    p = subparsers.add_parser('predict', help='Predict a dataset file with a checkpoint')
    p.add_argument('--checkpoint', type=Path, required=True)
    p.add_argument('--dataset', type=Path, required=True)
    p.add_argument('--seed', type=int, default=0)
    p.add_argument('--out', type=Path, required=True)

    p = subparsers.add_parser('evaluate', help='Score a prediction table against a dataset file')
    p.add_argument('--pred', type=Path, required=True)
    p.add_argument('--truth', type=Path, required=True)
    p.add_argument('--compare', type=Path, help='Second prediction table for a Bayes factor (PST only)')
    p.add_argument('--scatter', type=Path, help='Write a target-vs-prediction scatter plot')
    p.add_argument('--seed', type=int, default=0)
    p.add_argument('--out', type=Path, required=True)

    p = subparsers.add_parser('reproduce-sim4', help='End-to-end 4-qubit simulated run')
    p.add_argument('--circuits', type=int, default=4000)
    p.add_argument('--mirror', type=int, default=600)
    _add_train_options(p)
    p.add_argument('--seed', type=int, required=True)
    p.add_argument('--out', type=Path)

    p = subparsers.add_parser('reproduce-ring100', help='End-to-end large-ring first-order run')
    p.add_argument('--qubits', type=int, default=100)
    p.add_argument('--circuits', type=int, default=1000)
    p.add_argument('--max-depth', type=int, default=22)
    _add_train_options(p)
    p.add_argument('--seed', type=int, required=True)
    p.add_argument('--out', type=Path)
    return parser


def _train_config(args) -> TrainConfig:
    return TrainConfig(learning_rate=args.lr, batch_size=args.batch_size, max_epochs=args.max_epochs,
                       patience=args.patience, seed=args.seed)


def run(args) -> dict:
    pipeline = CapabilityPipeline()
    if args.command == 'gen-model':
        options = {'max_strength': args.max_strength, 'measurement_strength': args.measurement_strength,
                   'max_s': args.max_s, 'max_h': args.max_h}
        return pipeline.generate_model(args.graph, args.family, args.seed, args.out, args.rate_factor,
                                       **{k: v for k, v in options.items() if v is not None})
    if args.command == 'gen-circuits':
        return pipeline.generate_circuits(args.graph, args.count, args.kind, args.seed, args.out,
                                          args.widths, args.max_depth, args.start)
    if args.command == 'simulate':
        return pipeline.simulate(args.circuits, args.model, args.metric, args.method, args.out, args.seed,
                                 args.shots, args.hops, args.max_weight)
    if args.command == 'encode':
        threshold = args.threshold if args.threshold >= 0 else None
        return pipeline.encode(args.circuits, args.values, args.graph, args.hops, args.max_weight, threshold,
                               args.split, args.seed, args.out)
    if args.command == 'train':
        return pipeline.train(args.dataset, args.seed, args.out, _train_config(args), args.filter_hops,
                              args.measurement_filter_hops, args.dense_units, args.scale)
    if args.command == 'predict':
        return pipeline.predict(args.checkpoint, args.dataset, args.out)
    if args.command == 'evaluate':
        return pipeline.evaluate(args.pred, args.truth, args.out, args.compare, args.scatter)
    if args.command == 'reproduce-sim4':
        out = args.out or Path(settings.OUTPUT_DIR) / f"sim4-{args.seed}"
        return pipeline.reproduce_sim4(args.seed, out, args.circuits, args.mirror, _train_config(args))
    if args.command == 'reproduce-ring100':
        out = args.out or Path(settings.OUTPUT_DIR) / f"ring{args.qubits}-{args.seed}"
        return pipeline.reproduce_ring100(args.seed, out, args.qubits, args.circuits, args.max_depth,
                                          _train_config(args))
    raise QcapValidationError(f"Unknown command {args.command}")


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        summary = run(args)
    except (QcapValidationError, ValidationError) as e:
        logger.error(f"{args.command}: {e}")
        print(json.dumps({'command': args.command, 'status': 'error', 'error': str(e)}))
        return EXIT_VALIDATION
    except NumericalError as e:
        logger.error(f"{args.command}: numerical failure: {e}")
        print(json.dumps({'command': args.command, 'status': 'error', 'error': str(e)}))
        return EXIT_NUMERICAL
    summary.setdefault('status', 'ok')
    print(json.dumps(summary, indent=2))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
