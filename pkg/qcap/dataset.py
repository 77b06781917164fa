"""
Dataset assembly and the JSON-lines file formats (circuits, simulation
values, datasets).
"""

import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np
from pydantic import ValidationError

from qcap.base_logging import Logger, Progress
from qcap.circuits import Circuit, ConnectivityGraph, GraphFactory
from qcap.config import settings
from qcap.encoding import ChannelSpec, CircuitTensor, encode_circuit
from qcap.error_generators import PropagationTables, TrackedErrorSet, build_tracked_set, compute_propagation
from qcap.exceptions import QcapValidationError, SchemaError
from qcap.models import CircuitRow, DatasetHeader, DatasetRow, SimulationRow
from qcap.simulators import SimulationResult

logger = Logger("qcap.dataset")

SPLIT_NAMES = ('train', 'validation', 'test')


@dataclass
class DatasetRecord:
    id: str
    tensor: CircuitTensor
    tables: PropagationTables
    target: float
    metric: str
    shots: Optional[Tuple[int, int]] = None
    circuit: Optional[Circuit] = None

    def to_row(self) -> dict:
        row = {
            'id': self.id,
            'target': f"{self.target:.17g}",
            'metric': self.metric,
            'shots': list(self.shots) if self.shots else None,
            'tensor': self.tensor.to_row(),
        }
        row.update(self.tables.to_row())
        if self.circuit is not None:
            row['circuit'] = self.circuit.to_row()
        return row


@dataclass
class DatasetSplit:
    train: List[DatasetRecord]
    validation: List[DatasetRecord]
    test: List[DatasetRecord]
    fractions: Tuple[float, float, float]
    threshold: Optional[float]
    seed: int
    metric: str = 'fidelity'
    ts: Optional[TrackedErrorSet] = field(default=None, repr=False)

    def parts(self) -> Dict[str, List[DatasetRecord]]:
        return {'train': self.train, 'validation': self.validation, 'test': self.test}

    def __len__(self) -> int:
        return len(self.train) + len(self.validation) + len(self.test)


def parse_fractions(text: str) -> Tuple[float, float, float]:
    """ "56.25,18.75,25" or "0.5625,0.1875,0.25" -> fractions summing to 1"""
    try:
        parts = [float(p) for p in text.split(',')]
    except ValueError:
        raise QcapValidationError(f"Split must be three comma-separated numbers, got '{text}'")
    if len(parts) != 3 or any(p < 0 for p in parts):
        raise QcapValidationError(f"Split must be three nonnegative numbers, got '{text}'")
    total = sum(parts)
    if math.isclose(total, 100.0, abs_tol=1e-6):
        parts = [p / 100.0 for p in parts]
    elif not math.isclose(total, 1.0, abs_tol=1e-9):
        raise QcapValidationError(f"Split fractions must sum to 1 (or 100), got {total}")
    return tuple(parts)


def _propagate_chunk(circuits: List[Circuit], ts: TrackedErrorSet) -> List[PropagationTables]:
    return [compute_propagation(c, ts) for c in circuits]


def propagate_all(circuits: Sequence[Circuit], ts: TrackedErrorSet, max_workers: int = None) -> List[PropagationTables]:
    """Propagation tables for every circuit, in input order"""
    max_workers = max_workers or settings.MAX_WORKERS
    circuits = list(circuits)
    chunk_size = max(1, min(50, math.ceil(len(circuits) / max(1, 4 * max_workers))))
    chunks = [circuits[i:i + chunk_size] for i in range(0, len(circuits), chunk_size)]
    progress = Progress(logger, len(circuits), "Propagation", unit='circuits')
    tables = []
    if max_workers > 1 and len(chunks) > 1:
        with ProcessPoolExecutor(max_workers=max_workers) as executor:
            for chunk_tables in executor.map(_propagate_chunk, chunks, [ts] * len(chunks)):
                tables.extend(chunk_tables)
                progress.step(len(chunk_tables))
    else:
        for chunk in chunks:
            tables.extend(_propagate_chunk(chunk, ts))
            progress.step(len(chunk))
    return tables


def assemble(circuits: Sequence[Circuit], values: Mapping[str, float], ts: TrackedErrorSet,
             threshold: Optional[float], fractions: Sequence[float], seed: int, metric: str = 'fidelity',
             shots: Mapping[str, Tuple[int, int]] = None, d_max: int = None) -> DatasetSplit:
    """
    Filter by threshold (values >= threshold are kept), drop duplicate
    circuits, shuffle with ``seed``, split by ``fractions`` and attach tensors
    and propagation tables.
    """
    fractions = tuple(float(f) for f in fractions)
    if len(fractions) != 3 or any(f < 0 for f in fractions) or not math.isclose(sum(fractions), 1.0, abs_tol=1e-9):
        raise QcapValidationError(f"Split fractions must be three nonnegative numbers summing to 1, got {fractions}")
    missing = [c.id for c in circuits if c.id not in values]
    if missing:
        raise QcapValidationError(f"No value for {len(missing)} circuits, first: {missing[0]}")

    kept, seen = [], set()
    below = duplicates = 0
    for c in circuits:
        if threshold is not None and values[c.id] < threshold:
            below += 1
            continue
        key = c.key()
        if key in seen:
            duplicates += 1
            continue
        seen.add(key)
        kept.append(c)
    logger.info(f"Kept {len(kept)}/{len(circuits)} circuits ({below} below threshold {threshold}, {duplicates} duplicates)")
    if not kept:
        logger.warning(f"Every circuit fell below the threshold {threshold}; the split is empty")
        return DatasetSplit([], [], [], fractions, threshold, seed, metric, ts)

    order = np.random.default_rng(seed).permutation(len(kept))
    kept = [kept[i] for i in order]

    g = ts.graph
    spec = ChannelSpec.for_graph(g)
    d_max = d_max or max(c.depth for c in kept)
    tables = propagate_all(kept, ts)
    records = [
        DatasetRecord(c.id, encode_circuit(c, g, spec, d_max, metric), t, float(values[c.id]), metric,
                      (shots or {}).get(c.id), c)
        for c, t in zip(kept, tables)
    ]

    n_train = int(round(fractions[0] * len(records)))
    n_val = min(len(records) - n_train, int(round(fractions[1] * len(records))))
    split = DatasetSplit(records[:n_train], records[n_train:n_train + n_val], records[n_train + n_val:],
                         fractions, threshold, seed, metric, ts)
    logger.info(f"Split sizes: train={len(split.train)} validation={len(split.validation)} test={len(split.test)}")
    return split


# File formats

def _read_lines(path: Path) -> List[Tuple[int, dict]]:
    path = Path(path)
    if not path.exists():
        raise QcapValidationError(f"File not found: {path}")
    rows = []
    with open(path, 'r') as f:
        for number, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                rows.append((number, json.loads(line)))
            except json.JSONDecodeError as e:
                raise SchemaError(f"{path}: invalid JSON ({e.msg})", number)
    return rows


def _write_lines(rows: Iterable[dict], path: Path) -> int:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    count = 0
    with open(path, 'w') as f:
        for row in rows:
            f.write(json.dumps(row, separators=(',', ':')) + '\n')
            count += 1
    return count


def write_circuits(circuits: Iterable[Circuit], path: Path) -> int:
    count = _write_lines((c.to_row() for c in circuits), path)
    logger.info(f"Wrote {count} circuits to {path}")
    return count


def _circuit_from(data: dict, number: int, graphs: Dict[str, ConnectivityGraph]) -> Circuit:
    try:
        row = CircuitRow.model_validate(data)
    except ValidationError as e:
        raise SchemaError(f"invalid circuit: {e.errors()[0]['msg']}", number)
    try:
        if row.graph not in graphs:
            graphs[row.graph] = GraphFactory.create(row.graph)
        return Circuit.from_row(row).validate(graphs[row.graph])
    except QcapValidationError as e:
        raise SchemaError(str(e), number)


def read_circuits(path: Path) -> List[Circuit]:
    graphs: Dict[str, ConnectivityGraph] = {}
    circuits = [_circuit_from(data, number, graphs) for number, data in _read_lines(path)]
    logger.info(f"Read {len(circuits)} circuits from {path}")
    return circuits


def write_simulations(results: Iterable[SimulationResult], path: Path) -> int:
    count = _write_lines((r.to_row() for r in results), path)
    logger.info(f"Wrote {count} simulation values to {path}")
    return count


def read_simulations(path: Path) -> List[SimulationResult]:
    results = []
    for number, data in _read_lines(path):
        try:
            row = SimulationRow.model_validate(data)
        except ValidationError as e:
            raise SchemaError(f"invalid simulation row: {e.errors()[0]['msg']}", number)
        results.append(SimulationResult(row.id, row.metric, row.value, row.method,
                                        tuple(row.shots) if row.shots else None))
    return results


def write_dataset(records: Sequence[DatasetRecord], path: Path, split_name: str, ts: TrackedErrorSet,
                  metric: str, threshold: float = None, seed: int = None) -> int:
    header = DatasetHeader(schema=settings.DATASET_SCHEMA, split=split_name, graph=ts.graph.name, hops=ts.hops,
                           max_weight=ts.max_weight, metric=metric, count=len(records),
                           threshold=threshold, seed=seed)
    rows = [header.model_dump(by_alias=True)] + [r.to_row() for r in records]
    _write_lines(rows, path)
    logger.info(f"Wrote {len(records)} {split_name} records to {path}")
    return len(records)


def read_dataset(path: Path, recompute: bool = False) -> Tuple[DatasetHeader, List[DatasetRecord], TrackedErrorSet]:
    """
    Read a dataset file; nothing is returned unless every line validates.
    ``recompute`` rebuilds propagation tables from the inline circuits.
    """
    lines = _read_lines(path)
    if not lines:
        raise SchemaError(f"{path} is empty", 1)
    number, data = lines[0]
    try:
        header = DatasetHeader.model_validate(data)
    except ValidationError as e:
        raise SchemaError(f"invalid dataset header: {e.errors()[0]['msg']}", number)
    if header.schema_version != settings.DATASET_SCHEMA:
        raise SchemaError(f"dataset schema {header.schema_version} is not supported "
                          f"(expected {settings.DATASET_SCHEMA})", number)
    g = GraphFactory.create(header.graph)
    ts = build_tracked_set(g, header.hops, header.max_weight)
    graphs = {g.name: g}

    records = []
    for number, data in lines[1:]:
        try:
            row = DatasetRow.model_validate(data)
        except ValidationError as e:
            raise SchemaError(f"invalid dataset record: {e.errors()[0]['msg']}", number)
        circuit = _circuit_from(row.circuit.model_dump(), number, graphs) if row.circuit else None
        try:
            tensor = CircuitTensor.from_row(row.tensor)
            if recompute:
                if circuit is None:
                    raise QcapValidationError(f"record {row.id} has no circuit to recompute tables from")
                tables = compute_propagation(circuit, ts)
            else:
                tables = PropagationTables.from_row(ts.kinds, row.perm_keys, row.perm, row.sign, g.n)
        except (QcapValidationError, ValueError) as e:
            raise SchemaError(str(e), number)
        if tables.depth != tensor.true_depth:
            raise SchemaError(f"record {row.id}: tables have {tables.depth} rows for depth {tensor.true_depth}", number)
        records.append(DatasetRecord(row.id, tensor, tables, float(row.target), row.metric,
                                     tuple(row.shots) if row.shots else None, circuit))
    if len(records) != header.count:
        raise SchemaError(f"header announces {header.count} records, file has {len(records)}", 1)
    logger.info(f"Read {len(records)} {header.split} records from {path}")
    return header, records, ts


def write_split(split: DatasetSplit, out_dir: Path) -> Dict[str, Path]:
    out_dir = Path(out_dir)
    paths = {}
    for name, records in split.parts().items():
        paths[name] = out_dir / f"{name}.jsonl"
        write_dataset(records, paths[name], name, split.ts, split.metric, split.threshold, split.seed)
    return paths


def read_split(in_dir: Path, recompute: bool = False) -> DatasetSplit:
    in_dir = Path(in_dir)
    parts, ts, header = {}, None, None
    for name in SPLIT_NAMES:
        path = in_dir / f"{name}.jsonl"
        if not path.exists():
            parts[name] = []
            continue
        header, parts[name], ts = read_dataset(path, recompute)
    if header is None:
        raise QcapValidationError(f"No dataset files found in {in_dir}")
    total = sum(len(p) for p in parts.values()) or 1
    fractions = tuple(len(parts[name]) / total for name in SPLIT_NAMES)
    return DatasetSplit(parts['train'], parts['validation'], parts['test'], fractions,
                        header.threshold, header.seed or 0, header.metric, ts)
