"""
H/S error generators, tracked error sets, error-model sampling, propagation
tables and the first-order accumulation head.

The head is shared by the first-order simulator and the learned model: every
tracked generator occurring after layer i is pulled to the end of the circuit
(a signed Pauli permutation, since the circuit is Clifford), the pulled rates
are summed per end generator, and the infidelity is read off as the sum of
stochastic rates plus squared Hamiltonian rates.
"""

import json
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Callable, Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from qcap.base_logging import Logger
from qcap.circuits import Circuit, ConnectivityGraph
from qcap.config import settings
from qcap.exceptions import DimensionMismatch, QcapValidationError, SchemaError
from qcap.models import ErrorModelFile
from qcap.pauli import (
    PAULI_LETTERS,
    SINGLE_QUBIT_GATES,
    TWO_QUBIT_GATES,
    CliffordTableau,
    Gate,
    SignedPauli,
    compose,
    conjugate,
    tableau_of_layer,
)

logger = Logger("qcap.error_generators")

ERROR_KINDS = ('H', 'S')
MEASURE_KEY = 'MEASURE@*'


@dataclass(frozen=True)
class ErrorGenerator:
    kind: str
    pauli: SignedPauli

    def __post_init__(self):
        if self.kind not in ERROR_KINDS:
            raise QcapValidationError(f"Error generator kind must be H or S, got {self.kind}")
        if self.pauli.is_identity():
            raise QcapValidationError("Error generators are indexed by non-identity Paulis")
        if self.pauli.sign != 1:
            raise QcapValidationError("Error generator Paulis are stored with sign +1")

    @property
    def support(self) -> Tuple[int, ...]:
        return self.pauli.support

    @property
    def label(self) -> str:
        """Compact form, e.g. "H:XZ@[0,1]" """
        support = self.support
        letters = ''.join(self.pauli.letter(q) for q in support)
        return f"{self.kind}:{letters}@[{','.join(str(q) for q in support)}]"

    @property
    def full_label(self) -> str:
        """Full-register form, e.g. "H:XZII" """
        return f"{self.kind}:{self.pauli.letters}"

    def __str__(self) -> str:
        return self.label

    @classmethod
    def parse(cls, text: str, n: int) -> 'ErrorGenerator':
        """Inverse of ``label`` and ``full_label``"""
        try:
            kind, _, rest = text.partition(':')
            if '@' in rest:
                letters, _, qubits = rest.partition('@')
                qubits = [int(q) for q in qubits.strip('[]').split(',') if q]
                return cls(kind, SignedPauli.from_letters(n, qubits, letters))
            pauli = SignedPauli.from_label(rest)
            if pauli.n != n:
                raise DimensionMismatch(f"Generator {text} is not on {n} qubits")
            return cls(kind, pauli)
        except (ValueError, KeyError) as e:
            raise QcapValidationError(f"Cannot parse error generator '{text}': {e}")


@dataclass(frozen=True)
class TrackedErrorSet:
    generators: Tuple[ErrorGenerator, ...]
    graph: ConnectivityGraph
    hops: int
    max_weight: int

    def __len__(self) -> int:
        return len(self.generators)

    def __getitem__(self, j: int) -> ErrorGenerator:
        return self.generators[j]

    def __iter__(self):
        return iter(self.generators)

    @property
    def k(self) -> int:
        return len(self.generators)

    @cached_property
    def column_of(self) -> Dict[ErrorGenerator, int]:
        return {gen: j for j, gen in enumerate(self.generators)}

    @cached_property
    def kinds(self) -> Tuple[str, ...]:
        return tuple(gen.kind for gen in self.generators)

    def labels(self) -> List[str]:
        return [gen.label for gen in self.generators]


def build_tracked_set(g: ConnectivityGraph, h: int, max_weight: int = 2) -> TrackedErrorSet:
    """
    All weight-1 H and S errors, plus (max_weight=2) all two-body H and S
    errors on qubit pairs within ``h`` hops. Ordered by weight, qubits,
    letters, then H before S.
    """
    if h < 0:
        raise QcapValidationError(f"Hop cutoff must be nonnegative, got {h}")
    if max_weight not in (1, 2):
        raise QcapValidationError(f"max_weight must be 1 or 2, got {max_weight}")
    generators = []
    for q in range(g.n):
        for letter in PAULI_LETTERS:
            pauli = SignedPauli.single(g.n, q, letter)
            generators.extend(ErrorGenerator(kind, pauli) for kind in ERROR_KINDS)
    if max_weight == 2:
        for a, b in g.pairs_within(h):
            for la in PAULI_LETTERS:
                for lb in PAULI_LETTERS:
                    pauli = SignedPauli.from_letters(g.n, (a, b), la + lb)
                    generators.extend(ErrorGenerator(kind, pauli) for kind in ERROR_KINDS)
    ts = TrackedErrorSet(tuple(generators), g, h, max_weight)
    logger.info(f"Tracked error set on {g.name}: k={ts.k} (hops={h}, max_weight={max_weight})")
    return ts


def default_hops(graph_spec: str, n: int) -> Tuple[int, int]:
    """(hops, max_weight) defaults for a device"""
    if n >= settings.LARGE_DEVICE_QUBITS:
        return 1, 1
    return settings.DEVICE_HOPS.get(graph_spec, settings.DEFAULT_HOPS), 2


# Error models

def gate_key(gate: Gate) -> str:
    return f"{gate.label}@{','.join(str(q) for q in gate.qubits)}"


@dataclass
class ErrorModel:
    """Per-gate error vectors, keyed "<label>@<q0,q1>" or "<label>@*" (qubit independent)"""
    n: int
    graph: str
    family: str
    gates: Dict[str, Dict[ErrorGenerator, float]] = field(default_factory=dict)

    def __post_init__(self):
        for key, vector in self.gates.items():
            for gen, rate in vector.items():
                if gen.kind == 'S' and rate < 0:
                    raise QcapValidationError(f"Negative stochastic rate {rate} for {gen.label} in {key}")

    def error_vector(self, gate: Gate) -> Dict[ErrorGenerator, float]:
        vector = self.gates.get(gate_key(gate))
        if vector is None:
            vector = self.gates.get(f"{gate.label}@*", {})
        return vector

    def measurement_vector(self) -> Dict[ErrorGenerator, float]:
        return self.gates.get(MEASURE_KEY, {})

    def scaled(self, factor: float) -> 'ErrorModel':
        """The same model with every rate multiplied by ``factor``"""
        if factor < 0:
            raise QcapValidationError(f"Scale factor must be nonnegative, got {factor}")
        gates = {key: {gen: rate * factor for gen, rate in vector.items()} for key, vector in self.gates.items()}
        return ErrorModel(self.n, self.graph, self.family, gates)

    def to_dict(self) -> dict:
        gates = {}
        for key, vector in self.gates.items():
            gates[key] = [
                {'kind': gen.kind, 'pauli': ''.join(gen.pauli.letter(q) for q in gen.support),
                 'qubits': list(gen.support), 'rate': float(rate)}
                for gen, rate in vector.items()
            ]
        return {'n': self.n, 'graph': self.graph, 'family': self.family, 'gates': gates}

    def save(self, path: Path):
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, 'w') as f:
            json.dump(self.to_dict(), f, indent=1)
        logger.info(f"Saved {self.family} error model with {len(self.gates)} gate entries to {path}")

    @classmethod
    def load(cls, path: Path) -> 'ErrorModel':
        path = Path(path)
        if not path.exists():
            raise QcapValidationError(f"Error model not found: {path}")
        with open(path, 'r') as f:
            try:
                parsed = ErrorModelFile.model_validate(json.load(f))
            except Exception as e:
                raise SchemaError(f"Invalid error model file {path}: {e}")
        gates = {}
        for key, rows in parsed.gates.items():
            gates[key] = {ErrorGenerator(row.kind, SignedPauli.from_letters(parsed.n, row.qubits, row.pauli)): row.rate
                          for row in rows}
        return cls(parsed.n, parsed.graph, parsed.family, gates)


def _local_paulis(n: int, qubits: Sequence[int]) -> List[SignedPauli]:
    """All 4^m - 1 non-identity Paulis supported within ``qubits``"""
    letters = ('I',) + PAULI_LETTERS
    out = []
    for index in range(1, 4 ** len(qubits)):
        word = ''.join(letters[(index // 4 ** (len(qubits) - 1 - t)) % 4] for t in range(len(qubits)))
        out.append(SignedPauli.from_letters(n, qubits, word))
    return out


def _gate_sites(g: ConnectivityGraph, gate_set: Iterable[str]) -> List[Gate]:
    sites = []
    for label in gate_set:
        if label in TWO_QUBIT_GATES:
            for a, b in g.sorted_edges:
                sites.append(Gate(label, (a, b)))
                sites.append(Gate(label, (b, a)))
        else:
            sites.extend(Gate(label, (q,)) for q in range(g.n))
    return sites


def sample_coherent_model(g: ConnectivityGraph, gate_set: Sequence[str] = None,
                          max_strength: float = None, rng: np.random.Generator = None) -> ErrorModel:
    """
    Local coherent model: every (gate, qubits) gets a strength eps_g ~ U[0,1]*max
    spread over all 4^m - 1 local H generators as sqrt(eps_g) * r / ||r||, r ~ U[0,1],
    so the squared rates sum to eps_g.
    """
    gate_set = gate_set or SINGLE_QUBIT_GATES + TWO_QUBIT_GATES
    max_strength = settings.COHERENT_MAX_STRENGTH if max_strength is None else max_strength
    if max_strength <= 0:
        raise QcapValidationError(f"max_strength must be positive, got {max_strength}")
    rng = rng or np.random.default_rng()
    gates = {}
    for gate in _gate_sites(g, gate_set):
        strength = rng.uniform() * max_strength
        paulis = _local_paulis(g.n, gate.qubits)
        relative = rng.uniform(size=len(paulis))
        rates = np.sqrt(strength) * relative / np.linalg.norm(relative)
        gates[gate_key(gate)] = {ErrorGenerator('H', p): float(r) for p, r in zip(paulis, rates)}
    return ErrorModel(g.n, g.name, 'coherent', gates)


def sample_stochastic_model(g: ConnectivityGraph, gate_set: Sequence[str] = None,
                            max_strength: float = None, rng: np.random.Generator = None,
                            measurement_strength: float = 0.0) -> ErrorModel:
    """
    Local Pauli-stochastic model with the same per-gate strength budget: the S
    rates of a gate sum to eps_g. Optionally adds terminal bit-flip (S_X) rates.
    """
    gate_set = gate_set or SINGLE_QUBIT_GATES + TWO_QUBIT_GATES
    max_strength = settings.COHERENT_MAX_STRENGTH if max_strength is None else max_strength
    rng = rng or np.random.default_rng()
    gates = {}
    for gate in _gate_sites(g, gate_set):
        strength = rng.uniform() * max_strength
        paulis = _local_paulis(g.n, gate.qubits)
        relative = rng.uniform(size=len(paulis))
        rates = strength * relative / relative.sum()
        gates[gate_key(gate)] = {ErrorGenerator('S', p): float(r) for p, r in zip(paulis, rates)}
    if measurement_strength > 0:
        gates[MEASURE_KEY] = {ErrorGenerator('S', SignedPauli.single(g.n, q, 'X')): float(rng.uniform() * measurement_strength)
                              for q in range(g.n)}
    return ErrorModel(g.n, g.name, 'stochastic', gates)


def sample_weight1_model(g: ConnectivityGraph, gate_set: Sequence[str] = None, max_s: float = None,
                         max_h: float = None, rng: np.random.Generator = None) -> ErrorModel:
    """
    Qubit-independent weight-1 model: each gate label carries rates for all 3n
    weight-1 S errors (U[0, max_s]) and all 3n weight-1 H errors (U[0, max_h]).
    """
    gate_set = gate_set or SINGLE_QUBIT_GATES + TWO_QUBIT_GATES
    max_s = settings.WEIGHT1_MAX_S if max_s is None else max_s
    max_h = settings.WEIGHT1_MAX_H if max_h is None else max_h
    rng = rng or np.random.default_rng()
    gates = {}
    for label in gate_set:
        vector = {}
        for q in range(g.n):
            for letter in PAULI_LETTERS:
                pauli = SignedPauli.single(g.n, q, letter)
                vector[ErrorGenerator('H', pauli)] = float(rng.uniform(0.0, max_h))
                vector[ErrorGenerator('S', pauli)] = float(rng.uniform(0.0, max_s))
        gates[f"{label}@*"] = vector
    return ErrorModel(g.n, g.name, 'weight1', gates)


class ErrorModelFactory:
    """Factory for the error-model samplers"""

    _model_registry: Dict[str, Callable[..., ErrorModel]] = {
        'coherent': sample_coherent_model,
        'stochastic': sample_stochastic_model,
        'weight1': sample_weight1_model,
    }

    @classmethod
    def create(cls, family: str, g: ConnectivityGraph, seed: int, **kwargs) -> ErrorModel:
        family = family.lower()
        if family not in cls._model_registry:
            available = ', '.join(cls._model_registry.keys())
            raise QcapValidationError(f"Unsupported error model family: {family}. Available: {available}")
        model = cls._model_registry[family](g, rng=np.random.default_rng(seed), **kwargs)
        logger.info(f"Sampled {family} error model on {g.name} with {len(model.gates)} gate entries (seed {seed})")
        return model

    @classmethod
    def register_model(cls, name: str, sampler: Callable[..., ErrorModel]):
        cls._model_registry[name.lower()] = sampler
        logger.info(f"Registered new error model family: {name}")

    @classmethod
    def list_models(cls) -> List[str]:
        return list(cls._model_registry.keys())


# Propagation and accumulation

@dataclass(frozen=True)
class PropagationTables:
    """
    Row i (0-based, one per layer) column j: the end-of-circuit generator that
    tracked generator j becomes when it occurs after layer i, stored as an
    index into ``keys``, with its sign (always +1 for S columns).
    """
    kinds: Tuple[str, ...]
    keys: Tuple[ErrorGenerator, ...]
    index: np.ndarray
    sign: np.ndarray

    @property
    def depth(self) -> int:
        return self.index.shape[0]

    @property
    def k(self) -> int:
        return self.index.shape[1]

    @property
    def perm(self) -> List[List[ErrorGenerator]]:
        return [[self.keys[idx] for idx in row] for row in self.index]

    def to_row(self) -> dict:
        return {
            'perm_keys': [key.full_label for key in self.keys],
            'perm': self.index.tolist(),
            'sign': self.sign.tolist(),
        }

    @classmethod
    def from_row(cls, kinds: Sequence[str], perm_keys: Optional[Sequence[str]], perm, sign, n: int) -> 'PropagationTables':
        """
        Tables from indices into ``perm_keys``, or, without ``perm_keys``, from
        ``perm`` holding the "kind:pauli-string" labels themselves.
        """
        if perm_keys is None:
            if not all(isinstance(text, str) for row in perm for text in row):
                raise QcapValidationError("perm must hold generator labels when perm_keys is absent")
            parsed = {text: ErrorGenerator.parse(text, n) for text in {text for row in perm for text in row}}
            ids: Dict[ErrorGenerator, int] = {}
            perm = [[ids.setdefault(parsed[text], len(ids)) for text in row] for row in perm]
            return cls(tuple(kinds), tuple(ids), np.asarray(perm, dtype=np.int32).reshape(len(perm), len(kinds)),
                       np.asarray(sign, dtype=np.int8).reshape(len(perm), len(kinds)))
        if not all(isinstance(idx, int) for row in perm for idx in row):
            raise QcapValidationError("perm must hold indices into perm_keys")
        if any(not 0 <= idx < len(perm_keys) for row in perm for idx in row):
            raise QcapValidationError("perm index outside perm_keys")
        keys = tuple(ErrorGenerator.parse(text, n) for text in perm_keys)
        index = np.asarray(perm, dtype=np.int32).reshape(len(perm), len(kinds))
        signs = np.asarray(sign, dtype=np.int8).reshape(index.shape)
        return cls(tuple(kinds), keys, index, signs)


def compute_propagation(c: Circuit, ts: TrackedErrorSet) -> PropagationTables:
    """Pull every tracked generator, after every layer, to the end of ``c`` (back to front)"""
    if ts.graph.n != c.n:
        raise DimensionMismatch(f"Circuit {c.id} has {c.n} qubits, tracked set has {ts.graph.n}")
    d, k = c.depth, ts.k
    index = np.empty((d, k), dtype=np.int32)
    sign = np.ones((d, k), dtype=np.int8)
    key_ids: Dict[Tuple[str, int, int], int] = {}
    keys: List[ErrorGenerator] = []

    after = CliffordTableau.identity(c.n)
    for i in range(d - 1, -1, -1):
        if i < d - 1:
            after = compose(after, tableau_of_layer(c.layers[i + 1], c.n))
        for j, gen in enumerate(ts.generators):
            pulled = conjugate(after, gen.pauli)
            key = (gen.kind, pulled.x, pulled.z)
            idx = key_ids.get(key)
            if idx is None:
                idx = key_ids[key] = len(keys)
                keys.append(ErrorGenerator(gen.kind, pulled.unsigned()))
            index[i, j] = idx
            if gen.kind == 'H':
                sign[i, j] = pulled.sign
    return PropagationTables(ts.kinds, tuple(keys), index, sign)


@dataclass
class EndErrorVector:
    """Accumulated end-of-circuit rates keyed by generator"""
    rates: Dict[ErrorGenerator, float] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.rates)

    def __getitem__(self, gen: ErrorGenerator) -> float:
        return self.rates[gen]

    def __contains__(self, gen: ErrorGenerator) -> bool:
        return gen in self.rates

    def items(self):
        return self.rates.items()

    def has_negative_stochastic(self) -> bool:
        return any(gen.kind == 'S' and rate < 0 for gen, rate in self.rates.items())

    def arrays(self) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(values, is_hamiltonian, contains_xy) in insertion order"""
        gens = list(self.rates)
        values = np.fromiter((self.rates[g] for g in gens), dtype=float, count=len(gens))
        is_h = np.fromiter((g.kind == 'H' for g in gens), dtype=bool, count=len(gens))
        xy = np.fromiter((g.pauli.contains_xy() for g in gens), dtype=bool, count=len(gens))
        return values, is_h, xy


def accumulate(E: np.ndarray, tables: PropagationTables,
               m: Optional[Mapping[ErrorGenerator, float]] = None) -> EndErrorVector:
    """
    First-order combination of per-layer rates: v[perm[i][j]] += sign[i][j] * E[i][j],
    then measurement rates added verbatim. Generators only reached through zero
    rates are left out.
    """
    E = np.asarray(E, dtype=float)
    if E.shape != tables.index.shape:
        raise DimensionMismatch(f"Rate matrix shape {E.shape} does not match tables {tables.index.shape}")
    flat_index = tables.index.ravel()
    values = np.bincount(flat_index, weights=(tables.sign * E).ravel(), minlength=len(tables.keys))
    touched = np.bincount(flat_index, weights=(E != 0).ravel().astype(float), minlength=len(tables.keys)) > 0
    rates = {tables.keys[idx]: float(values[idx]) for idx in np.flatnonzero(touched)}
    for gen, rate in (m or {}).items():
        rates[gen] = rates.get(gen, 0.0) + float(rate)
    return EndErrorVector(rates)


def capability_from(values: np.ndarray, is_h: np.ndarray, mask: np.ndarray) -> float:
    """1 - sum over masked keys of (S value) or (H value)^2"""
    terms = np.where(is_h, values * values, values)
    return float(1.0 - np.sum(terms[mask]))


def fidelity_from(v: EndErrorVector) -> float:
    values, is_h, _ = v.arrays()
    return capability_from(values, is_h, np.ones_like(is_h))


def pst_from(v: EndErrorVector) -> float:
    values, is_h, xy = v.arrays()
    return capability_from(values, is_h, xy)


def layer_rate_matrix(c: Circuit, model: ErrorModel, ts: TrackedErrorSet) -> np.ndarray:
    """E(c): row i is the sum of the error vectors of the gates in layer i"""
    E = np.zeros((c.depth, ts.k))
    columns = ts.column_of
    for i, layer in enumerate(c.layers):
        for gate in layer.gates:
            for gen, rate in model.error_vector(gate).items():
                j = columns.get(gen)
                if j is None:
                    raise QcapValidationError(f"Model generator {gen.label} of {gate_key(gate)} is not tracked")
                E[i, j] += rate
    return E
