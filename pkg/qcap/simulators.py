"""
Ground-truth simulators for noisy Clifford circuits.

The exact simulator works with Pauli transfer matrices in the normalized Pauli
basis {P / sqrt(2^w)} over the circuit's active qubits: ideal layers are signed
permutations read off the layer tableau, error channels are exp(sum rate * G)
of dense generator matrices. It is capped at a few qubits. The first-order
simulator reuses the propagation head and scales to hundreds of qubits.
"""

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from functools import lru_cache
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.linalg import expm

from qcap.base_logging import Logger, Progress
from qcap.circuits import Circuit, Layer, substream, target_bitstring
from qcap.config import settings
from qcap.error_generators import (
    ErrorGenerator,
    ErrorModel,
    TrackedErrorSet,
    accumulate,
    compute_propagation,
    fidelity_from,
    layer_rate_matrix,
    pst_from,
)
from qcap.exceptions import NumericalError, QcapValidationError
from qcap.models import SimulationRow
from qcap.pauli import Gate, SignedPauli, conjugate, tableau_of_layer

logger = Logger("qcap.simulators")

METRICS = ('fidelity', 'pst')
METHODS = ('exact', 'first_order')

_BASIS_LETTERS = 'IXYZ'
_LETTER_CODE = {letter: code for code, letter in enumerate(_BASIS_LETTERS)}


def _check_cap(n: int):
    if n > settings.EXACT_QUBIT_CAP:
        raise QcapValidationError(
            f"Exact simulation is capped at {settings.EXACT_QUBIT_CAP} qubits, got {n}; "
            f"use the first-order method or raise QCAP_EXACT_QUBIT_CAP"
        )


@lru_cache(maxsize=None)
def pauli_basis(n: int) -> Tuple[SignedPauli, ...]:
    """All 4^n Paulis; index digits (base 4, qubit 0 most significant) are I, X, Y, Z"""
    basis = []
    for b in range(4 ** n):
        letters = ''.join(_BASIS_LETTERS[(b >> 2 * (n - 1 - t)) & 3] for t in range(n))
        basis.append(SignedPauli.from_letters(n, range(n), letters))
    return tuple(basis)


def basis_index(p: SignedPauli) -> int:
    index = 0
    for t in range(p.n):
        index = 4 * index + _LETTER_CODE[p.letter(t)]
    return index


@lru_cache(maxsize=None)
def _basis_matrices(n: int) -> np.ndarray:
    return np.stack([p.to_matrix() for p in pauli_basis(n)]) / math.sqrt(2 ** n)


def generator_ptm(g: ErrorGenerator, n: int) -> np.ndarray:
    """
    PTM of an elementary generator (not a channel): H_P is rho -> -i[P, rho],
    S_P is rho -> P rho P - rho. Built from dense matrices.
    """
    _check_cap(n)
    if g.pauli.n != n:
        raise QcapValidationError(f"Generator {g.label} is not on {n} qubits")
    basis = _basis_matrices(n)
    P = g.pauli.to_matrix()
    if g.kind == 'H':
        images = -1j * (P @ basis - basis @ P)
    else:
        images = P @ basis @ P - basis
    # PTM[a, b] = Tr(B_a L(B_b)), basis elements are Hermitian
    return np.einsum('aij,bji->ab', basis, images).real


def ideal_layer_ptm(layer, n: int) -> np.ndarray:
    """Signed permutation PTM of a Clifford layer"""
    _check_cap(n)
    t = tableau_of_layer(layer, n)
    ptm = np.zeros((4 ** n, 4 ** n))
    for b, p in enumerate(pauli_basis(n)):
        image = conjugate(t, p)
        ptm[basis_index(image), b] = image.sign
    return ptm


class ExactSimulator:
    """
    PTM simulator for one error model restricted to a fixed set of device
    qubits. Generator and layer PTMs are cached per instance.
    """

    def __init__(self, model: ErrorModel, qubits: Sequence[int]):
        self.qubits = tuple(qubits)
        _check_cap(len(self.qubits))
        self.model = model
        self.w = len(self.qubits)
        self._local = {q: t for t, q in enumerate(self.qubits)}
        self._generators: Dict[ErrorGenerator, np.ndarray] = {}
        self._layers: Dict[Tuple[Gate, ...], np.ndarray] = {}
        self._ideal: Dict[Tuple[Gate, ...], np.ndarray] = {}

    def localize(self, pauli: SignedPauli) -> Optional[SignedPauli]:
        """``pauli`` on the simulated qubits, or None when it acts only elsewhere"""
        support = pauli.support
        inside = [q for q in support if q in self._local]
        if not inside:
            return None
        if len(inside) != len(support):
            raise QcapValidationError(f"Error {pauli.label} straddles the simulated qubits {self.qubits}")
        return SignedPauli.from_letters(self.w, [self._local[q] for q in support],
                                        ''.join(pauli.letter(q) for q in support))

    def _local_gates(self, layer: Layer) -> List[Gate]:
        try:
            return [Gate(gate.label, tuple(self._local[q] for q in gate.qubits)) for gate in layer.gates]
        except KeyError as e:
            raise QcapValidationError(f"Layer acts on qubit {e} outside the simulated qubits {self.qubits}")

    def generator_sum(self, vector: Dict[ErrorGenerator, float]) -> np.ndarray:
        total = np.zeros((4 ** self.w, 4 ** self.w))
        for gen, rate in vector.items():
            if rate == 0:
                continue
            local = self.localize(gen.pauli)
            if local is None:
                continue
            key = ErrorGenerator(gen.kind, local)
            if key not in self._generators:
                self._generators[key] = generator_ptm(key, self.w)
            total += rate * self._generators[key]
        return total

    def ideal_layer_ptm(self, layer: Layer) -> np.ndarray:
        if layer.gates not in self._ideal:
            self._ideal[layer.gates] = ideal_layer_ptm(self._local_gates(layer), self.w)
        return self._ideal[layer.gates]

    def noisy_layer_ptm(self, layer: Layer) -> np.ndarray:
        key = layer.gates
        if key not in self._layers:
            generator = np.zeros((4 ** self.w, 4 ** self.w))
            for gate in layer.gates:
                generator += self.generator_sum(self.model.error_vector(gate))
            ideal = self.ideal_layer_ptm(layer)
            self._layers[key] = expm(generator) @ ideal if generator.any() else ideal
        return self._layers[key]

    def terminal_map(self) -> Optional[np.ndarray]:
        generator = self.generator_sum(self.model.measurement_vector())
        return expm(generator) if generator.any() else None

    def process_fidelity(self, c: Circuit) -> float:
        dim = 4 ** self.w
        noisy = np.eye(dim)
        ideal = np.eye(dim)
        for layer in c.layers:
            noisy = self.noisy_layer_ptm(layer) @ noisy
            ideal = self.ideal_layer_ptm(layer) @ ideal
        return _checked_probability(np.trace(noisy @ ideal.T) / dim, c.id)

    def success_probability(self, c: Circuit, terminal: bool = True) -> float:
        bits = target_bitstring(c)
        basis = pauli_basis(self.w)
        norm = 2.0 ** (-self.w / 2)
        z_type = np.array([p.x == 0 for p in basis])
        state = np.where(z_type, norm, 0.0)
        for layer in c.layers:
            state = self.noisy_layer_ptm(layer) @ state
        if terminal:
            final = self.terminal_map()
            if final is not None:
                state = final @ state
        target_mask = sum(1 << t for t, bit in enumerate(bits) if bit == '1')
        parity = np.array([(-1) ** (p.z & target_mask).bit_count() for p in basis], dtype=float)
        projector = np.where(z_type, norm * parity, 0.0)
        return _checked_probability(float(projector @ state), c.id)


def _checked_probability(value: float, circuit_id: str) -> float:
    value = float(np.real(value))
    if not np.isfinite(value) or value < -1e-9 or value > 1 + 1e-9:
        raise NumericalError(f"Simulation of {circuit_id} produced {value}, outside [0, 1]")
    return min(1.0, max(0.0, value))


def noisy_layer_ptm(layer: Layer, model: ErrorModel, n: int) -> np.ndarray:
    """exp(sum of the layer's gate error generators) applied after the ideal layer"""
    return ExactSimulator(model, range(n)).noisy_layer_ptm(layer)


def exact_fidelity(c: Circuit, model: ErrorModel) -> float:
    return ExactSimulator(model, c.active_qubits).process_fidelity(c)


def exact_pst(c: Circuit, model: ErrorModel, terminal: bool = True) -> float:
    return ExactSimulator(model, c.active_qubits).success_probability(c, terminal)


def first_order_fidelity(c: Circuit, model: ErrorModel, ts: TrackedErrorSet) -> float:
    E = layer_rate_matrix(c, model, ts)
    return fidelity_from(accumulate(E, compute_propagation(c, ts)))


def first_order_pst(c: Circuit, model: ErrorModel, ts: TrackedErrorSet) -> float:
    E = layer_rate_matrix(c, model, ts)
    return pst_from(accumulate(E, compute_propagation(c, ts), model.measurement_vector()))


def sample_shots(probability: float, shots: int, rng: np.random.Generator) -> Tuple[int, int]:
    """(shots, successes) with successes ~ Binomial(shots, probability)"""
    if shots < 1:
        raise QcapValidationError(f"Shot count must be positive, got {shots}")
    return shots, int(rng.binomial(shots, min(1.0, max(0.0, probability))))


@dataclass(frozen=True)
class SimulationResult:
    id: str
    metric: str
    value: float
    method: str
    shots: Optional[Tuple[int, int]] = None

    def to_row(self) -> dict:
        return SimulationRow(id=self.id, metric=self.metric, value=self.value,
                             method=self.method, shots=self.shots).model_dump()


def _simulate_chunk(circuits: List[Circuit], model: ErrorModel, metric: str, method: str,
                    ts: Optional[TrackedErrorSet]) -> List[float]:
    simulators: Dict[Tuple[int, ...], ExactSimulator] = {}
    values = []
    for c in circuits:
        if method == 'first_order':
            value = first_order_fidelity(c, model, ts) if metric == 'fidelity' else first_order_pst(c, model, ts)
        else:
            sim = simulators.get(c.active_qubits)
            if sim is None:
                sim = simulators[c.active_qubits] = ExactSimulator(model, c.active_qubits)
            value = sim.process_fidelity(c) if metric == 'fidelity' else sim.success_probability(c)
        values.append(value)
    return values


def simulate_circuits(circuits: Sequence[Circuit], model: ErrorModel, metric: str = 'fidelity',
                      method: str = 'exact', ts: TrackedErrorSet = None, shots: int = None,
                      seed: int = 0, max_workers: int = None) -> List[SimulationResult]:
    """
    Simulate a batch of circuits, fanning out over processes in fixed-size
    chunks. Results are in input order regardless of worker count.
    """
    if metric not in METRICS:
        raise QcapValidationError(f"Unknown metric {metric}. Available: {', '.join(METRICS)}")
    if method not in METHODS:
        raise QcapValidationError(f"Unknown method {method}. Available: {', '.join(METHODS)}")
    if method == 'first_order' and ts is None:
        raise QcapValidationError("The first-order method needs a tracked error set")
    if shots is not None and metric != 'pst':
        raise QcapValidationError("Shot sampling applies to PST only")

    max_workers = max_workers or settings.MAX_WORKERS
    circuits = list(circuits)
    chunk_size = max(1, min(50, math.ceil(len(circuits) / max(1, 4 * max_workers))))
    chunks = [circuits[i:i + chunk_size] for i in range(0, len(circuits), chunk_size)]
    progress = Progress(logger, len(circuits), f"Simulation ({method} {metric})", unit='circuits')

    values: List[float] = []
    try:
        if max_workers > 1 and len(chunks) > 1:
            with ProcessPoolExecutor(max_workers=max_workers) as executor:
                futures = [executor.submit(_simulate_chunk, chunk, model, metric, method, ts) for chunk in chunks]
                for future in futures:
                    chunk_values = future.result()
                    values.extend(chunk_values)
                    progress.step(len(chunk_values))
        else:
            for chunk in chunks:
                values.extend(_simulate_chunk(chunk, model, metric, method, ts))
                progress.step(len(chunk))
    except Exception as e:
        logger.error(f"Simulation failed: {e}")
        raise

    results = []
    for i, (c, value) in enumerate(zip(circuits, values)):
        counts = sample_shots(value, shots, substream(seed, 4, i)) if shots else None
        results.append(SimulationResult(c.id, metric, value, method, counts))
    logger.info(f"Simulated {len(results)} circuits in {progress.elapsed():.1f} seconds")
    return results
