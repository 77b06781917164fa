"""
One-hot circuit tensors.

I(c) has one fiber per (qubit, layer) over n_ch channels: the seven
single-qubit gates, then CNOT channels indexed by (role, neighbor slot) where
the slot is the partner's position in the qubit's ascending neighbor list.
Idle qubits and padding layers are all-zero fibers. M(c) holds the measured
mask and the target bitstring.
"""

import base64
from dataclasses import dataclass
from typing import Tuple

import numpy as np

from qcap.circuits import Circuit, ConnectivityGraph, Layer, target_bitstring
from qcap.exceptions import DimensionMismatch, QcapValidationError
from qcap.models import TensorRow
from qcap.pauli import SINGLE_QUBIT_GATES, Gate

CONTROL, TARGET = 0, 1


@dataclass(frozen=True)
class ChannelSpec:
    single_qubit_labels: Tuple[str, ...]
    max_degree: int

    @classmethod
    def for_graph(cls, g: ConnectivityGraph) -> 'ChannelSpec':
        return cls(SINGLE_QUBIT_GATES, g.max_degree)

    @property
    def n_ch(self) -> int:
        return len(self.single_qubit_labels) + 2 * self.max_degree

    def cnot_channel(self, role: int, slot: int) -> int:
        return len(self.single_qubit_labels) + role * self.max_degree + slot


@dataclass
class CircuitTensor:
    I: np.ndarray
    true_depth: int
    M: np.ndarray

    @property
    def n(self) -> int:
        return self.I.shape[0]

    @property
    def d_max(self) -> int:
        return self.I.shape[1]

    @property
    def n_ch(self) -> int:
        return self.I.shape[2]

    def to_row(self) -> dict:
        packed = np.packbits(self.I.astype(np.uint8).ravel())
        return {
            'I': base64.b64encode(packed.tobytes()).decode('ascii'),
            'n': self.n,
            'd_max': self.d_max,
            'n_ch': self.n_ch,
            'true_depth': self.true_depth,
            'M': self.M.astype(int).tolist(),
        }

    @classmethod
    def from_row(cls, row: TensorRow) -> 'CircuitTensor':
        shape = (row.n, row.d_max, row.n_ch)
        packed = np.frombuffer(base64.b64decode(row.I), dtype=np.uint8)
        bits = np.unpackbits(packed)[:int(np.prod(shape))]
        if bits.size != int(np.prod(shape)):
            raise DimensionMismatch(f"Packed tensor holds {bits.size} bits, expected {shape}")
        M = np.asarray(row.M, dtype=np.uint8)
        if M.shape != (2, row.n):
            raise DimensionMismatch(f"Measurement matrix has shape {M.shape}, expected (2, {row.n})")
        return cls(bits.reshape(shape), row.true_depth, M)

    def __eq__(self, other) -> bool:
        return (isinstance(other, CircuitTensor) and self.true_depth == other.true_depth
                and np.array_equal(self.I, other.I) and np.array_equal(self.M, other.M))


def encode_circuit(c: Circuit, g: ConnectivityGraph, spec: ChannelSpec, d_max: int,
                   metric: str = 'fidelity') -> CircuitTensor:
    if c.depth > d_max:
        raise QcapValidationError(f"Circuit {c.id} has depth {c.depth} > d_max {d_max}")
    if spec.max_degree != g.max_degree:
        raise DimensionMismatch(f"Channel spec is for max degree {spec.max_degree}, graph has {g.max_degree}")
    I = np.zeros((g.n, d_max, spec.n_ch), dtype=np.uint8)
    for i, layer in enumerate(c.layers):
        for gate in layer.gates:
            if gate.label in spec.single_qubit_labels:
                I[gate.qubits[0], i, spec.single_qubit_labels.index(gate.label)] = 1
                continue
            control, target = gate.qubits
            if not g.has_edge(control, target):
                raise QcapValidationError(f"Circuit {c.id} layer {i}: CNOT{gate.qubits} is not on a graph edge")
            I[control, i, spec.cnot_channel(CONTROL, g.neighbors(control).index(target))] = 1
            I[target, i, spec.cnot_channel(TARGET, g.neighbors(target).index(control))] = 1
    return CircuitTensor(I, c.depth, encode_measurement(c, metric))


def encode_measurement(c: Circuit, metric: str = 'pst') -> np.ndarray:
    """Row 0 marks the measured (active) qubits; row 1 is b(c) for PST, zeros for fidelity"""
    M = np.zeros((2, c.n), dtype=np.uint8)
    M[0, list(c.active_qubits)] = 1
    if metric == 'pst':
        for q, bit in zip(c.active_qubits, target_bitstring(c)):
            M[1, q] = int(bit)
    return M


def decode_circuit(tensor: CircuitTensor, g: ConnectivityGraph, spec: ChannelSpec,
                   circuit_id: str = 'decoded', kind: str = 'iid') -> Circuit:
    """Inverse of encode_circuit"""
    single = len(spec.single_qubit_labels)
    layers = []
    for i in range(tensor.true_depth):
        gates = []
        for q in range(tensor.n):
            hot = np.flatnonzero(tensor.I[q, i])
            if hot.size == 0:
                continue
            channel = int(hot[0])
            if channel < single:
                gates.append(Gate(spec.single_qubit_labels[channel], (q,)))
            elif (channel - single) // spec.max_degree == CONTROL:
                partner = g.neighbors(q)[(channel - single) % spec.max_degree]
                gates.append(Gate('CNOT', (q, partner)))
        layers.append(Layer.of(gates))
    active = tuple(int(q) for q in np.flatnonzero(tensor.M[0]))
    return Circuit(circuit_id, g.n, g.name, active, tuple(layers), kind)
