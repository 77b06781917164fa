"""
Symplectic algebra for n-qubit Paulis and Clifford tableaus.

A Pauli is stored as two Python-int bitmasks (bit q of ``x``/``z`` is the X/Z
component on qubit q) and a real sign. Internally Y is treated as iXZ, so a
Hermitian Pauli with sign s equals ``s * i^|x&z| * X^x Z^z``; products are
carried out in that form with an explicit power of i and reduced back to a
real sign at the end.
"""

from dataclasses import dataclass
from typing import Iterable, NamedTuple, Tuple

import numpy as np

from qcap.exceptions import DimensionMismatch, NumericalError, OverlappingGates, QcapValidationError, UnknownGate

# (x, z) -> letter
_LETTER_OF = {(0, 0): 'I', (1, 0): 'X', (0, 1): 'Z', (1, 1): 'Y'}
_BITS_OF = {letter: bits for bits, letter in _LETTER_OF.items()}

PAULI_LETTERS = ('X', 'Y', 'Z')

_PAULI_MATRICES = {
    'I': np.eye(2, dtype=complex),
    'X': np.array([[0, 1], [1, 0]], dtype=complex),
    'Y': np.array([[0, -1j], [1j, 0]], dtype=complex),
    'Z': np.array([[1, 0], [0, -1]], dtype=complex),
}


@dataclass(frozen=True)
class SignedPauli:
    """Hermitian n-qubit Pauli operator with a +1/-1 sign"""
    n: int
    x: int
    z: int
    sign: int = 1

    def __post_init__(self):
        if self.n < 0:
            raise QcapValidationError(f"Qubit count must be nonnegative, got {self.n}")
        limit = 1 << self.n
        if not (0 <= self.x < limit and 0 <= self.z < limit):
            raise QcapValidationError(f"Pauli masks exceed {self.n} qubits")
        if self.sign not in (1, -1):
            raise QcapValidationError(f"Pauli sign must be +1 or -1, got {self.sign}")

    @classmethod
    def identity(cls, n: int) -> 'SignedPauli':
        return cls(n, 0, 0, 1)

    @classmethod
    def single(cls, n: int, qubit: int, letter: str, sign: int = 1) -> 'SignedPauli':
        """Pauli with ``letter`` on ``qubit`` and identity elsewhere"""
        xb, zb = _BITS_OF[letter]
        return cls(n, xb << qubit, zb << qubit, sign)

    @classmethod
    def from_label(cls, label: str) -> 'SignedPauli':
        """
        Parse textual notation such as "+XIZY" or "-ZZ"; the letter at
        position q acts on qubit q. A missing sign means +1.
        """
        sign = 1
        if label[:1] in '+-':
            sign = -1 if label[0] == '-' else 1
            label = label[1:]
        x = z = 0
        for q, letter in enumerate(label.upper()):
            if letter not in _BITS_OF:
                raise QcapValidationError(f"Invalid Pauli letter '{letter}' in '{label}'")
            xb, zb = _BITS_OF[letter]
            x |= xb << q
            z |= zb << q
        return cls(len(label), x, z, sign)

    @classmethod
    def from_letters(cls, n: int, qubits: Iterable[int], letters: str, sign: int = 1) -> 'SignedPauli':
        """Place ``letters[t]`` on ``qubits[t]`` of an n-qubit register"""
        x = z = 0
        for q, letter in zip(qubits, letters):
            xb, zb = _BITS_OF[letter]
            x |= xb << q
            z |= zb << q
        return cls(n, x, z, sign)

    def letter(self, qubit: int) -> str:
        return _LETTER_OF[((self.x >> qubit) & 1, (self.z >> qubit) & 1)]

    @property
    def letters(self) -> str:
        return ''.join(self.letter(q) for q in range(self.n))

    @property
    def label(self) -> str:
        return ('+' if self.sign > 0 else '-') + self.letters

    def __str__(self) -> str:
        return self.label

    @property
    def support(self) -> Tuple[int, ...]:
        return _bits(self.x | self.z)

    def weight(self) -> int:
        return (self.x | self.z).bit_count()

    def contains_xy(self) -> bool:
        return self.x != 0

    def is_identity(self) -> bool:
        return self.x == 0 and self.z == 0

    def unsigned(self) -> 'SignedPauli':
        return self if self.sign == 1 else SignedPauli(self.n, self.x, self.z, 1)

    def __neg__(self) -> 'SignedPauli':
        return SignedPauli(self.n, self.x, self.z, -self.sign)

    def commutes(self, other: 'SignedPauli') -> bool:
        _check_n(self.n, other.n)
        return ((self.x & other.z).bit_count() + (self.z & other.x).bit_count()) % 2 == 0

    def to_matrix(self) -> np.ndarray:
        """Dense 2^n x 2^n matrix; qubit 0 is the leftmost tensor factor"""
        out = np.array([[self.sign]], dtype=complex)
        for q in range(self.n):
            out = np.kron(out, _PAULI_MATRICES[self.letter(q)])
        return out


def pauli_weight(p: SignedPauli) -> int:
    return p.weight()


def contains_xy(p: SignedPauli) -> bool:
    return p.contains_xy()


def _bits(mask: int) -> Tuple[int, ...]:
    out = []
    while mask:
        low = mask & -mask
        out.append(low.bit_length() - 1)
        mask ^= low
    return tuple(out)


def _check_n(a: int, b: int):
    if a != b:
        raise DimensionMismatch(f"Qubit count mismatch: {a} vs {b}")


@dataclass(frozen=True)
class CliffordTableau:
    """Images of every X_q and Z_q under conjugation by a Clifford unitary"""
    n: int
    x_images: Tuple[SignedPauli, ...]
    z_images: Tuple[SignedPauli, ...]

    @classmethod
    def identity(cls, n: int) -> 'CliffordTableau':
        return cls(
            n,
            tuple(SignedPauli(n, 1 << q, 0) for q in range(n)),
            tuple(SignedPauli(n, 0, 1 << q) for q in range(n)),
        )

    def is_identity(self) -> bool:
        return self == CliffordTableau.identity(self.n)


def conjugate(t: CliffordTableau, p: SignedPauli) -> SignedPauli:
    """Return U p U^dagger where U is the unitary described by ``t``"""
    _check_n(t.n, p.n)
    # Operator tracked as i^phase * X^x Z^z
    phase = (2 if p.sign < 0 else 0) + (p.x & p.z).bit_count()
    x = z = 0
    for q in _bits(p.x):
        phase, x, z = _multiply(phase, x, z, t.x_images[q])
    for q in _bits(p.z):
        phase, x, z = _multiply(phase, x, z, t.z_images[q])
    residual = (phase - (x & z).bit_count()) % 4
    if residual % 2:
        raise NumericalError(f"Conjugation produced a non-Hermitian Pauli from {p.label}")
    return SignedPauli(p.n, x, z, 1 if residual == 0 else -1)


def _multiply(phase: int, x: int, z: int, image: SignedPauli) -> Tuple[int, int, int]:
    image_phase = (2 if image.sign < 0 else 0) + (image.x & image.z).bit_count()
    # Z^z X^x' = (-1)^|z & x'| X^x' Z^z
    phase += image_phase + 2 * (z & image.x).bit_count()
    return phase % 4, x ^ image.x, z ^ image.z


def compose(a: CliffordTableau, b: CliffordTableau) -> CliffordTableau:
    """Tableau of "apply b, then a" """
    _check_n(a.n, b.n)
    return CliffordTableau(
        a.n,
        tuple(conjugate(a, p) for p in b.x_images),
        tuple(conjugate(a, p) for p in b.z_images),
    )


class Gate(NamedTuple):
    label: str
    qubits: Tuple[int, ...]


# Local images (X_0, Z_0, X_1, Z_1, ...) of each supported gate, letters indexed by local qubit.
# P(theta) is exp(-i theta P / 2); CNOT's local qubits are (control, target).
GATE_IMAGES = {
    'Xpi2': ('+X', '-Y'),
    'X3pi2': ('+X', '+Y'),
    'Xpi': ('+X', '-Z'),
    'Ypi2': ('-Z', '+X'),
    'Y3pi2': ('+Z', '-X'),
    'Ypi': ('-X', '-Z'),
    'Zpi': ('-X', '+Z'),
    'CNOT': ('+XX', '+ZI', '+IX', '+ZZ'),
}

SINGLE_QUBIT_GATES = ('Xpi2', 'Ypi2', 'X3pi2', 'Y3pi2', 'Xpi', 'Ypi', 'Zpi')
PAULI_GATES = ('Xpi', 'Ypi', 'Zpi')
TWO_QUBIT_GATES = ('CNOT',)

INVERSE_GATES = {
    'Xpi2': 'X3pi2', 'X3pi2': 'Xpi2',
    'Ypi2': 'Y3pi2', 'Y3pi2': 'Ypi2',
    'Xpi': 'Xpi', 'Ypi': 'Ypi', 'Zpi': 'Zpi',
    'CNOT': 'CNOT',
}


def gate_arity(label: str) -> int:
    if label not in GATE_IMAGES:
        raise UnknownGate(f"Unknown gate label: {label}")
    return len(GATE_IMAGES[label]) // 2


def inverse_gate(gate: Gate) -> Gate:
    return Gate(INVERSE_GATES[gate.label], gate.qubits)


def tableau_of_layer(layer, n: int) -> CliffordTableau:
    """
    Tableau of one circuit layer. ``layer`` is a Layer or any iterable of
    (label, qubits) gates acting on disjoint qubits; untouched qubits are
    left as identity.
    """
    gates = getattr(layer, 'gates', layer)
    x_images = [SignedPauli(n, 1 << q, 0) for q in range(n)]
    z_images = [SignedPauli(n, 0, 1 << q) for q in range(n)]
    used = 0
    for label, qubits in gates:
        qubits = tuple(qubits)
        if gate_arity(label) != len(qubits):
            raise QcapValidationError(f"Gate {label} expects {gate_arity(label)} qubits, got {qubits}")
        mask = 0
        for q in qubits:
            if not 0 <= q < n:
                raise QcapValidationError(f"Gate {label} acts on qubit {q} outside a {n}-qubit device")
            mask |= 1 << q
        if mask & used or mask.bit_count() != len(qubits):
            raise OverlappingGates(f"Gate {label}{qubits} overlaps another gate in the layer")
        used |= mask
        images = GATE_IMAGES[label]
        for t, q in enumerate(qubits):
            x_images[q] = _embed(images[2 * t], qubits, n)
            z_images[q] = _embed(images[2 * t + 1], qubits, n)
    return CliffordTableau(n, tuple(x_images), tuple(z_images))


def _embed(local_label: str, qubits: Tuple[int, ...], n: int) -> SignedPauli:
    sign = -1 if local_label[0] == '-' else 1
    return SignedPauli.from_letters(n, qubits, local_label[1:], sign)
