"""Dense-matrix reference implementations used as test oracles"""

from itertools import product

import numpy as np
from scipy.linalg import expm

from qcap.pauli import SignedPauli

I2 = np.eye(2, dtype=complex)
X = np.array([[0, 1], [1, 0]], dtype=complex)
Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
Z = np.array([[1, 0], [0, -1]], dtype=complex)
P0 = np.array([[1, 0], [0, 0]], dtype=complex)
P1 = np.array([[0, 0], [0, 1]], dtype=complex)


def rotation(P: np.ndarray, theta: float) -> np.ndarray:
    """exp(-i theta P / 2)"""
    return np.cos(theta / 2) * I2 - 1j * np.sin(theta / 2) * P


GATE_MATRICES = {
    'Xpi2': rotation(X, np.pi / 2),
    'Ypi2': rotation(Y, np.pi / 2),
    'X3pi2': rotation(X, 3 * np.pi / 2),
    'Y3pi2': rotation(Y, 3 * np.pi / 2),
    'Xpi': rotation(X, np.pi),
    'Ypi': rotation(Y, np.pi),
    'Zpi': rotation(Z, np.pi),
}


def embed(ops: dict, n: int) -> np.ndarray:
    """Tensor product with ops[q] on qubit q (qubit 0 leftmost), identity elsewhere"""
    out = np.array([[1]], dtype=complex)
    for q in range(n):
        out = np.kron(out, ops.get(q, I2))
    return out


def gate_unitary(label: str, qubits, n: int) -> np.ndarray:
    if label == 'CNOT':
        control, target = qubits
        return embed({control: P0}, n) + embed({control: P1, target: X}, n)
    return embed({qubits[0]: GATE_MATRICES[label]}, n)


def layer_unitary(gates, n: int) -> np.ndarray:
    U = np.eye(2 ** n, dtype=complex)
    for label, qubits in gates:
        U = gate_unitary(label, tuple(qubits), n) @ U
    return U


def circuit_unitary(layers, n: int) -> np.ndarray:
    U = np.eye(2 ** n, dtype=complex)
    for layer in layers:
        U = layer_unitary(getattr(layer, 'gates', layer), n) @ U
    return U


def all_paulis(n: int, include_identity: bool = False):
    for letters in product('IXYZ', repeat=n):
        if not include_identity and set(letters) == {'I'}:
            continue
        yield SignedPauli.from_label(''.join(letters))


def pauli_from_matrix(M: np.ndarray, n: int) -> SignedPauli:
    """The signed Pauli equal to M (raises if M is not +-Pauli)"""
    for p in all_paulis(n, include_identity=True):
        coefficient = np.trace(p.to_matrix() @ M) / 2 ** n
        if abs(abs(coefficient) - 1) < 1e-9:
            sign = 1 if coefficient.real > 0 else -1
            if abs(coefficient.imag) > 1e-9:
                raise AssertionError("conjugation produced a non-Hermitian Pauli")
            return SignedPauli(n, p.x, p.z, sign)
    raise AssertionError("matrix is not a signed Pauli")


def dense_conjugate(U: np.ndarray, p: SignedPauli) -> SignedPauli:
    return pauli_from_matrix(U @ p.to_matrix() @ U.conj().T, p.n)


def brute_force_head(circuit, ts, E: np.ndarray, metric: str = 'fidelity') -> float:
    """
    Materialize the full 2(4^n - 1) end-of-circuit rate vector by dense
    conjugation, then apply the fidelity (or PST) formula to every entry.
    """
    n = circuit.n
    paulis = list(all_paulis(n))
    column = {(kind, p.x, p.z): 2 * t + (kind == 'S') for t, p in enumerate(paulis) for kind in 'HS'}
    full = np.zeros(2 * len(paulis))
    for i in range(circuit.depth):
        U_after = circuit_unitary(circuit.layers[i + 1:], n)
        for j, gen in enumerate(ts):
            pulled = dense_conjugate(U_after, gen.pauli)
            sign = pulled.sign if gen.kind == 'H' else 1
            full[column[(gen.kind, pulled.x, pulled.z)]] += sign * E[i, j]
    total = 0.0
    for t, p in enumerate(paulis):
        if metric == 'pst' and not p.contains_xy():
            continue
        total += full[2 * t] ** 2 + full[2 * t + 1]
    return 1.0 - total


def superoperator(vector: dict, n: int, local_qubits=None) -> np.ndarray:
    """Row-major vec(rho) superoperator of sum rate * G over a generator -> rate map"""
    dim = 2 ** n
    L = np.zeros((dim * dim, dim * dim), dtype=complex)
    identity = np.eye(dim)
    for gen, rate in vector.items():
        P = gen.pauli.to_matrix() if local_qubits is None else local_qubits(gen.pauli).to_matrix()
        if gen.kind == 'H':
            L += rate * (-1j) * (np.kron(P, identity) - np.kron(identity, P.T))
        else:
            L += rate * (np.kron(P, P.T) - np.eye(dim * dim))
    return L


def density_matrix_pst(circuit, model, qubits) -> float:
    """Dense density-matrix evolution on ``qubits``, then the probability of the ideal outcome"""
    n = len(qubits)
    local = {q: t for t, q in enumerate(qubits)}

    def localize(p):
        support = p.support
        return SignedPauli.from_letters(n, [local[q] for q in support], ''.join(p.letter(q) for q in support))

    rho = np.zeros((2 ** n, 2 ** n), dtype=complex)
    rho[0, 0] = 1
    ideal = np.eye(2 ** n, dtype=complex)
    for layer in circuit.layers:
        gates = [(g.label, tuple(local[q] for q in g.qubits)) for g in layer.gates]
        U = layer_unitary(gates, n)
        ideal = U @ ideal
        rho = U @ rho @ U.conj().T
        vector = {}
        for gate in layer.gates:
            for gen, rate in model.error_vector(gate).items():
                if set(gen.support) <= set(qubits):
                    vector[gen] = vector.get(gen, 0.0) + rate
        if vector:
            channel = expm(superoperator(vector, n, localize))
            rho = (channel @ rho.reshape(-1)).reshape(rho.shape)
    outcome = int(np.argmax(np.abs(ideal[:, 0]) ** 2))
    return float(rho[outcome, outcome].real)


def density_matrix_fidelity(circuit, model, qubits) -> float:
    """Process fidelity Tr(S_ideal^dagger S_noisy) / d^2 from dense superoperators on ``qubits``"""
    n = len(qubits)
    local = {q: t for t, q in enumerate(qubits)}

    def localize(p):
        support = p.support
        return SignedPauli.from_letters(n, [local[q] for q in support], ''.join(p.letter(q) for q in support))

    dim = 2 ** n
    noisy = np.eye(dim * dim, dtype=complex)
    ideal = np.eye(dim * dim, dtype=complex)
    for layer in circuit.layers:
        U = layer_unitary([(g.label, tuple(local[q] for q in g.qubits)) for g in layer.gates], n)
        unitary = np.kron(U, U.conj())
        vector = {}
        for gate in layer.gates:
            for gen, rate in model.error_vector(gate).items():
                vector[gen] = vector.get(gen, 0.0) + rate
        noisy = expm(superoperator(vector, n, localize)) @ unitary @ noisy
        ideal = unitary @ ideal
    return float(np.trace(ideal.conj().T @ noisy).real / dim ** 2)
