import numpy as np
import pytest

from qcap.circuits import GraphFactory, sample_layer
from qcap.exceptions import DimensionMismatch, OverlappingGates, QcapValidationError, UnknownGate
from qcap.pauli import (
    GATE_IMAGES,
    CliffordTableau,
    SignedPauli,
    compose,
    conjugate,
    contains_xy,
    pauli_weight,
    tableau_of_layer,
)
from tests.oracles import all_paulis, dense_conjugate, layer_unitary


def _random_layer(n: int, rng: np.random.Generator):
    g = GraphFactory.create(f"line:{n}")
    return sample_layer(g, range(n), float(rng.uniform(0, 2 / 3)), rng)


def _random_pauli(n: int, rng: np.random.Generator) -> SignedPauli:
    return SignedPauli(n, int(rng.integers(1 << n)), int(rng.integers(1 << n)), int(rng.choice([1, -1])))


def test_weight():
    assert pauli_weight(SignedPauli.identity(4)) == 0
    assert pauli_weight(SignedPauli.single(4, 0, 'X')) == 1
    assert pauli_weight(SignedPauli.from_letters(4, (1, 3), 'YZ')) == 2


def test_contains_xy():
    assert not contains_xy(SignedPauli.from_label('ZZI'))
    assert contains_xy(SignedPauli.from_label('IYI'))
    assert not contains_xy(SignedPauli.identity(3))


def test_label_round_trip():
    p = SignedPauli.from_label('-XIZY')
    assert p.sign == -1
    assert p.letters == 'XIZY'
    assert p.label == '-XIZY'
    assert p.support == (0, 2, 3)
    with pytest.raises(QcapValidationError):
        SignedPauli.from_label('XQ')


def test_to_matrix_matches_kron():
    X = np.array([[0, 1], [1, 0]])
    Z = np.diag([1, -1])
    assert np.allclose(SignedPauli.from_label('-XZ').to_matrix(), -np.kron(X, Z))


def test_commutes():
    assert not SignedPauli.from_label('X').commutes(SignedPauli.from_label('Z'))
    assert SignedPauli.from_label('XX').commutes(SignedPauli.from_label('ZZ'))
    with pytest.raises(DimensionMismatch):
        SignedPauli.from_label('X').commutes(SignedPauli.from_label('XX'))


def test_conjugate_identity_tableau():
    t = CliffordTableau.identity(3)
    for p in all_paulis(3):
        assert conjugate(t, p) == p


def test_conjugate_xpi_flips_z():
    t = tableau_of_layer([('Xpi', (0,))], 1)
    assert conjugate(t, SignedPauli.from_label('+Z')) == SignedPauli.from_label('-Z')


def test_conjugate_cnot_spreads_x():
    t = tableau_of_layer([('CNOT', (0, 1))], 2)
    assert conjugate(t, SignedPauli.from_label('+XI')) == SignedPauli.from_label('+XX')


@pytest.mark.parametrize('label', sorted(GATE_IMAGES))
def test_gate_images_match_dense_conjugation(label):
    qubits = (0, 1) if label == 'CNOT' else (0,)
    n = len(qubits)
    t = tableau_of_layer([(label, qubits)], n)
    U = layer_unitary([(label, qubits)], n)
    for p in all_paulis(n):
        assert conjugate(t, p) == dense_conjugate(U, p), f"{label} on {p.label}"


def test_compose_identity_is_neutral():
    t = tableau_of_layer([('Ypi2', (1,)), ('CNOT', (2, 0))], 3)
    identity = CliffordTableau.identity(3)
    assert compose(identity, t) == t
    assert compose(t, identity) == t


def test_half_turn_twice_is_full_turn():
    half = tableau_of_layer([('Xpi2', (0,))], 1)
    assert compose(half, half) == tableau_of_layer([('Xpi', (0,))], 1)


def test_compose_with_inverse_layer_is_identity(rng):
    for _ in range(20):
        layer = _random_layer(4, rng)
        t = tableau_of_layer(layer, 4)
        assert compose(tableau_of_layer(layer.inverse(), 4), t).is_identity()


def test_empty_layer_is_identity():
    assert tableau_of_layer([], 3).is_identity()


def test_zpi_layer():
    t = tableau_of_layer([('Zpi', (0,))], 2)
    assert t.x_images[0] == SignedPauli.from_label('-XI')
    assert t.z_images[0] == SignedPauli.from_label('+ZI')
    assert t.x_images[1] == SignedPauli.from_label('+IX')


def test_mixed_layer_matches_dense_oracle():
    gates = [('CNOT', (0, 1)), ('Ypi2', (2,))]
    t = tableau_of_layer(gates, 3)
    U = layer_unitary(gates, 3)
    for q in range(3):
        assert t.x_images[q] == dense_conjugate(U, SignedPauli.single(3, q, 'X'))
        assert t.z_images[q] == dense_conjugate(U, SignedPauli.single(3, q, 'Z'))


def test_compose_is_conjugation_homomorphism(rng):
    for n in (1, 2, 3, 4):
        for _ in range(10):
            a = tableau_of_layer(_random_layer(n, rng), n)
            b = tableau_of_layer(_random_layer(n, rng), n)
            p = _random_pauli(n, rng)
            assert conjugate(compose(a, b), p) == conjugate(a, conjugate(b, p))


def test_compose_is_associative(rng):
    a, b, c = (tableau_of_layer(_random_layer(3, rng), 3) for _ in range(3))
    assert compose(compose(a, b), c) == compose(a, compose(b, c))


def test_conjugation_preserves_weight_class_and_sign_involution(rng):
    t = tableau_of_layer(_random_layer(4, rng), 4)
    for _ in range(30):
        p = _random_pauli(4, rng)
        image = conjugate(t, p)
        assert image.is_identity() == p.is_identity()
        assert conjugate(t, -p) == -image


def test_layer_validation():
    with pytest.raises(OverlappingGates):
        tableau_of_layer([('Xpi', (0,)), ('CNOT', (0, 1))], 2)
    with pytest.raises(UnknownGate):
        tableau_of_layer([('H', (0,))], 1)
    with pytest.raises(QcapValidationError):
        tableau_of_layer([('Xpi', (3,))], 2)


def test_dimension_mismatch():
    with pytest.raises(DimensionMismatch):
        conjugate(CliffordTableau.identity(2), SignedPauli.identity(3))
    with pytest.raises(DimensionMismatch):
        compose(CliffordTableau.identity(2), CliffordTableau.identity(3))
