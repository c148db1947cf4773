import json
import math
from functools import reduce

import numpy as np
import pytest

from qgp import qcircuit as qc
from qgp.errors import ContainsMeasurement, NoMeasurement, NonUnitary, TooWide, WidthMismatch

from conftest import random_unitary

I2 = np.eye(2)
Xm = np.array([[0, 1], [1, 0]], dtype=complex)
P0 = np.diag([1.0, 0.0])
P1 = np.diag([0.0, 1.0])


def embed(op: np.ndarray, q: int, n: int) -> np.ndarray:
    """Kronecker-product embedding of a 1-qubit operator (qubit 0 rightmost)."""
    return reduce(np.kron, [op if k == q else I2 for k in reversed(range(n))])


def cnot_matrix(c: int, t: int, n: int) -> np.ndarray:
    return embed(P0, c, n) + embed(P1, c, n) @ embed(Xm, t, n)


def kron_oracle(gates, n):
    """Independent unitary of a circuit built from 1-qubit gates and CNOTs."""
    U = np.eye(1 << n, dtype=complex)
    for g in gates:
        if g.kind == "cx":
            M = cnot_matrix(g.controls[0], g.qubits[0], n)
        else:
            M = embed(g.local_matrix(), g.qubits[0], n)
        U = M @ U
    return U


def random_circuit(rng, n, depth=20):
    c = qc.Circuit(n)
    for _ in range(depth):
        r = rng.integers(5 if n > 1 else 4)
        q = int(rng.integers(n))
        if r == 0:
            c.append(qc.H(q))
        elif r == 1:
            c.append(qc.RX(rng.uniform(-3, 3), q))
        elif r == 2:
            c.append(qc.RY(rng.uniform(-3, 3), q))
        elif r == 3:
            c.append(qc.RZ(rng.uniform(-3, 3), q))
        else:
            a, b = rng.choice(n, 2, replace=False)
            c.append(qc.CNOT(int(a), int(b)))
    return c


def random_state(rng, n):
    psi = rng.normal(size=1 << n) + 1j * rng.normal(size=1 << n)
    return psi / np.linalg.norm(psi)


def test_hadamard_on_zero():
    psi = qc.run(qc.Circuit(1, [qc.H(0)]))
    assert np.allclose(psi, [1 / math.sqrt(2), 1 / math.sqrt(2)])


def test_cnot_on_10():
    # |10>: qubit 1 set, qubit 0 clear -> basis index 2
    psi = qc.run(qc.Circuit(2, [qc.CNOT(1, 0)]), qc.basis_state(2, 2))
    assert np.allclose(psi, qc.basis_state(2, 3))


def test_random_circuits_match_kron_oracle(rng):
    for n in (1, 2, 3, 4):
        c = random_circuit(rng, n)
        U = qc.circuit_unitary(c)
        assert np.allclose(U, kron_oracle(c.gates, n), atol=1e-12)
        assert np.allclose(U.conj().T @ U, np.eye(1 << n), atol=1e-9)
        psi = random_state(rng, n)
        assert np.allclose(qc.run(c, psi), U @ psi, atol=1e-9)


def test_norm_preserved(rng):
    c = random_circuit(rng, 4, depth=200)
    assert abs(np.linalg.norm(qc.run(c, random_state(rng, 4))) ** 2 - 1) < 1e-10


def test_composition(rng):
    c1, c2 = random_circuit(rng, 3), random_circuit(rng, 3)
    both = qc.Circuit(3, list(c1.gates) + list(c2.gates))
    psi = random_state(rng, 3)
    assert np.allclose(qc.run(both, psi), qc.run(c2, qc.run(c1, psi)), atol=1e-12)


def test_unitary_block_qubit_order(rng):
    # a block on qubits (2, 0) of a 3-qubit register: local qubit 0 is global 2
    U = random_unitary(rng, 4)
    c = qc.Circuit(3, [qc.UnitaryBlock(U, [2, 0])])
    perm = np.zeros((8, 8))
    for i in range(8):
        b = [(i >> k) & 1 for k in range(3)]
        # global -> (q0 local = b2, q1 local = b0, spectator = b1)
        perm[(b[1] << 2) | (b[0] << 1) | b[2], i] = 1
    expected = perm.T @ np.kron(I2, U) @ perm
    assert np.allclose(qc.circuit_unitary(c), expected, atol=1e-12)


def test_controlled_block_matches_projector_form(rng):
    U = random_unitary(rng, 2)
    c = qc.Circuit(2, [qc.ControlledUnitaryBlock(U, 1, [0])])
    expected = np.kron(P0, I2) + np.kron(P1, U)
    assert np.allclose(qc.circuit_unitary(c), expected, atol=1e-12)


def test_circuit_unitary_examples():
    assert np.allclose(qc.circuit_unitary(qc.Circuit(1)), np.eye(2))
    assert np.allclose(qc.circuit_unitary(qc.Circuit(1, [qc.X(0)])), Xm)


def test_circuit_unitary_guards():
    with pytest.raises(TooWide):
        qc.circuit_unitary(qc.Circuit(13))
    with pytest.raises(ContainsMeasurement):
        qc.circuit_unitary(qc.Circuit(1, [qc.Measure(0, 0)]))


def test_width_and_unitarity_checks():
    with pytest.raises(WidthMismatch):
        qc.Circuit(2).append(qc.H(2))
    with pytest.raises(NonUnitary):
        qc.UnitaryBlock(np.array([[1, 1], [0, 1]]), [0])
    with pytest.raises(WidthMismatch):
        qc.run(qc.Circuit(2), qc.zero_state(3))


def test_sample_deterministic_outcome():
    c = qc.Circuit(1, [qc.X(0), qc.Measure(0, 0)])
    assert qc.sample(c, 100, seed=0) == {"1": 100}


def test_sample_binomial_and_seed():
    c = qc.Circuit(1, [qc.H(0), qc.Measure(0, 0)])
    for seed in (0, 1, 2):
        counts = qc.sample(c, 100_000, seed)
        assert abs(counts.get("1", 0) / 1e5 - 0.5) <= 0.01
    assert qc.sample(c, 1000, 7) == qc.sample(c, 1000, 7)


def test_sample_needs_measurement():
    with pytest.raises(NoMeasurement):
        qc.sample(qc.Circuit(1, [qc.H(0)]), 10, 0)


def test_sample_total_variation(rng):
    n = 3
    c = random_circuit(rng, n, depth=30)
    probs = np.abs(qc.run(c)) ** 2
    c.extend(qc.Measure(q, q) for q in range(n))
    shots = 20_000
    counts = qc.sample(c, shots, seed=3)
    emp = np.zeros(1 << n)
    for key, v in counts.items():
        emp[int(key, 2)] = v / shots
    assert 0.5 * np.abs(emp - probs).sum() < 5 / math.sqrt(shots)


def test_histogram_key_order():
    # clbit 0 is the rightmost character
    c = qc.Circuit(2, [qc.X(0), qc.Measure(0, 0), qc.Measure(1, 1)])
    assert qc.sample(c, 5, 0) == {"01": 5}


def test_controlled_power_examples(rng):
    Z = np.diag([1.0, -1.0]).astype(complex)
    assert np.allclose(qc.controlled_power(Z, 1, 1).matrix, np.eye(2))
    g = qc.controlled_power(qc.phase(math.pi / 4), 2, 1)
    assert np.allclose(g.matrix, qc.phase(math.pi))
    U = random_unitary(rng, 4)
    g = qc.controlled_power(U, 3, 2)
    assert np.allclose(g.matrix, np.linalg.matrix_power(U, 8), atol=1e-9)
    assert g.power == 8
    with pytest.raises(NonUnitary):
        qc.controlled_power(np.array([[2.0, 0], [0, 1]]), 1, 1)


def test_counts_stable_under_serialisation(rng):
    c = random_circuit(rng, 4, depth=40)
    c.append(qc.controlled_power(random_unitary(rng, 4), 2, 3, [0, 1]))
    back = qc.Circuit.from_json(c.to_json())
    assert back.depth == c.depth and back.two_qubit_count == c.two_qubit_count
    assert np.allclose(qc.circuit_unitary(back), qc.circuit_unitary(c))
    json.loads(c.to_json())


def test_inverse(rng):
    c = random_circuit(rng, 3)
    c.append(qc.UnitaryBlock(random_unitary(rng, 4), [0, 2]))
    U = qc.circuit_unitary(c)
    assert np.allclose(qc.circuit_unitary(c.inverse()), U.conj().T, atol=1e-12)


def test_two_qubit_accounting():
    c = qc.Circuit(3, [qc.CNOT(0, 1), qc.CNOT(1, 2), qc.H(0), qc.SWAP(0, 2)])
    assert c.two_qubit_count == 3
    assert c.two_qubit_depth == 3
    assert qc.block_cnot_cost(2) == 3 and qc.block_cnot_cost(1) == 0
