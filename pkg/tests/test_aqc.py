import math
from fractions import Fraction

import numpy as np
import pytest
from scipy.stats import unitary_group

from qgp import aqc, hhl
from qgp import qcircuit as qc
from qgp.errors import DimensionMismatch, NonUnitary, ParameterCountMismatch, TooWide

from conftest import random_unitary

CNOT_01 = qc.circuit_unitary(qc.Circuit(2, [qc.CNOT(0, 1)]))


def test_cnot_lower_bound_values():
    assert aqc.cnot_lower_bound(1) == 0
    assert aqc.cnot_lower_bound(2) == 3
    # (64 - 9 - 1) / 4 = 13.5, whose ceiling is 14
    assert aqc.cnot_lower_bound(3) == 14


def test_cnot_lower_bound_matches_ceiling():
    for n in range(1, 6):
        assert aqc.cnot_lower_bound(n) == math.ceil(Fraction(4**n - 3 * n - 1, 4))


def test_frobenius_examples(rng):
    U = random_unitary(rng, 4)
    assert aqc.frobenius_distance(U, U) < 1e-7
    assert aqc.frobenius_distance(1j * U, U) < 1e-7
    X = np.array([[0, 1], [1, 0]])
    assert aqc.frobenius_distance(np.eye(2), X) == pytest.approx(2.0)
    with pytest.raises(DimensionMismatch):
        aqc.frobenius_distance(np.eye(2), np.eye(4))


def test_frobenius_phase_invariance_and_bound(rng):
    for _ in range(50):
        U, V = random_unitary(rng, 4), random_unitary(rng, 4)
        phi = rng.uniform(0, 2 * math.pi)
        assert aqc.frobenius_distance(np.exp(1j * phi) * U, U) < 1e-7
        assert aqc.frobenius_distance(V, U) <= np.linalg.norm(V - U) + 1e-12
        # brute-force minimum over the global phase
        phis = np.linspace(0, 2 * math.pi, 20001)
        tr = np.vdot(V, U)
        brute = np.sqrt(np.maximum(0, 8 - 2 * np.real(np.exp(1j * phis) * tr))).min()
        assert aqc.frobenius_distance(V, U) == pytest.approx(brute, abs=1e-6)


def test_ansatz_parameter_count():
    spec = aqc.AnsatzSpec(2, 3)
    assert spec.parameter_count == 18
    c = aqc.build_ansatz(spec, np.zeros(18))
    assert c.two_qubit_count == 3
    with pytest.raises(ParameterCountMismatch):
        aqc.build_ansatz(spec, np.zeros(17))


def test_ansatz_zero_angles_identity():
    for n in (1, 2, 3):
        U = qc.circuit_unitary(aqc.build_ansatz(aqc.AnsatzSpec(n, 0), np.zeros(3 * n)))
        assert aqc.frobenius_distance(U, np.eye(1 << n)) < 1e-7


def test_cnot_in_ansatz_family():
    # zero angles with one CNOT on the first chain pair is CNOT(0 -> 1) itself
    U = qc.circuit_unitary(aqc.build_ansatz(aqc.AnsatzSpec(2, 1), np.zeros(10)))
    assert aqc.frobenius_distance(U, CNOT_01) < 1e-7


def test_ansatz_unitary_and_batched_evaluator(rng):
    for n, budget in ((1, 0), (2, 3), (3, 5), (4, 4)):
        spec = aqc.AnsatzSpec(n, budget)
        X = rng.uniform(-math.pi, math.pi, size=(3, spec.parameter_count))
        batch = aqc.ansatz_unitaries(spec, X)
        for x, V in zip(X, batch):
            U = qc.circuit_unitary(aqc.build_ansatz(spec, x))
            assert np.allclose(U.conj().T @ U, np.eye(1 << n), atol=1e-9)
            assert np.allclose(V, U, atol=1e-12)


def test_round_robin_pairs():
    spec = aqc.AnsatzSpec(3, 5)
    c = aqc.build_ansatz(spec, np.zeros(spec.parameter_count))
    pairs = [(g.controls[0], g.qubits[0]) for g in c.gates if g.kind == "cx"]
    assert pairs == [(0, 1), (1, 2), (0, 1), (1, 2), (0, 1)]


def test_compile_identity_budget_zero():
    res = aqc.compile(np.eye(4), aqc.AnsatzSpec(2, 0))
    assert res.distance < 1e-8 and res.converged


def test_compile_cnot_budget_one():
    res = aqc.compile(CNOT_01, aqc.AnsatzSpec(2, 1), aqc.AQCOptions(tolerance=1e-7))
    assert res.distance < 1e-6
    # reversed orientation needs the optimiser, not the zero start
    rev = qc.circuit_unitary(qc.Circuit(2, [qc.CNOT(1, 0)]))
    res = aqc.compile(rev, aqc.AnsatzSpec(2, 1), aqc.AQCOptions(tolerance=1e-7))
    assert res.distance < 1e-6


def test_compile_random_su4():
    for s in range(3):
        U = unitary_group.rvs(4, random_state=s)
        res = aqc.compile(U, aqc.AnsatzSpec(2, 3), aqc.AQCOptions(seed=s))
        assert res.distance < 1e-3
        assert res.circuit.two_qubit_count <= 3
        assert aqc.frobenius_distance(qc.circuit_unitary(res.circuit), U) == pytest.approx(res.distance)


def test_compile_history_monotone():
    U = unitary_group.rvs(4, random_state=9)
    res = aqc.compile(U, aqc.AnsatzSpec(2, 2), aqc.AQCOptions(max_iters=200, restarts=3, seed=1))
    h = np.array(res.history)
    assert np.all(np.diff(h) <= 1e-15)
    assert not res.converged  # two CNOTs cannot reach a generic SU(4)
    assert res.restarts_used == 3


def test_compile_errors():
    with pytest.raises(TooWide):
        aqc.compile(np.eye(128), aqc.AnsatzSpec(7, 0))
    with pytest.raises(DimensionMismatch):
        aqc.compile(np.eye(8), aqc.AnsatzSpec(2, 0))
    with pytest.raises(NonUnitary):
        aqc.compile(2 * np.eye(4), aqc.AnsatzSpec(2, 0))


def test_compilation_json():
    import json
    res = aqc.compile(np.eye(2), aqc.AnsatzSpec(1, 0))
    d = json.loads(res.to_json())
    assert d["distance"] < 1e-8 and d["two_qubit_count"] == 0
    assert qc.Circuit.from_json(json.dumps(d["circuit"])).width == 1


def test_controlled_block_target_matches_circuit(rng):
    U = random_unitary(rng, 2)
    T = aqc.controlled_block_target(U, 2)
    ref = qc.circuit_unitary(qc.Circuit(2, [qc.controlled_power(U, 2, 0, [1])]))
    assert np.allclose(T, ref, atol=1e-12)


def test_qpe_blocks_zero_matrix():
    comp = aqc.compile_qpe_blocks(np.zeros((2, 2)), 1.0, 3,
                                  aqc.AQCOptions(cnot_budget=3, tolerance=1e-9))
    assert len(comp) == 3
    # zero up to the sqrt(eps) floor of the trace-based distance
    assert all(r.distance < 1e-7 for r in comp)
    assert comp.depth_after <= comp.depth_before


def spd2(seed):
    rng = np.random.default_rng(seed)
    Q = unitary_group.rvs(2, random_state=seed).real
    Q, _ = np.linalg.qr(Q)
    A = Q @ np.diag(rng.uniform(1.0, 3.0, size=2)) @ Q.T
    return (A + A.T) / 2, rng.normal(size=2)


def test_qpe_substitution_2x2():
    n_l, budget = 3, 3
    for seed in (0, 1, 2):
        A, b = spd2(seed)
        opts = aqc.AQCOptions(cnot_budget=budget)
        base = hhl.HHLConfig(n_eval=n_l)
        est0, _, _, c0 = hhl.solve_norm(A, b, base)
        est1, _, _, c1 = hhl.solve_norm(A, b, hhl.HHLConfig(n_eval=n_l, aqc=opts))
        info = c1.metadata["aqc"]
        eps = max(blk["distance"] for blk in info["blocks"])
        assert eps < 1e-3 and all(blk["substituted"] for blk in info["blocks"])
        assert all(blk["two_qubit_count"] <= budget for blk in info["blocks"])
        assert info["block_two_qubit_after"] <= n_l * budget < info["block_two_qubit_before"]
        p0 = c0.metadata["success_probability"]
        p1 = c1.metadata["success_probability"]
        assert abs(p1 - p0) / p0 < 0.01
        assert abs(p1 - p0) <= n_l * 2 * eps
        assert abs(est1 - est0) / est0 < 0.01


def test_qpe_blocks_fallback():
    A, _ = spd2(0)
    comp = aqc.compile_qpe_blocks(A / np.linalg.eigvalsh(A)[-1], 2 * math.pi * 7 / 8, 2,
                                  aqc.AQCOptions(cnot_budget=0, restarts=1, max_iters=50))
    assert all(rep is None for rep in comp.replacements)
    assert comp.block_two_qubit_after == comp.block_two_qubit_before


def test_qpe_blocks_too_wide():
    with pytest.raises(TooWide):
        aqc.compile_qpe_blocks(np.eye(64), 1.0, 1)
