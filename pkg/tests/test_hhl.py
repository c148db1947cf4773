import math

import numpy as np
import pytest
from scipy.stats import ortho_group

from qgp import hhl, numerics
from qgp import qcircuit as qc
from qgp.errors import CTooLarge, DimensionMismatch, NonHermitian, SingularAfterTruncation

from conftest import random_hermitian, random_spd


def grid_spd(rng, n, n_l):
    """SPD matrix whose eigenvalues are distinct points of the n_l-bit grid."""
    top = (1 << n_l) - 1
    js = rng.choice(np.arange(1, top), size=n - 1, replace=False)
    lams = np.concatenate([np.sort(js) / top, [1.0]]) * rng.uniform(0.5, 5.0)
    V = ortho_group.rvs(n, random_state=rng) if n > 1 else np.eye(1)
    return (V * lams) @ V.T




def qpe_outcomes(U, psi_state, n_l):
    m = int(round(math.log2(U.shape[0])))
    circ = hhl.build_qpe(U, n_l, m)
    psi = np.kron(qc.zero_state(n_l), psi_state)
    out = np.abs(qc.run(circ, psi)) ** 2
    return out.reshape(1 << n_l, 1 << m).sum(axis=1)


# -- register sizing, evolution, QPE ----------------------------------------

def test_size_eval_register_examples():
    assert hhl.size_eval_register(1, 8) == 1
    assert hhl.size_eval_register(512, 8) == 8
    assert hhl.size_eval_register(6, 8) == 4
    assert hhl.size_eval_register(2**30, 8) == 8


def test_evolution_unitary_examples(rng):
    assert np.allclose(hhl.evolution_unitary(np.zeros((2, 2)), 1.3), np.eye(2))
    assert np.allclose(hhl.evolution_unitary(np.diag([1.0, -1.0]), math.pi), -np.eye(2))
    A = random_hermitian(rng, 4)
    U = hhl.evolution_unitary(A, 0.7)
    w, V = np.linalg.eigh(A)
    assert np.allclose(U @ U.conj().T, np.eye(4), atol=1e-9)
    assert np.allclose(U @ V, V * np.exp(1j * w * 0.7), atol=1e-9)
    with pytest.raises(NonHermitian):
        hhl.evolution_unitary(np.array([[0.0, 1.0], [0.0, 0.0]]), 1.0)


def test_qft_matches_dft_matrix():
    n = 3
    N = 1 << n
    F = np.exp(2j * math.pi * np.outer(np.arange(N), np.arange(N)) / N) / math.sqrt(N)
    assert np.allclose(qc.circuit_unitary(hhl.qft(n)), F, atol=1e-12)
    assert np.allclose(qc.circuit_unitary(hhl.qft(n, inverse=True)), F.conj().T, atol=1e-12)


def test_qpe_z_single_bit():
    out = qpe_outcomes(np.diag([1.0, -1.0]).astype(complex), np.array([0, 1.0]), 1)
    assert out[1] == pytest.approx(1.0, abs=1e-12)


def test_qpe_reads_three_eighths():
    out = qpe_outcomes(qc.phase(2 * math.pi * 3 / 8), np.array([0, 1.0]), 3)
    assert out[3] >= 0.999


def test_qpe_leakage_mode():
    out = qpe_outcomes(qc.phase(2 * math.pi * 0.3), np.array([0, 1.0]), 3)
    assert int(np.argmax(out)) in (2, 3)
    assert out.max() >= 0.4


@pytest.mark.parametrize("n_l", [1, 2, 3, 4])
def test_qpe_exact_phases(n_l):
    for j in range(1 << n_l):
        out = qpe_outcomes(qc.phase(2 * math.pi * j / (1 << n_l)), np.array([0, 1.0]), n_l)
        assert out[j] >= 0.999


def test_qpe_circuit_is_unitary():
    c = hhl.build_qpe(qc.phase(0.4), 2, 1)
    U = qc.circuit_unitary(c)
    assert np.allclose(U.conj().T @ U, np.eye(8), atol=1e-10)


def test_build_qpe_dimension_check():
    with pytest.raises(DimensionMismatch):
        hhl.build_qpe(np.eye(4), 2, 1)


# -- eigenvalue inversion ---------------------------------------------------

def ancilla_one_probability(block, n_l, j):
    psi = qc.basis_state(n_l + 1, j)
    out = qc.run(block, psi)
    return float(np.sum(np.abs(out[1 << n_l:]) ** 2))


def test_inversion_full_and_half_rotation():
    n_l = 3
    decode = lambda j: j / 7
    C = decode(1)
    block = hhl.eigen_inversion_block(n_l, C, decode)
    assert ancilla_one_probability(block, n_l, 1) == pytest.approx(1.0, abs=1e-12)
    assert ancilla_one_probability(block, n_l, 2) == pytest.approx(0.25, abs=1e-12)


def test_inversion_all_encodings():
    n_l = 4
    t = 2 * math.pi * (1 - 2**-n_l)
    decode = hhl.grid_eigenvalue(n_l, t)
    C = 0.6 * decode(1)
    block = hhl.eigen_inversion_block(n_l, C, decode)
    for j in range(1 << n_l):
        p = ancilla_one_probability(block, n_l, j)
        expected = 0.0 if j == 0 else (C / decode(j)) ** 2
        assert abs(p - expected) < 1e-9


def test_inversion_floor_leaves_small_values():
    decode = lambda j: j / 7
    block = hhl.eigen_inversion_block(3, 3 / 7, decode, floor=3 / 7)
    assert ancilla_one_probability(block, 3, 2) == 0.0
    assert ancilla_one_probability(block, 3, 3) == pytest.approx(1.0)


def test_inversion_c_too_large():
    with pytest.raises(CTooLarge):
        hhl.eigen_inversion_block(2, 0.5, lambda j: j / 3)


# -- full HHL ---------------------------------------------------------------

def postselected_state(A, b, cfg):
    Ap, bp = hhl.pad_system(A, b / np.linalg.norm(b))
    plan = hhl.plan_hhl(Ap, cfg)
    circ = hhl.hhl_circuit(Ap, bp, plan, measure=False)
    psi = qc.run(circ).reshape(2, 1 << plan.n_l, 1 << plan.n_b)
    # ancilla 1, eval register back in |0>
    x = psi[1, 0, :]
    return x[: A.shape[0]], circ


def test_identity_system():
    cfg = hhl.HHLConfig(n_eval=2)
    circ = hhl.build_hhl(np.eye(2), np.array([1.0, 0.0]), cfg)
    C = circ.metadata["C"]
    assert hhl.ancilla_probability(circ) == pytest.approx(C**2, abs=1e-12)
    x, _ = postselected_state(np.eye(2), np.array([1.0, 0.0]), cfg)
    assert abs(abs(x[0]) / np.linalg.norm(x) - 1) < 1e-12


def test_diag_1_2_on_grid():
    # spectrum bound 3 puts the scaled eigenvalues on the 2-bit grid {1/3, 2/3}
    cfg = hhl.HHLConfig(n_eval=2, spectrum_bound=3.0)
    b = np.array([1.0, 1.0]) / math.sqrt(2)
    circ = hhl.build_hhl(np.diag([1.0, 2.0]), b, cfg)
    p = hhl.ancilla_probability(circ)
    C, s = circ.metadata["C"], circ.metadata["scale"]
    assert p / (C**2 * s**2) == pytest.approx(0.625, rel=1e-9)


@pytest.mark.parametrize("n", [2, 4, 8])
def test_grid_exactness_and_fidelity(n):
    rng = np.random.default_rng(n)
    n_l = 4
    for _ in range(5):
        A = grid_spd(rng, n, n_l)
        b = rng.normal(size=n)
        cfg = hhl.HHLConfig(n_eval=n_l)
        est = hhl.solve_norm(A, b, cfg)[0]
        x = numerics.solve_psd(A, b)
        assert abs(est - x @ x) / (x @ x) < 1e-6
        xs, _ = postselected_state(A, b, cfg)
        overlap = abs(np.vdot(xs, x)) / (np.linalg.norm(xs) * np.linalg.norm(x))
        assert overlap >= 1 - 1e-6


def test_padding_non_power_of_two(rng):
    for n in (3, 5, 6):
        A = grid_spd(rng, n, 4)
        b = rng.normal(size=n)
        x = numerics.solve_psd(A, b)
        est = hhl.solve_norm(A, b, hhl.HHLConfig(n_eval=4))[0]
        assert abs(est - x @ x) / (x @ x) < 1e-6
        Ap, bp = hhl.pad_system(A, b)
        assert Ap.shape[0] == 1 << math.ceil(math.log2(n)) and np.all(bp[n:] == 0)
        w, wp = np.linalg.eigvalsh(A), np.linalg.eigvalsh(Ap)
        assert wp.min() == pytest.approx(w.min()) and wp.max() == pytest.approx(w.max())


def test_monotone_truncation():
    """Median error over 20 seeded (matrix, rhs) draws decreases with n_l."""
    medians = []
    for n_l in range(4, 9):
        errs = []
        for s in range(20):
            rng = np.random.default_rng(s)
            V = ortho_group.rvs(4, random_state=rng)
            A = (V * rng.uniform(1, 8, 4)) @ V.T
            b = rng.normal(size=4)
            x = np.linalg.solve(A, b)
            errs.append(abs(hhl.solve_norm(A, b, hhl.HHLConfig(n_eval=n_l))[0] - x @ x) / (x @ x))
        medians.append(np.median(errs))
    assert all(b <= a for a, b in zip(medians, medians[1:])), medians


def test_singular_after_truncation():
    with pytest.raises(SingularAfterTruncation):
        hhl.solve_norm(np.diag([1e-3, 1.0]), np.ones(2), hhl.HHLConfig(n_eval=3))


def test_sampled_backend_statistics():
    rng = np.random.default_rng(5)
    A = grid_spd(rng, 4, 4)
    b = rng.normal(size=4)
    shots = 100_000
    cfg = hhl.HHLConfig(n_eval=4, backend="sampled", shots=shots, seed=11)
    est, exact, se, circ = hhl.solve_norm(A, b, cfg)
    p = hhl.ancilla_probability(circ)
    assert se <= 2 / math.sqrt(shots) * (exact / p)
    assert abs(est - exact) <= 4 * se
    assert hhl.solve_norm(A, b, cfg)[0] == est


# -- quadratic form ----------------------------------------------------------

@pytest.mark.parametrize("mode", ["exact", "dmin"])
def test_quadratic_form_identity(mode):
    res = hhl.quadratic_form(np.eye(4), np.array([3.0, 4.0, 0.0, 0.0]), hhl.HHLConfig(rescale_mode=mode))
    assert res.quadratic_form == pytest.approx(25.0, rel=1e-9)


def test_quadratic_form_diag():
    res = hhl.quadratic_form(np.diag([1.0, 4.0]), np.array([1.0, 1.0]))
    assert res.quadratic_form == pytest.approx(1.25, rel=1e-9)
    assert res.quadratic_form >= 0
    assert res.circuit_width == res.eval_qubits_used + 1 + 1


def test_quadratic_form_noise_argument(rng):
    K = random_spd(rng, 4)
    y = rng.normal(size=4)
    a = hhl.quadratic_form(K + 0.5 * np.eye(4), y, hhl.HHLConfig(n_eval=6))
    b = hhl.quadratic_form(K, y, hhl.HHLConfig(n_eval=6), sigma_n2=0.5)
    assert a.quadratic_form == pytest.approx(b.quadratic_form, rel=1e-12)


def test_rescale_identity(rng):
    for _ in range(100):
        n = int(rng.integers(2, 12))
        K = random_spd(rng, n) * np.outer(s := rng.uniform(0.1, 10, n), s)
        y = rng.normal(size=n)
        kp, rhs, mult = hhl.condition_for_hhl(K, y, "exact")
        lhs = mult * float(np.sum(np.linalg.solve(kp, rhs) ** 2))
        ref = float(y @ np.linalg.solve(K, y))
        assert abs(lhs - ref) / ref < 1e-8


def test_dmin_mode_scaling(rng):
    K = random_spd(rng, 4)
    y = rng.normal(size=4)
    kp, rhs, mult = hhl.condition_for_hhl(K, y, "dmin")
    assert np.max(np.abs(np.diag(kp) - 1)) < 1e-12
    kappa = numerics.psd_sqrt(K)
    assert mult == pytest.approx(np.min(np.sqrt(np.diag(kappa))))
    assert np.array_equal(rhs, y)


def test_quadratic_form_dimension_check():
    with pytest.raises(DimensionMismatch):
        hhl.quadratic_form(np.eye(3), np.ones(4))


def test_result_json_roundtrip():
    import json
    res = hhl.quadratic_form(np.eye(2), np.ones(2))
    d = json.loads(res.to_json())
    assert d["quadratic_form"] == pytest.approx(2.0)
    assert set(d) >= {"success_probability", "eval_qubits_used", "circuit_width", "circuit_depth",
                      "two_qubit_count", "condition_number_before", "condition_number_after"}


def test_config_validation():
    with pytest.raises(ValueError):
        hhl.HHLConfig(eval_qubits_cap=11)
    with pytest.raises(ValueError):
        hhl.HHLConfig(backend="qasm")
    with pytest.raises(ValueError):
        hhl.HHLConfig(rescale_mode="other")
