"""HHL linear-systems pipeline on the statevector simulator.

Register layout of every HHL circuit (qubit 0 least significant)::

    0 .. n_b-1             solution/state register |b>
    n_b .. n_b+n_l-1       evaluation register (eval qubit k controls U^(2^k))
    n_b+n_l                inversion ancilla

The Hermitian system matrix ``A`` is divided by a spectrum bound so the scaled
spectrum lies in (0, 1]. With ``t = 2*pi*(1 - 2**-n_l)`` an eval-register
reading ``j`` decodes to the scaled eigenvalue ``j / (2**n_l - 1)``; the
largest scaled eigenvalue 1 maps onto the top register value.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from . import numerics
from .errors import CTooLarge, DimensionMismatch, SingularAfterTruncation
from .qcircuit import (
    Circuit,
    CPhase,
    Gate,
    H,
    Measure,
    SWAP,
    UnitaryBlock,
    controlled_power,
    is_unitary,
    measured_probabilities,
    run,
    sample,
)

RESCALE_MODES = ("exact", "dmin")
BACKENDS = ("exact", "sampled")


@dataclass
class HHLConfig:
    """Register sizing, scaling constants and backend of one HHL evaluation.

    ``None`` fields are derived per matrix: ``n_eval`` from the condition
    number (capped at ``eval_qubits_cap``), ``time_param`` and
    ``inversion_constant`` from the eigenvalue grid, ``spectrum_bound`` from
    the largest eigenvalue.

    Register values decoding below ``eigen_floor`` (scaled units) are not
    inverted. Without an explicit floor, ``filter_fraction`` sets it to that
    fraction of the smallest scaled eigenvalue; ``None`` inverts every
    nonzero value. The default ``inversion_constant`` equals the floor, or the
    smallest nonzero grid value when there is none.
    """

    eval_qubits_cap: int = 8
    n_eval: int | None = None
    time_param: float | None = None
    inversion_constant: float | None = None
    eigen_floor: float | None = None
    filter_fraction: float | None = 0.8
    spectrum_bound: float | None = None
    backend: str = "exact"
    shots: int = 100_000
    seed: int = 0
    rescale_mode: str = "exact"
    aqc: object | None = None  # qgp.aqc.AQCOptions; compiles the QPE blocks

    def __post_init__(self) -> None:
        if not 1 <= self.eval_qubits_cap <= 10:
            raise ValueError("eval_qubits_cap must lie in [1, 10]")
        if self.n_eval is not None and not 1 <= self.n_eval <= 10:
            raise ValueError("n_eval must lie in [1, 10]")
        if self.backend not in BACKENDS:
            raise ValueError(f"backend must be one of {BACKENDS}, got {self.backend!r}")
        if self.rescale_mode not in RESCALE_MODES:
            raise ValueError(f"rescale_mode must be one of {RESCALE_MODES}, got {self.rescale_mode!r}")
        if self.shots < 1:
            raise ValueError("shots must be >= 1")
        if self.filter_fraction is not None and not 0 < self.filter_fraction <= 1:
            raise ValueError("filter_fraction must lie in (0, 1]")


@dataclass
class HHLResult:
    quadratic_form: float
    success_probability: float
    eval_qubits_used: int
    circuit_width: int
    circuit_depth: int
    two_qubit_count: int
    condition_number_before: float
    condition_number_after: float
    standard_error: float = 0.0
    exact_quadratic_form: float = 0.0
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), default=float)


def size_eval_register(kappa: float, cap: int = 8) -> int:
    """``min(ceil(log2 kappa) + 1, cap)`` evaluation qubits."""
    if kappa < 1:
        raise ValueError("condition number must be >= 1")
    if math.isinf(kappa):
        return cap
    return min(math.ceil(math.log2(kappa) - 1e-12) + 1, cap) if kappa > 1 else min(1, cap)


def evolution_unitary(A: np.ndarray, t: float) -> np.ndarray:
    """``exp(i A t)`` through the eigendecomposition of Hermitian ``A``."""
    w, V = numerics.eigh(A)
    return (V * np.exp(1j * w * t)) @ V.conj().T


# -- QFT / QPE -------------------------------------------------------------

def qft(n: int, inverse: bool = False) -> Circuit:
    """QFT on ``n`` qubits: ``|x> -> 2**-n/2 sum_y exp(2 pi i x y / 2**n) |y>``."""
    c = Circuit(n)
    for i in reversed(range(n)):
        c.append(H(i))
        for j in reversed(range(i)):
            c.append(CPhase(math.pi / (1 << (i - j)), j, i))
    for i in range(n // 2):
        c.append(SWAP(i, n - 1 - i))
    return c.inverse() if inverse else c


def qpe_blocks(U: np.ndarray, n_l: int, state_qubits: Sequence[int],
               eval_qubits: Sequence[int]) -> list[Gate]:
    """The controlled-``U^(2^k)`` ladder, eval qubit ``k`` as control."""
    return [controlled_power(U, k, eval_qubits[k], state_qubits) for k in range(n_l)]


def build_qpe(U: np.ndarray, n_l: int, state_qubits: int,
              blocks: Sequence[Circuit | Gate | None] | None = None) -> Circuit:
    """Phase-estimation circuit for ``U`` on ``state_qubits`` (qubits ``0..m-1``)
    with ``n_l`` evaluation qubits (``m..m+n_l-1``).

    ``blocks[k]``, when given, replaces the exact controlled-``U^(2^k)`` gate;
    a replacement circuit acts on ``[control, state_0, ..., state_{m-1}]``.
    """
    U = np.asarray(U, dtype=complex)
    if n_l < 1:
        raise ValueError("n_l must be >= 1")
    if U.shape != (1 << state_qubits,) * 2:
        raise DimensionMismatch(f"U of shape {U.shape} does not act on {state_qubits} qubits")
    m = state_qubits
    state = list(range(m))
    evals = list(range(m, m + n_l))
    c = Circuit(m + n_l, metadata={"state_qubits": state, "eval_qubits": evals})
    c.extend(H(q) for q in evals)
    exact = qpe_blocks(U, n_l, state, evals)
    for k in range(n_l):
        sub = blocks[k] if blocks is not None else None
        if sub is None:
            c.append(exact[k])
        elif isinstance(sub, Gate):
            c.append(sub)
        else:
            c.compose(sub, [evals[k]] + state)
    c.compose(qft(n_l, inverse=True), evals)
    return c


# -- eigenvalue inversion --------------------------------------------------

def grid_eigenvalue(n_l: int, t: float) -> Callable[[int], float]:
    """Decoder from an unsigned eval-register value to a scaled eigenvalue."""
    return lambda j: 2.0 * math.pi * j / ((1 << n_l) * t)


def eigen_inversion_block(n_l: int, C: float, phase_to_eigenvalue: Callable[[int], float],
                          floor: float | None = None) -> Circuit:
    """Register-conditioned RY on the ancilla (qubit ``n_l``).

    Each eval value ``j`` decoding to ``lam`` rotates the ancilla so its
    ``|1>`` amplitude is ``C / lam``. Values decoding to 0, or below
    ``floor``, leave the ancilla untouched.
    """
    dim = 1 << n_l
    lams = np.array([phase_to_eigenvalue(j) for j in range(dim)], dtype=float)
    active = lams > 0 if floor is None else lams >= floor
    active &= lams != 0
    if not active.any():
        raise CTooLarge("no register value survives the eigenvalue floor")
    lam_min = float(np.min(np.abs(lams[active])))
    if abs(C) > lam_min * (1 + 1e-12):
        raise CTooLarge(f"C={C:.4g} exceeds smallest representable eigenvalue {lam_min:.4g}")
    ratio = np.zeros(dim)
    ratio[active] = np.clip(C / lams[active], -1.0, 1.0)
    theta = 2.0 * np.arcsin(ratio)
    # block-diagonal over the register value: local index = anc * 2**n_l + j
    cos, sin = np.cos(theta / 2), np.sin(theta / 2)
    M = np.zeros((2 * dim, 2 * dim), dtype=complex)
    r = np.arange(dim)
    M[r, r] = cos
    M[r + dim, r] = sin
    M[r, r + dim] = -sin
    M[r + dim, r + dim] = cos
    c = Circuit(n_l + 1, metadata={"C": C, "ratios": ratio})
    # a uniformly controlled RY over n_l controls costs 2**n_l CNOTs
    c.append(UnitaryBlock(M, list(range(n_l + 1)), cost=dim, label="eig-inv", check=False))
    return c


# -- HHL ---------------------------------------------------------------------

@dataclass
class HHLPlan:
    """Per-matrix constants chosen for one HHL circuit."""

    n_b: int
    n_l: int
    scale: float  # spectrum bound: A_scaled = A / scale
    t: float
    C: float
    floor: float | None
    padded_dim: int
    kappa: float
    min_scaled_eigenvalue: float

    @property
    def width(self) -> int:
        return self.n_b + self.n_l + 1


def pad_system(A: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Pad to the next power of two with zero RHS entries and a diagonal block
    ``lambda_max(A) * I``, which leaves both ``||A^-1 b||`` and the spectral
    range of ``A`` unchanged."""
    n = A.shape[0]
    N = 1 << max(1, math.ceil(math.log2(n)))
    if N == n:
        return A, b
    top = float(np.linalg.eigvalsh(A)[-1])
    Ap = np.eye(N, dtype=A.dtype) * top
    Ap[:n, :n] = A
    bp = np.zeros(N, dtype=np.result_type(b, float))
    bp[:n] = b
    return Ap, bp


def plan_hhl(A: np.ndarray, cfg: HHLConfig) -> HHLPlan:
    A = numerics.check_hermitian(np.asarray(A))
    N = A.shape[0]
    n_b = int(round(math.log2(N)))
    if 1 << n_b != N:
        raise DimensionMismatch("HHL matrix dimension must be a power of two (use pad_system)")
    w = numerics.eigh(A).eigenvalues
    if w[0] <= 0:
        raise SingularAfterTruncation("HHL needs a positive definite matrix")
    kappa = float(w[-1] / w[0])
    n_l = cfg.n_eval if cfg.n_eval is not None else size_eval_register(kappa, cfg.eval_qubits_cap)
    scale = float(cfg.spectrum_bound) if cfg.spectrum_bound is not None else float(w[-1])
    if w[-1] > scale * (1 + 1e-12):
        raise ValueError("spectrum_bound is below the largest eigenvalue")
    top = (1 << n_l) - 1
    t = cfg.time_param if cfg.time_param is not None else 2 * math.pi * top / (1 << n_l)
    decode = grid_eigenvalue(n_l, t)
    lam_min = float(w[0] / scale)
    # scaled eigenvalues that QPE would round to register value 0 are lost
    if lam_min * (1 << n_l) * t / (2 * math.pi) < 0.5:
        raise SingularAfterTruncation(
            f"smallest scaled eigenvalue {lam_min:.3g} truncates to 0 with {n_l} eval qubits")
    floor = cfg.eigen_floor
    if floor is None and cfg.filter_fraction is not None:
        floor = cfg.filter_fraction * lam_min
    if floor is not None and floor <= decode(1):
        floor = None
    if cfg.inversion_constant is not None:
        C = float(cfg.inversion_constant)
    else:
        C = decode(1) if floor is None else max(decode(1), float(floor))
    return HHLPlan(n_b, n_l, scale, t, C, floor, N, kappa, lam_min)


def hhl_circuit(A: np.ndarray, b: np.ndarray, plan: HHLPlan,
                qpe_replacements: Sequence[Circuit | None] | None = None,
                measure: bool = True) -> Circuit:
    n_b, n_l = plan.n_b, plan.n_l
    U = evolution_unitary(np.asarray(A) / plan.scale, plan.t)
    width = plan.width
    anc = n_b + n_l
    c = Circuit(width, metadata={
        "C": plan.C, "scale": plan.scale, "t": plan.t, "n_l": n_l, "n_b": n_b,
        "ancilla": anc, "eval_qubits": list(range(n_b, n_b + n_l)),
    })
    c.append(state_preparation(b, list(range(n_b))))
    qpe = build_qpe(U, n_l, n_b, qpe_replacements)
    c.compose(qpe, list(range(n_b + n_l)))
    inv = eigen_inversion_block(n_l, plan.C, grid_eigenvalue(n_l, plan.t), plan.floor)
    c.compose(inv, list(range(n_b, n_b + n_l)) + [anc])
    c.compose(qpe.inverse(), list(range(n_b + n_l)))
    if measure:
        c.append(Measure(anc, 0))
    return c


def build_hhl(A: np.ndarray, b: np.ndarray, cfg: HHLConfig,
              qpe_replacements: Sequence[Circuit | None] | None = None) -> Circuit:
    """State preparation, QPE, eigenvalue inversion, QPE^dagger and an ancilla
    measurement. Plan constants are stored in ``circuit.metadata``."""
    A = np.asarray(A)
    b = np.asarray(b)
    if A.shape[0] != b.shape[0]:
        raise DimensionMismatch("matrix and right-hand side sizes differ")
    if abs(np.linalg.norm(b) - 1.0) > 1e-9:
        raise ValueError("right-hand side must be a unit vector")
    A, b = pad_system(A, b)
    plan = plan_hhl(A, cfg)
    compiled = None
    if cfg.aqc is not None and qpe_replacements is None:
        from .aqc import compile_qpe_blocks

        compiled = compile_qpe_blocks(A / plan.scale, plan.t, plan.n_l, cfg.aqc)
        qpe_replacements = compiled.replacements
    circ = hhl_circuit(A, b, plan, qpe_replacements)
    if compiled is not None:
        circ.metadata["aqc"] = compiled.to_dict()
    return circ


def state_preparation(b: np.ndarray, qubits: Sequence[int]) -> Gate:
    """Amplitude-encoding block mapping ``|0..0>`` to ``|b>``.

    Householder reflection completed to a unitary; its first column is ``b``.
    """
    b = np.asarray(b, dtype=complex)
    N = b.size
    e0 = np.zeros(N, dtype=complex)
    # phase so that the reflection sends e0 exactly onto b
    ph = b[0] / abs(b[0]) if abs(b[0]) > 0 else 1.0
    v = e0.copy()
    v[0] = 1.0
    u = v * ph - b
    nu = np.linalg.norm(u)
    if nu < 1e-14:
        M = np.eye(N, dtype=complex) * ph
    else:
        u /= nu
        M = (np.eye(N) - 2.0 * np.outer(u, u.conj())) * ph
    # M e0 = ph * (e0 - 2 u u^dag e0); with u ~ (ph e0 - b) this yields b
    return UnitaryBlock(M, list(qubits), cost=max(0, N - len(qubits) - 1) if N > 2 else 0,
                        label="state-prep")


def ancilla_probability(circuit: Circuit) -> float:
    """Exact probability of reading the ancilla (clbit 0) as 1."""
    state = run(circuit)
    return float(measured_probabilities(circuit, state)[1])


def solve_norm(A: np.ndarray, b: np.ndarray, cfg: HHLConfig,
               qpe_replacements: Sequence[Circuit | None] | None = None) -> tuple[float, float, float, Circuit]:
    """HHL estimate of ``||A^-1 b||^2`` for arbitrary (non-unit) ``b``.

    Returns ``(estimate, exact_backend_estimate, standard_error, circuit)``.
    """
    A = np.asarray(A)
    b = np.asarray(b)
    bnorm2 = float(np.real(np.vdot(b, b)))
    if bnorm2 == 0.0:
        return 0.0, 0.0, 0.0, Circuit(1)
    circ = build_hhl(A, b / math.sqrt(bnorm2), cfg, qpe_replacements)
    meta = circ.metadata
    factor = bnorm2 / (meta["C"] ** 2 * meta["scale"] ** 2)
    p_exact = ancilla_probability(circ)
    if cfg.backend == "sampled":
        counts = sample(circ, cfg.shots, cfg.seed)
        p = counts.get("1", 0) / cfg.shots
        se = math.sqrt(max(p_exact * (1 - p_exact), 0.0) / cfg.shots) * factor
    else:
        p, se = p_exact, 0.0
    circ.metadata["success_probability"] = p
    return p * factor, p_exact * factor, se, circ


def condition_for_hhl(K: np.ndarray, y: np.ndarray, mode: str
                      ) -> tuple[np.ndarray, np.ndarray, float]:
    """Build the HHL matrix and right-hand side for ``y' K^-1 y``.

    Returns ``(kappa_prime, rhs, multiplier)`` such that the quadratic form is
    ``multiplier * ||kappa_prime^-1 rhs||^2`` (exactly in ``"exact"`` mode).

    ``"exact"``: ``D = diag(K_ii^-1/2)``, ``kappa' = sqrt(D K D)``, ``rhs = D y``.
    Then ``||kappa'^-1 D y||^2 = (Dy)'(DKD)^-1(Dy) = y' K^-1 y``.

    ``"dmin"``: ``kappa = sqrt(K)``, ``kappa' = D kappa D`` with
    ``D = diag(kappa_ii^-1/2)``, ``rhs = y``, and the result is multiplied by
    the smallest entry of ``D^-1``. This is a heuristic, not an identity.
    """
    if mode == "exact":
        Ks, d = numerics.diagonal_scaling(K)
        return numerics.psd_sqrt(Ks), d * y, 1.0
    if mode == "dmin":
        kappa = numerics.psd_sqrt(K)
        kp, d = numerics.diagonal_scaling(kappa)
        return kp, np.array(y, dtype=float), float(np.min(1.0 / d))
    raise ValueError(f"unknown rescale mode {mode!r}")


def quadratic_form(K: np.ndarray, y: np.ndarray, cfg: HHLConfig | None = None,
                   sigma_n2=None, qpe_replacements: Sequence[Circuit | None] | None = None
                   ) -> HHLResult:
    """HHL estimate of ``y' (K + diag(sigma_n2))^-1 y``.

    ``K`` should already be regularised; ``sigma_n2`` (scalar or vector) is
    added to its diagonal when given.
    """
    cfg = cfg or HHLConfig()
    K = np.array(K, dtype=float)
    y = np.asarray(y, dtype=float)
    if K.shape != (y.size, y.size):
        raise DimensionMismatch(f"kernel {K.shape} vs observations {y.shape}")
    if sigma_n2 is not None:
        K[np.diag_indices_from(K)] += sigma_n2
    numerics.cholesky_logdet(K)  # raises NotPositiveDefinite early
    cond_before = numerics.condition_number(K)
    kp, rhs, mult = condition_for_hhl(K, y, cfg.rescale_mode)
    cond_scaled = numerics.condition_number(kp @ kp)
    kp_pad, rhs_pad = pad_system(kp, rhs)
    if cfg.n_eval is None:
        # register sized by the conditioned kernel (the square of the HHL matrix)
        cfg = replace(cfg, n_eval=size_eval_register(cond_scaled, cfg.eval_qubits_cap))
    est, est_exact, se, circ = solve_norm(kp_pad, rhs_pad, cfg, qpe_replacements)
    return HHLResult(
        quadratic_form=est * mult,
        success_probability=float(circ.metadata.get("success_probability", 0.0)),
        eval_qubits_used=int(circ.metadata.get("n_l", 0)),
        circuit_width=circ.width,
        circuit_depth=circ.depth,
        two_qubit_count=circ.two_qubit_count,
        condition_number_before=cond_before,
        condition_number_after=cond_scaled,
        standard_error=se * mult,
        exact_quadratic_form=est_exact * mult,
        extra={"rescale_mode": cfg.rescale_mode, "hhl_matrix_condition": math.sqrt(cond_scaled),
               "inversion_constant": float(circ.metadata.get("C", 0.0)),
               "spectrum_bound": float(circ.metadata.get("scale", 0.0)),
               **({"aqc": circ.metadata["aqc"]} if "aqc" in circ.metadata else {})},
    )
