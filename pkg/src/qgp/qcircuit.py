"""Gate-model circuits and an exact statevector simulator.

Basis ordering: qubit 0 is the least significant bit of a basis index, so
``|q_{n-1} ... q_1 q_0>`` has index ``sum(q_k << k)``. The same convention is
used for the local index of multi-qubit matrices: for a block acting on
``qubits = (a, b, ...)`` qubit ``a`` is the least significant bit.

Measurements are terminal: a measured qubit may not be touched by a later
gate. ``sample`` draws shots from the Born distribution of the final state.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import (
    ContainsMeasurement,
    DimensionMismatch,
    NoMeasurement,
    NonUnitary,
    TooWide,
    WidthMismatch,
)

UNITARY_ATOL = 1e-10
MAX_UNITARY_WIDTH = 12
SHOT_BATCH = 1 << 20

_SQ2 = 1.0 / math.sqrt(2.0)
_FIXED = {
    "h": np.array([[_SQ2, _SQ2], [_SQ2, -_SQ2]], dtype=complex),
    "x": np.array([[0, 1], [1, 0]], dtype=complex),
}
_X = _FIXED["x"]
_SWAP = np.array([[1, 0, 0, 0], [0, 0, 1, 0], [0, 1, 0, 0], [0, 0, 0, 1]], dtype=complex)


def rx(theta: float) -> np.ndarray:
    c, s = math.cos(theta / 2), math.sin(theta / 2)
    return np.array([[c, -1j * s], [-1j * s, c]], dtype=complex)


def ry(theta: float) -> np.ndarray:
    c, s = math.cos(theta / 2), math.sin(theta / 2)
    return np.array([[c, -s], [s, c]], dtype=complex)


def rz(theta: float) -> np.ndarray:
    return np.array([[np.exp(-0.5j * theta), 0], [0, np.exp(0.5j * theta)]], dtype=complex)


def phase(theta: float) -> np.ndarray:
    return np.array([[1, 0], [0, np.exp(1j * theta)]], dtype=complex)


_PARAM = {"rx": rx, "ry": ry, "rz": rz, "p": phase, "cp": phase}


def block_cnot_cost(m: int) -> int:
    """CNOT count needed to synthesise a generic ``m``-qubit unitary."""
    if m <= 1:
        return 0
    return -(-(4**m - 3 * m - 1) // 4)


def is_unitary(U: np.ndarray, atol: float = UNITARY_ATOL) -> bool:
    U = np.asarray(U)
    if U.ndim != 2 or U.shape[0] != U.shape[1]:
        return False
    return bool(np.allclose(U.conj().T @ U, np.eye(U.shape[0]), rtol=0.0, atol=atol))


@dataclass(frozen=True, eq=False)
class Gate:
    """One circuit instruction.

    ``kind`` is one of ``h x rx ry rz p cx cp swap unitary cunitary measure``.
    ``qubits`` are the targets (local matrix order for blocks), ``controls``
    the control qubits. ``cost`` overrides the two-qubit-gate cost used for
    depth/count accounting of matrix blocks; ``power`` records how many
    sequential applications of a base block the gate stands for.
    """

    kind: str
    qubits: tuple[int, ...]
    controls: tuple[int, ...] = ()
    params: tuple[float, ...] = ()
    matrix: np.ndarray | None = None
    clbit: int | None = None
    cost: int | None = None
    power: int = 1
    label: str = ""

    @property
    def all_qubits(self) -> tuple[int, ...]:
        return self.controls + self.qubits

    def local_matrix(self) -> np.ndarray:
        """Matrix acting on ``qubits`` (controls excluded)."""
        if self.kind in _FIXED:
            return _FIXED[self.kind]
        if self.kind in _PARAM:
            return _PARAM[self.kind](self.params[0])
        if self.kind == "cx":
            return _X
        if self.kind == "swap":
            return _SWAP
        if self.kind in ("unitary", "cunitary"):
            return self.matrix
        raise ValueError(f"gate {self.kind!r} has no matrix")

    @property
    def two_qubit_cost(self) -> int:
        if self.kind in ("cx", "cp", "swap"):
            return 1
        if self.kind in ("unitary", "cunitary"):
            if self.cost is not None:
                return self.cost
            return self.power * block_cnot_cost(len(self.all_qubits))
        return 0

    def inverse(self) -> "Gate":
        if self.kind == "measure":
            raise ContainsMeasurement("measurement has no inverse")
        if self.kind in ("h", "x", "cx", "swap"):
            return self
        if self.kind in _PARAM:
            return Gate(self.kind, self.qubits, self.controls, (-self.params[0],), label=self.label)
        return Gate(
            self.kind,
            self.qubits,
            self.controls,
            matrix=self.matrix.conj().T,
            cost=self.cost,
            power=self.power,
            label=self.label + ("" if self.label.endswith("^dg") else "^dg") if self.label else "",
        )

    def remap(self, mapping: Sequence[int] | dict[int, int]) -> "Gate":
        m = mapping.__getitem__
        return Gate(
            self.kind,
            tuple(m(q) for q in self.qubits),
            tuple(m(q) for q in self.controls),
            self.params,
            self.matrix,
            self.clbit,
            self.cost,
            self.power,
            self.label,
        )

    def to_dict(self) -> dict:
        d: dict = {"kind": self.kind, "qubits": list(self.qubits)}
        if self.controls:
            d["controls"] = list(self.controls)
        if self.params:
            d["params"] = [float(p) for p in self.params]
        if self.clbit is not None:
            d["clbit"] = self.clbit
        if self.matrix is not None:
            d["matrix_re"] = np.real(self.matrix).tolist()
            d["matrix_im"] = np.imag(self.matrix).tolist()
        if self.cost is not None:
            d["cost"] = self.cost
        if self.power != 1:
            d["power"] = self.power
        if self.label:
            d["label"] = self.label
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Gate":
        matrix = None
        if "matrix_re" in d:
            matrix = np.asarray(d["matrix_re"]) + 1j * np.asarray(d["matrix_im"])
        return cls(
            d["kind"],
            tuple(d["qubits"]),
            tuple(d.get("controls", ())),
            tuple(d.get("params", ())),
            matrix,
            d.get("clbit"),
            d.get("cost"),
            d.get("power", 1),
            d.get("label", ""),
        )


# -- gate constructors -------------------------------------------------------

def H(q: int) -> Gate:
    return Gate("h", (q,))


def X(q: int) -> Gate:
    return Gate("x", (q,))


def RX(theta: float, q: int) -> Gate:
    return Gate("rx", (q,), params=(float(theta),))


def RY(theta: float, q: int) -> Gate:
    return Gate("ry", (q,), params=(float(theta),))


def RZ(theta: float, q: int) -> Gate:
    return Gate("rz", (q,), params=(float(theta),))


def Phase(theta: float, q: int) -> Gate:
    return Gate("p", (q,), params=(float(theta),))


def CNOT(control: int, target: int) -> Gate:
    return Gate("cx", (target,), (control,))


def CPhase(theta: float, control: int, target: int) -> Gate:
    return Gate("cp", (target,), (control,), (float(theta),))


def SWAP(a: int, b: int) -> Gate:
    return Gate("swap", (a, b))


def Measure(qubit: int, clbit: int) -> Gate:
    return Gate("measure", (qubit,), clbit=clbit)


def UnitaryBlock(matrix: np.ndarray, qubits: Sequence[int], *, cost: int | None = None,
                 label: str = "", check: bool = True) -> Gate:
    matrix = np.asarray(matrix, dtype=complex)
    if matrix.shape != (1 << len(qubits),) * 2:
        raise DimensionMismatch(f"matrix {matrix.shape} does not fit {len(qubits)} qubits")
    if check and not is_unitary(matrix):
        raise NonUnitary("UnitaryBlock matrix is not unitary")
    return Gate("unitary", tuple(qubits), matrix=matrix, cost=cost, label=label)


def ControlledUnitaryBlock(matrix: np.ndarray, control: int, qubits: Sequence[int], *,
                           cost: int | None = None, power: int = 1, label: str = "",
                           check: bool = True) -> Gate:
    matrix = np.asarray(matrix, dtype=complex)
    if matrix.shape != (1 << len(qubits),) * 2:
        raise DimensionMismatch(f"matrix {matrix.shape} does not fit {len(qubits)} qubits")
    if check and not is_unitary(matrix):
        raise NonUnitary("ControlledUnitaryBlock matrix is not unitary")
    return Gate("cunitary", tuple(qubits), (control,), matrix=matrix, cost=cost,
                power=power, label=label)


def controlled_power(U: np.ndarray, k: int, control: int, qubits: Sequence[int] | None = None,
                     *, label: str = "") -> Gate:
    """Controlled ``U**(2**k)`` computed by ``k`` repeated squarings.

    ``qubits`` defaults to ``0..m-1`` for an ``m``-qubit ``U``.
    """
    U = np.asarray(U, dtype=complex)
    if not is_unitary(U, 1e-9):
        raise NonUnitary("controlled_power needs a unitary matrix")
    m = int(round(math.log2(U.shape[0])))
    if qubits is None:
        qubits = tuple(range(m))
    P = U
    for _ in range(k):
        P = P @ P
    return ControlledUnitaryBlock(P, control, qubits, power=1 << k,
                                  label=label or f"U^{1 << k}", check=False)


@dataclass
class Circuit:
    width: int
    gates: list[Gate] = field(default_factory=list)
    num_clbits: int = 0
    metadata: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.width < 1:
            raise ValueError("circuit width must be >= 1")
        gates, self.gates = list(self.gates), []
        self.extend(gates)

    def append(self, gate: Gate) -> "Circuit":
        for q in gate.all_qubits:
            if not 0 <= q < self.width:
                raise WidthMismatch(f"qubit {q} outside circuit width {self.width}")
        if len(set(gate.all_qubits)) != len(gate.all_qubits):
            raise ValueError(f"repeated qubit in {gate.kind} on {gate.all_qubits}")
        if gate.kind == "measure":
            self.num_clbits = max(self.num_clbits, gate.clbit + 1)
        self.gates.append(gate)
        return self

    def extend(self, gates: Iterable[Gate]) -> "Circuit":
        for g in gates:
            self.append(g)
        return self

    def compose(self, other: "Circuit", qubits: Sequence[int] | None = None) -> "Circuit":
        """Append ``other``'s gates, mapping its qubit ``i`` onto ``qubits[i]``."""
        mapping = list(range(other.width)) if qubits is None else list(qubits)
        if len(mapping) != other.width:
            raise WidthMismatch("qubit map does not match sub-circuit width")
        return self.extend(g.remap(mapping) for g in other.gates)

    def inverse(self) -> "Circuit":
        return Circuit(self.width, [g.inverse() for g in reversed(self.gates)])

    @property
    def has_measurement(self) -> bool:
        return any(g.kind == "measure" for g in self.gates)

    @property
    def two_qubit_count(self) -> int:
        return sum(g.two_qubit_cost for g in self.gates)

    @property
    def depth(self) -> int:
        """Layered depth; matrix blocks occupy as many layers as their cost."""
        level = [0] * self.width
        for g in self.gates:
            if g.kind == "measure":
                continue
            qs = g.all_qubits
            start = max(level[q] for q in qs)
            step = max(1, g.two_qubit_cost) if g.kind in ("unitary", "cunitary") else 1
            for q in qs:
                level[q] = start + step
        return max(level, default=0)

    @property
    def two_qubit_depth(self) -> int:
        """Depth counting only multi-qubit gates (blocks weigh their cost)."""
        level = [0] * self.width
        for g in self.gates:
            cost = g.two_qubit_cost
            if cost == 0:
                continue
            qs = g.all_qubits
            start = max(level[q] for q in qs)
            for q in qs:
                level[q] = start + cost
        return max(level, default=0)

    def count_ops(self) -> dict[str, int]:
        counts: dict[str, int] = {}
        for g in self.gates:
            counts[g.kind] = counts.get(g.kind, 0) + 1
        return counts

    def to_json(self) -> str:
        return json.dumps({
            "width": self.width,
            "num_clbits": self.num_clbits,
            "gates": [g.to_dict() for g in self.gates],
        })

    @classmethod
    def from_json(cls, text: str) -> "Circuit":
        d = json.loads(text)
        c = cls(d["width"], num_clbits=d.get("num_clbits", 0))
        return c.extend(Gate.from_dict(g) for g in d["gates"])


# -- simulation -------------------------------------------------------------

def _apply(psi: np.ndarray, U: np.ndarray, qubits: Sequence[int], controls: Sequence[int],
           n: int) -> np.ndarray:
    """Apply ``U`` to ``qubits`` of ``psi`` (shape ``(2,)*n + batch``) in place."""
    k = len(qubits)
    sl: list = [slice(None)] * psi.ndim
    for c in controls:
        sl[n - 1 - c] = 1
    sub = psi[tuple(sl)] if controls else psi
    # axis positions of the targets inside ``sub``
    ctl_axes = sorted(n - 1 - c for c in controls)
    def sub_axis(q: int) -> int:
        ax = n - 1 - q
        return ax - sum(1 for a in ctl_axes if a < ax)
    # most-significant local qubit first, matching the C-order reshape of U
    axes = [sub_axis(q) for q in reversed(qubits)]
    Ut = U.reshape((2,) * (2 * k))
    out = np.tensordot(Ut, sub, axes=(list(range(k, 2 * k)), axes))
    out = np.moveaxis(out, list(range(k)), axes)
    if controls:
        psi[tuple(sl)] = out
        return psi
    return out


def _evolve(circuit: Circuit, psi: np.ndarray) -> np.ndarray:
    n = circuit.width
    measured: set[int] = set()
    for g in circuit.gates:
        if g.kind == "measure":
            measured.add(g.qubits[0])
            continue
        if measured.intersection(g.all_qubits):
            raise ValueError("gate acts on an already measured qubit")
        psi = _apply(psi, g.local_matrix(), g.qubits, g.controls, n)
    return psi


def zero_state(width: int) -> np.ndarray:
    psi = np.zeros(1 << width, dtype=complex)
    psi[0] = 1.0
    return psi


def basis_state(width: int, index: int) -> np.ndarray:
    psi = np.zeros(1 << width, dtype=complex)
    psi[index] = 1.0
    return psi


def run(circuit: Circuit, initial: np.ndarray | None = None) -> np.ndarray:
    """Final statevector (Measure instructions are recorded, not collapsed)."""
    n = circuit.width
    if initial is None:
        initial = zero_state(n)
    initial = np.asarray(initial, dtype=complex)
    if initial.shape != (1 << n,):
        raise WidthMismatch(f"state of length {initial.shape} for width {n}")
    if abs(np.vdot(initial, initial).real - 1.0) > UNITARY_ATOL:
        raise ValueError("initial state is not normalised")
    for g in circuit.gates:
        if g.kind in ("unitary", "cunitary") and not is_unitary(g.matrix):
            raise NonUnitary(f"block {g.label or g.kind} is not unitary")
    psi = _evolve(circuit, initial.reshape((2,) * n).copy())
    return psi.reshape(-1)


def circuit_unitary(circuit: Circuit) -> np.ndarray:
    """Full ``2**n x 2**n`` matrix of a measurement-free circuit (n <= 12)."""
    n = circuit.width
    if n > MAX_UNITARY_WIDTH:
        raise TooWide(f"width {n} exceeds {MAX_UNITARY_WIDTH}")
    if circuit.has_measurement:
        raise ContainsMeasurement("circuit_unitary needs a measurement-free circuit")
    dim = 1 << n
    psi = np.eye(dim, dtype=complex).reshape((2,) * n + (dim,))
    return _evolve(circuit, psi).reshape(dim, dim)


def measured_probabilities(circuit: Circuit, state: np.ndarray) -> np.ndarray:
    """Born probabilities over classical-bit values (clbit 0 least significant)."""
    meas = [g for g in circuit.gates if g.kind == "measure"]
    if not meas:
        raise NoMeasurement("circuit has no Measure instruction")
    n = circuit.width
    probs = np.abs(np.asarray(state).reshape(-1)) ** 2
    idx = np.arange(1 << n)
    out_idx = np.zeros(1 << n, dtype=np.int64)
    for g in meas:
        bit = (idx >> g.qubits[0]) & 1
        out_idx = (out_idx & ~(1 << g.clbit)) | (bit << g.clbit)
    dist = np.bincount(out_idx, weights=probs, minlength=1 << circuit.num_clbits)
    return dist / dist.sum()


def sample(circuit: Circuit, shots: int, seed: int, initial: np.ndarray | None = None) -> dict[str, int]:
    """Histogram of classical-bit strings (clbit 0 rightmost) over ``shots`` runs.

    Shots are drawn in batches of ``SHOT_BATCH``; batch ``i`` uses the ``i``-th
    child of ``numpy.random.SeedSequence(seed)``, so a given seed always
    reproduces the same histogram.
    """
    if shots < 1:
        raise ValueError("shots must be >= 1")
    if not circuit.has_measurement:
        raise NoMeasurement("circuit has no Measure instruction")
    dist = measured_probabilities(circuit, run(circuit, initial))
    n_batches = -(-shots // SHOT_BATCH)
    children = np.random.SeedSequence(seed).spawn(n_batches)
    counts = np.zeros(dist.size, dtype=np.int64)
    remaining = shots
    for child in children:
        batch = min(remaining, SHOT_BATCH)
        counts += np.random.default_rng(child).multinomial(batch, dist)
        remaining -= batch
    width = max(circuit.num_clbits, 1)
    return {format(i, f"0{width}b"): int(c) for i, c in enumerate(counts) if c}
