"""Multi-output GP training and prediction for the line model.

The negative log marginal likelihood is

    0.5 * y' (K + S)^-1 y + 0.5 * log|K + S| + 0.5 * N * log(2 pi)

with ``S`` the per-channel noise diagonal. Only the quadratic term changes
with the backend: a dense solve, or the HHL estimate on the regularised and
diagonally scaled matrix. The log-determinant is always classical.
"""
from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.linalg
from scipy.optimize import minimize

from . import hhl, numerics
from .errors import NumericalError
from .kernels import (
    CHANNELS,
    LineHyperParams,
    RBFParams,
    assemble_joint,
    cross_vectors,
    noise_diagonal,
    prior_variance,
)

log = logging.getLogger(__name__)

VARIANTS = ("classical", "hhl_exact", "hhl_sampled")
LOG_2PI = math.log(2.0 * math.pi)


@dataclass
class TrainingSet:
    times_ii: np.ndarray
    times_vj: np.ndarray
    times_vi: np.ndarray
    y_ii: np.ndarray
    y_vj: np.ndarray
    y_vi: np.ndarray

    def __post_init__(self) -> None:
        for ch in ("ii", "vj", "vi"):
            t = np.asarray(getattr(self, "times_" + ch), dtype=float)
            y = np.asarray(getattr(self, "y_" + ch), dtype=float)
            if t.shape != y.shape or t.ndim != 1:
                raise ValueError(f"channel {ch}: times and values must be equal-length vectors")
            if t.size > 1 and np.any(np.diff(t) <= 0):
                raise ValueError(f"channel {ch}: times must be strictly increasing")
            setattr(self, "times_" + ch, t)
            setattr(self, "y_" + ch, y)

    @property
    def times(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        return self.times_ii, self.times_vj, self.times_vi

    @property
    def y(self) -> np.ndarray:
        return np.concatenate([self.y_ii, self.y_vj, self.y_vi])

    @property
    def sizes(self) -> tuple[int, int, int]:
        return self.times_ii.size, self.times_vj.size, self.times_vi.size

    @property
    def n(self) -> int:
        return sum(self.sizes)

    def to_dict(self) -> dict:
        return {k: getattr(self, k).tolist() for k in
                ("times_ii", "times_vj", "times_vi", "y_ii", "y_vj", "y_vi")}

    @classmethod
    def from_dict(cls, d: dict) -> "TrainingSet":
        return cls(*(np.asarray(d[k], dtype=float) for k in
                     ("times_ii", "times_vj", "times_vi", "y_ii", "y_vj", "y_vi")))


@dataclass
class Backend:
    """Quadratic-form backend of the NLML.

    ``target_condition`` and ``reg_floor`` control the ridge added before the
    matrix is handed to HHL (ignored by the classical variant).
    """

    variant: str = "classical"
    hhl: hhl.HHLConfig = field(default_factory=hhl.HHLConfig)
    target_condition: float = 512.0
    reg_floor: float = 0.0

    def __post_init__(self) -> None:
        if self.variant not in VARIANTS:
            raise ValueError(f"backend variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.target_condition < 1:
            raise ValueError("target_condition must be >= 1")
        want = "sampled" if self.variant == "hhl_sampled" else "exact"
        if self.is_quantum and self.hhl.backend != want:
            self.hhl = replace(self.hhl, backend=want)

    @property
    def is_quantum(self) -> bool:
        return self.variant != "classical"

    @classmethod
    def classical(cls) -> "Backend":
        return cls("classical")

    @classmethod
    def hhl_exact(cls, cfg: hhl.HHLConfig | None = None, **kw) -> "Backend":
        return cls("hhl_exact", cfg or hhl.HHLConfig(), **kw)

    @classmethod
    def hhl_sampled(cls, cfg: hhl.HHLConfig | None = None, **kw) -> "Backend":
        return cls("hhl_sampled", cfg or hhl.HHLConfig(backend="sampled"), **kw)


@dataclass
class FitResult:
    theta_star: LineHyperParams
    nlml_trace: list[float]
    iterations: int
    backend_stats: dict
    wall_time: float
    init: LineHyperParams | None = None
    evaluations: list[float] = field(default_factory=list)

    @property
    def best_nlml(self) -> float:
        return self.nlml_trace[-1]

    def to_dict(self) -> dict:
        return {
            "theta_star": self.theta_star.to_dict(),
            "init": self.init.to_dict() if self.init else None,
            "iterations": self.iterations,
            "best_nlml": self.best_nlml,
            "nlml_trace": list(self.nlml_trace),
            "backend_stats": self.backend_stats,
            "wall_time": self.wall_time,
        }


def regularize(K: np.ndarray, target_condition: float = 512.0, floor: float = 0.0
               ) -> tuple[np.ndarray, float]:
    """Ridge ``K + lam * I`` with the smallest ``lam >= floor`` that brings the
    condition number to at most ``target_condition``."""
    w = numerics.eigh(K).eigenvalues
    lo, hi = float(w[0]), float(w[-1])
    need = (hi - target_condition * lo) / (target_condition - 1) if target_condition > 1 else math.inf
    if math.isinf(need):
        raise ValueError("target_condition of 1 is only reachable for multiples of I")
    lam = max(float(floor), need, 0.0)
    K_reg = K + lam * np.eye(K.shape[0])
    return K_reg, lam


def hhl_matrix(Ky: np.ndarray, backend: Backend) -> tuple[np.ndarray, float]:
    """Regularised matrix whose quadratic form the HHL backend evaluates.

    The ridge is applied to the unit-diagonal scaled kernel ``D Ky D`` and
    mapped back, i.e. ``Ky + lam * D^-2``. Units of the current and voltage
    channels then do not matter, and the diagonal scaling inside
    :func:`qgp.hhl.quadratic_form` sees a condition number of at most
    ``target_condition``.
    """
    Ks, d = numerics.diagonal_scaling(Ky)
    _, lam = regularize(Ks, backend.target_condition, backend.reg_floor)
    K_reg = Ky.copy()
    K_reg[np.diag_indices_from(K_reg)] += lam / d**2
    return K_reg, lam


def joint_matrix(theta: LineHyperParams, data: TrainingSet) -> np.ndarray:
    """``K + S``: joint kernel plus noise diagonal."""
    K = assemble_joint(*data.times, theta)
    K[np.diag_indices_from(K)] += noise_diagonal(*data.sizes, theta)
    return K


def nlml_details(theta: LineHyperParams, data: TrainingSet, backend: Backend
                 ) -> tuple[float, hhl.HHLResult | None]:
    Ky = joint_matrix(theta, data)
    y = data.y
    result = None
    if backend.is_quantum:
        # both terms use the ridged matrix so the objective stays a likelihood
        K_reg, lam = hhl_matrix(Ky, backend)
        _, logdet = numerics.cholesky_logdet(K_reg)
        result = hhl.quadratic_form(K_reg, y, backend.hhl)
        result.extra["lambda_reg"] = lam
        quad = result.quadratic_form
    else:
        L, logdet = numerics.cholesky_logdet(Ky)
        alpha = scipy.linalg.cho_solve((L, True), y)
        quad = float(y @ alpha)
    value = 0.5 * quad + 0.5 * logdet + 0.5 * y.size * LOG_2PI
    return value, result


def nlml(theta: LineHyperParams, data: TrainingSet, backend: Backend | None = None) -> float:
    """Negative log marginal likelihood of ``data`` under ``theta``."""
    return nlml_details(theta, data, backend or Backend.classical())[0]


def default_init(data: TrainingSet, window: float | None = None) -> LineHyperParams:
    """Scale-aware starting point derived from the data only.

    Kernel variances are per-channel sample variances, RBF weights
    ``1/(0.25*window)^2`` and noise 1% of the channel variance. The line
    impedance scale ``Z0`` is the drop between the sending- and receiving-end
    amplitudes over the current amplitude (amplitudes from RMS); the
    impedance angle is taken as 45 degrees, i.e. ``R = Z0 cos 45`` and
    ``L = Z0 sin 45 / omega`` with ``omega`` from one window per cycle.
    """
    if window is None:
        all_t = np.concatenate(data.times)
        span = float(all_t.max() - all_t.min())
        n = data.n / 3.0
        window = span * n / max(n - 1.0, 1.0)
    var_i = float(np.var(data.y_ii))
    var_vj = float(np.var(data.y_vj))
    var_vi = float(np.var(data.y_vi))
    w = 1.0 / (0.25 * window) ** 2
    amp_i = math.sqrt(2.0 * float(np.mean(data.y_ii ** 2)))
    amp_vj = math.sqrt(2.0 * float(np.mean(data.y_vj ** 2)))
    amp_vi = math.sqrt(2.0 * float(np.mean(data.y_vi ** 2)))
    drop = abs(amp_vi - amp_vj)
    if drop <= 1e-3 * amp_vj:
        drop = 1e-2 * amp_vj
    z0 = drop / max(amp_i, 1e-300)
    omega = 2.0 * math.pi / window
    return LineHyperParams(
        RBFParams(var_i, w), RBFParams(var_vj, w),
        z0 * math.sqrt(0.5), z0 * math.sqrt(0.5) / omega,
        0.01 * var_i, 0.01 * var_vj, 0.01 * var_vi,
    )


@dataclass
class FitOptions:
    max_iters: int | None = None  # objective evaluations; None -> 100 quantum / 6000 classical
    xatol: float = 1e-6
    fatol: float = 1e-8
    initial_step: float = 1.0  # simplex edge in log-parameter units
    restarts: int = 8
    seed: int = 0

    def budget(self, backend: Backend) -> int:
        if self.max_iters is not None:
            return int(self.max_iters)
        return 100 if backend.is_quantum else 6000


def fit(data: TrainingSet, init: LineHyperParams | None = None, opts: FitOptions | None = None,
        backend: Backend | None = None) -> FitResult:
    """Minimise the NLML over log-parameters with Nelder-Mead.

    The simplex is restarted around the incumbent (edge halved each time)
    while evaluations remain and the last run still improved. Failed
    evaluations count as ``+inf``.
    """
    backend = backend or Backend.classical()
    opts = opts or FitOptions()
    init = init or default_init(data)
    budget = opts.budget(backend)
    x_init = np.log(init.to_vector())
    rng = np.random.default_rng(opts.seed)

    evaluations: list[float] = []
    trace: list[float] = []
    best = {"f": math.inf, "x": np.zeros_like(x_init)}
    stats = {"hhl_calls": 0, "failures": 0, "eval_qubits_used": [], "circuit_width": [],
             "circuit_depth": [], "two_qubit_count": [], "condition_number_before": [],
             "condition_number_after": [], "success_probability": []}

    class _Budget(Exception):
        pass

    def objective(x: np.ndarray) -> float:
        if len(evaluations) >= budget:
            raise _Budget
        try:
            theta = LineHyperParams.from_vector(np.exp(x_init + x))
            f, res = nlml_details(theta, data, backend)
            if res is not None:
                stats["hhl_calls"] += 1
                for key in ("eval_qubits_used", "circuit_width", "circuit_depth", "two_qubit_count",
                            "condition_number_before", "condition_number_after",
                            "success_probability"):
                    stats[key].append(getattr(res, key))
            if not math.isfinite(f):
                f = math.inf
        except (NumericalError, ValueError, np.linalg.LinAlgError, OverflowError) as exc:
            log.debug("objective failed: %s", exc)
            stats["failures"] += 1
            f = math.inf
        evaluations.append(f)
        if f < best["f"]:
            best["f"], best["x"] = f, np.array(x)
        trace.append(best["f"])
        return f

    t0 = time.perf_counter()
    dim = x_init.size
    step = opts.initial_step
    prev = math.inf
    for attempt in range(opts.restarts + 1):
        x0 = best["x"]
        # axis-aligned simplex, randomly signed so restarts explore both sides
        signs = rng.choice([-1.0, 1.0], size=dim) if attempt else np.ones(dim)
        simplex = np.vstack([x0, x0 + step * np.diag(signs)])
        try:
            minimize(objective, x0, method="Nelder-Mead",
                     options={"initial_simplex": simplex, "xatol": opts.xatol,
                              "fatol": opts.fatol, "maxfev": budget, "maxiter": budget,
                              "adaptive": True})
        except _Budget:
            break
        if len(evaluations) >= budget or prev - best["f"] <= opts.fatol * max(1.0, abs(prev)):
            break
        prev = best["f"]
        step *= 0.5
    wall = time.perf_counter() - t0

    if not evaluations:
        raise ValueError("no objective evaluations were performed")
    theta_star = LineHyperParams.from_vector(np.exp(x_init + best["x"]))
    summary = {"variant": backend.variant, "evaluations": len(evaluations),
               "hhl_calls": stats["hhl_calls"], "failures": stats["failures"]}
    for key in ("eval_qubits_used", "circuit_width", "circuit_depth", "two_qubit_count",
                "condition_number_before", "condition_number_after", "success_probability"):
        vals = stats[key]
        if vals:
            summary[key] = {"min": float(np.min(vals)), "max": float(np.max(vals)),
                            "mean": float(np.mean(vals))}
    return FitResult(theta_star, trace, len(evaluations), summary, wall, init, evaluations)


def predict(channel: str, t_stars, data: TrainingSet, theta: LineHyperParams,
            backend: Backend | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Posterior mean and variance of the noise-free ``channel`` signal at
    ``t_stars``. Always solved classically (one Cholesky factorisation)."""
    if channel not in CHANNELS:
        from .errors import UnknownChannel
        raise UnknownChannel(channel)
    ts = np.atleast_1d(np.asarray(t_stars, dtype=float))
    Ky = joint_matrix(theta, data)
    L, _ = numerics.cholesky_logdet(Ky)
    alpha = scipy.linalg.cho_solve((L, True), data.y)
    Q = cross_vectors(channel, ts, *data.times, theta)
    mean = Q @ alpha
    V = scipy.linalg.solve_triangular(L, Q.T, lower=True)
    var = prior_variance(channel, theta) - np.sum(V * V, axis=0)
    clamp = float(np.max(np.clip(-var, 0.0, None), initial=0.0))
    if clamp > 0:
        log.debug("clamped negative predictive variance of magnitude %.3e", clamp)
    return mean, np.clip(var, 0.0, None)
