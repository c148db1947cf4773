"""Two-node line experiment: synthetic steady-state signals, noisy samples,
end-to-end R/L estimation and the prediction grid."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from . import gp
from .errors import CountsExceedGrid
from .kernels import CHANNELS, LineHyperParams

DEFAULT_COUNTS = (10, 11, 11)  # (n_vi, n_ii, n_vj)
DEFAULT_NOISE_FRACTION = 1e-4  # noise std relative to each channel's amplitude


@dataclass
class NetworkConfig:
    R_true: float = 0.064
    L_true: float = 2.64e-5
    frequency: float = 50.0
    vj_amplitude: float = 230.0 * math.sqrt(2.0)
    vj_phase: float = 0.0
    i_amplitude: float = 100.0
    i_phase: float | None = None  # None: lag by the line impedance angle
    window: float | None = None  # None: one period

    def __post_init__(self) -> None:
        if self.frequency <= 0:
            raise ValueError("frequency must be positive")
        if self.window is not None and self.window < self.period * (1 - 1e-12):
            raise ValueError("window must cover at least one period")

    @property
    def omega(self) -> float:
        return 2.0 * math.pi * self.frequency

    @property
    def period(self) -> float:
        return 1.0 / self.frequency

    @property
    def span(self) -> float:
        return self.window if self.window is not None else self.period

    @property
    def current_phase(self) -> float:
        if self.i_phase is not None:
            return self.i_phase
        return self.vj_phase - math.atan2(self.omega * self.L_true, self.R_true)

    def amplitude(self, channel: str) -> float:
        """Peak value of a channel's clean signal."""
        if channel == "i_i":
            return self.i_amplitude
        if channel == "v_j":
            return self.vj_amplitude
        z = complex(self.R_true, self.omega * self.L_true)
        vj = self.vj_amplitude * np.exp(1j * self.vj_phase)
        ii = self.i_amplitude * np.exp(1j * self.current_phase)
        return float(abs(vj + z * ii))


@dataclass
class SignalBundle:
    t: np.ndarray
    v_i: np.ndarray
    v_j: np.ndarray
    i_i: np.ndarray
    config: NetworkConfig
    noisy_v_i: np.ndarray | None = None
    noisy_v_j: np.ndarray | None = None
    noisy_i_i: np.ndarray | None = None
    noise_variances: dict = field(default_factory=lambda: {c: 0.0 for c in CHANNELS})
    seed: int | None = None

    def clean(self, channel: str) -> np.ndarray:
        return getattr(self, channel)

    def noisy(self, channel: str) -> np.ndarray:
        arr = getattr(self, "noisy_" + channel)
        return self.clean(channel) if arr is None else arr

    def to_dict(self) -> dict:
        d = {"config": asdict(self.config), "seed": self.seed,
             "noise_variances": dict(self.noise_variances), "t": self.t.tolist()}
        for c in CHANNELS:
            d[c] = self.clean(c).tolist()
            d["noisy_" + c] = self.noisy(c).tolist()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SignalBundle":
        arr = lambda k: np.asarray(d[k], dtype=float)
        return cls(arr("t"), arr("v_i"), arr("v_j"), arr("i_i"), NetworkConfig(**d["config"]),
                   arr("noisy_v_i"), arr("noisy_v_j"), arr("noisy_i_i"),
                   dict(d["noise_variances"]), d.get("seed"))


def time_grid(cfg: NetworkConfig, n_points: int = 2000) -> np.ndarray:
    """Uniform grid over ``[0, window)``."""
    return np.arange(n_points) * (cfg.span / n_points)


def simulate_signals(cfg: NetworkConfig, grid: np.ndarray | None = None) -> SignalBundle:
    """Clean steady-state signals; ``v_i`` from the line equation in closed form."""
    t = time_grid(cfg) if grid is None else np.asarray(grid, dtype=float)
    if t.size and (t.min() < 0 or t.max() > cfg.span * (1 + 1e-12)):
        raise ValueError("grid must lie within the window")
    w = cfg.omega
    phi = cfg.current_phase
    i_i = cfg.i_amplitude * np.cos(w * t + phi)
    di = -cfg.i_amplitude * w * np.sin(w * t + phi)
    v_j = cfg.vj_amplitude * np.cos(w * t + cfg.vj_phase)
    v_i = cfg.R_true * i_i + cfg.L_true * di + v_j
    return SignalBundle(t, v_i, v_j, i_i, cfg)


def add_noise(bundle: SignalBundle, sigma_ii: float, sigma_vj: float, sigma_vi: float,
              seed: int) -> SignalBundle:
    """Independent zero-mean Gaussian noise per channel (standard deviations)."""
    sigmas = {"i_i": sigma_ii, "v_j": sigma_vj, "v_i": sigma_vi}
    if any(s < 0 for s in sigmas.values()):
        raise ValueError("noise standard deviations must be non-negative")
    rng = np.random.default_rng(seed)
    noisy = {}
    for c in CHANNELS:
        draw = rng.standard_normal(bundle.t.size)
        noisy[c] = bundle.clean(c) + sigmas[c] * draw if sigmas[c] > 0 else bundle.clean(c).copy()
    return SignalBundle(bundle.t, bundle.v_i, bundle.v_j, bundle.i_i, bundle.config,
                        noisy["v_i"], noisy["v_j"], noisy["i_i"],
                        {c: float(s) ** 2 for c, s in sigmas.items()}, seed)


def relative_noise(bundle: SignalBundle, fraction: float, seed: int) -> SignalBundle:
    """``add_noise`` with each std set to ``fraction`` of the channel amplitude."""
    cfg = bundle.config
    return add_noise(bundle, *(fraction * cfg.amplitude(c) for c in CHANNELS), seed=seed)


def _channel_indices(n: int, grid: np.ndarray, span: float, jitter: float,
                     rng: np.random.Generator) -> np.ndarray:
    step = span / n
    base = (np.arange(n) + 0.5) * step
    if jitter:
        base = base + rng.uniform(-0.5, 0.5, size=n) * jitter * step
    idx = np.searchsorted(grid, base)
    idx = np.clip(idx, 1, grid.size - 1)
    left = grid[idx - 1]
    idx = np.where(base - left <= grid[idx] - base, idx - 1, idx)
    idx = np.clip(idx, 0, grid.size - 1)
    if np.any(np.diff(idx) <= 0):
        raise CountsExceedGrid("grid too coarse for the requested sample count")
    return idx


def sample_training(bundle: SignalBundle, counts: Sequence[int] = DEFAULT_COUNTS,
                    jitter: float = 0.1, seed: int = 0) -> gp.TrainingSet:
    """Pick ``counts = (n_vi, n_ii, n_vj)`` samples over one window.

    Each channel starts from cell-centred uniform times, displaced by up to
    ``jitter/2`` of a cell (independently per channel) and snapped to the
    nearest grid point; values are read from the noisy signals.
    """
    n_vi, n_ii, n_vj = (int(c) for c in counts)
    if min(n_vi, n_ii, n_vj) < 2:
        raise ValueError("each channel needs at least 2 samples")
    if not 0 <= jitter < 1:
        raise ValueError("jitter must lie in [0, 1)")
    grid = bundle.t
    if max(n_vi, n_ii, n_vj) > grid.size:
        raise CountsExceedGrid(f"{max(counts)} samples requested from {grid.size} grid points")
    rng = np.random.default_rng(seed)
    span = bundle.config.span
    if jitter == 0:
        # exact uniform times, values from the closed-form signals
        out = {}
        for c, n in (("i_i", n_ii), ("v_j", n_vj), ("v_i", n_vi)):
            ts = (np.arange(n) + 0.5) * (span / n)
            idx = _channel_indices(n, grid, span, 0.0, rng)
            out[c] = (ts, idx)
        exact = simulate_signals(bundle.config, np.concatenate([v[0] for v in out.values()]))
        vals, pos = {}, 0
        for c, (ts, idx) in out.items():
            noise = bundle.noisy(c)[idx] - bundle.clean(c)[idx]
            vals[c] = exact.clean(c)[pos:pos + ts.size] + noise
            pos += ts.size
        return gp.TrainingSet(out["i_i"][0], out["v_j"][0], out["v_i"][0],
                              vals["i_i"], vals["v_j"], vals["v_i"])
    idx = {c: _channel_indices(n, grid, span, jitter, rng)
           for c, n in (("i_i", n_ii), ("v_j", n_vj), ("v_i", n_vi))}
    return gp.TrainingSet(grid[idx["i_i"]], grid[idx["v_j"]], grid[idx["v_i"]],
                          bundle.noisy("i_i")[idx["i_i"]], bundle.noisy("v_j")[idx["v_j"]],
                          bundle.noisy("v_i")[idx["v_i"]])


def percent_error(estimate: float, truth: float) -> float:
    """Absolute percentage error ``|x_hat - x| / x * 100``."""
    return abs(estimate - truth) / abs(truth) * 100.0


@dataclass
class EstimateReport:
    R_hat: float
    L_hat: float
    abs_error_R: float  # percent
    abs_error_L: float  # percent
    fit: gp.FitResult
    data: gp.TrainingSet

    def to_dict(self) -> dict:
        return {"R_hat": self.R_hat, "L_hat": self.L_hat, "abs_error_R": self.abs_error_R,
                "abs_error_L": self.abs_error_L, "fit": self.fit.to_dict(),
                "training_set": self.data.to_dict()}


def estimate(bundle: SignalBundle, counts: Sequence[int] = DEFAULT_COUNTS,
             backend: gp.Backend | None = None, opts: gp.FitOptions | None = None,
             jitter: float = 0.1, seed: int = 0, init: LineHyperParams | None = None
             ) -> EstimateReport:
    """Sample training data, fit the GP and score R and L against the truth."""
    data = sample_training(bundle, counts, jitter, seed)
    cfg = bundle.config
    init = init or gp.default_init(data, cfg.span)
    result = gp.fit(data, init, opts, backend)
    th = result.theta_star
    return EstimateReport(th.R, th.L, percent_error(th.R, cfg.R_true),
                          percent_error(th.L, cfg.L_true), result, data)


def prediction_grid(bundle: SignalBundle, theta: LineHyperParams, data: gp.TrainingSet,
                    n_points: int = 200, backend: gp.Backend | None = None) -> dict:
    """Per-channel columns ``t, mean, variance, truth`` on ``n_points`` uniform
    times over one period (closed-form truth)."""
    cfg = bundle.config
    ts = np.arange(n_points) * (cfg.period / n_points)
    truth = simulate_signals(cfg, ts)
    out = {}
    for c in CHANNELS:
        mean, var = gp.predict(c, ts, data, theta, backend)
        out[c] = {"t": ts, "mean": mean, "variance": var, "truth": truth.clean(c)}
    return out


def rms_error(table: dict) -> float:
    return float(np.sqrt(np.mean((table["mean"] - table["truth"]) ** 2)))
