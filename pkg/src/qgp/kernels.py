"""RBF base kernels and the joint kernel of a short R-L line.

The branch current ``i_i`` and the receiving-end voltage ``v_j`` are
independent zero-mean GPs with RBF covariances ``k_I`` and ``k_V``. The
sending-end voltage follows the line equation

    v_i(t) = R i_i(t) + L d i_i(t)/dt + v_j(t)

so every covariance involving ``v_i`` is a linear-operator image of ``k_I``
and ``k_V``. Channel order everywhere is ``[i_i, v_j, v_i]``.
"""
from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np

from .errors import EmptyChannel, UnknownChannel

CHANNELS = ("i_i", "v_j", "v_i")


@dataclass(frozen=True)
class RBFParams:
    variance: float
    weight: float  # inverse squared lengthscale, 1/s^2

    def __post_init__(self) -> None:
        if not (self.variance > 0 and self.weight > 0):
            raise ValueError(f"RBF parameters must be positive: {self}")


@dataclass(frozen=True)
class LineHyperParams:
    current_kernel: RBFParams
    voltage_kernel: RBFParams
    R: float
    L: float
    noise_ii: float
    noise_vj: float
    noise_vi: float

    def __post_init__(self) -> None:
        for name in ("R", "L", "noise_ii", "noise_vj", "noise_vi"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")

    NAMES = ("var_I", "w_I", "var_V", "w_V", "R", "L", "noise_ii", "noise_vj", "noise_vi")

    def to_vector(self) -> np.ndarray:
        return np.array([
            self.current_kernel.variance, self.current_kernel.weight,
            self.voltage_kernel.variance, self.voltage_kernel.weight,
            self.R, self.L, self.noise_ii, self.noise_vj, self.noise_vi,
        ], dtype=float)

    @classmethod
    def from_vector(cls, v) -> "LineHyperParams":
        v = [float(x) for x in v]
        return cls(RBFParams(v[0], v[1]), RBFParams(v[2], v[3]), *v[4:])

    def to_dict(self) -> dict:
        return dict(zip(self.NAMES, self.to_vector().tolist()))

    @classmethod
    def from_dict(cls, d: dict) -> "LineHyperParams":
        return cls.from_vector([d[k] for k in cls.NAMES])

    def noise(self, channel: str) -> float:
        return getattr(self, "noise_" + channel.replace("_", ""))

    def replace(self, **changes) -> "LineHyperParams":
        d = {f.name: getattr(self, f.name) for f in fields(self)}
        d.update(changes)
        return LineHyperParams(**d)


def rbf(t, t2, p: RBFParams):
    """``variance * exp(-0.5 * weight * (t - t2)**2)``, broadcasting."""
    tau = np.subtract(t, t2)
    return p.variance * np.exp(-0.5 * p.weight * tau * tau)


def rbf_derivatives(t, t2, p: RBFParams):
    """``(dk/dt, dk/dt2, d2k/dt dt2)`` of :func:`rbf`."""
    tau = np.subtract(t, t2)
    k = p.variance * np.exp(-0.5 * p.weight * tau * tau)
    w = p.weight
    return -w * tau * k, w * tau * k, w * (1.0 - w * tau * tau) * k


def _check(channel: str) -> None:
    if channel not in CHANNELS:
        raise UnknownChannel(channel)


def cross_kernel(a: str, b: str, t, t2, theta: LineHyperParams):
    """Covariance ``cov(a(t), b(t2))`` between two measurement channels."""
    _check(a)
    _check(b)
    pI, pV = theta.current_kernel, theta.voltage_kernel
    R, L = theta.R, theta.L
    t = np.asarray(t, dtype=float)
    t2 = np.asarray(t2, dtype=float)
    shape = np.broadcast(t, t2).shape
    if {a, b} == {"i_i", "v_j"}:
        return np.zeros(shape)
    if a == b == "i_i":
        return rbf(t, t2, pI)
    if a == b == "v_j":
        return rbf(t, t2, pV)
    if "v_j" in (a, b):  # (v_i, v_j) or (v_j, v_i)
        return rbf(t, t2, pV)
    kI = rbf(t, t2, pI)
    d1, d2, d12 = rbf_derivatives(t, t2, pI)
    if a == "v_i" and b == "i_i":
        return R * kI + L * d1
    if a == "i_i" and b == "v_i":
        return R * kI + L * d2
    # (v_i, v_i)
    return R * R * kI + R * L * (d1 + d2) + L * L * d12 + rbf(t, t2, pV)


def _as_times(T, name: str) -> np.ndarray:
    T = np.atleast_1d(np.asarray(T, dtype=float))
    if T.size == 0:
        raise EmptyChannel(f"channel {name} has no time points")
    return T


def assemble_joint(T_ii, T_vj, T_vi, theta: LineHyperParams) -> np.ndarray:
    """Noise-free joint training kernel, blocks ordered ``[i_i, v_j, v_i]``."""
    times = [_as_times(T, c) for T, c in zip((T_ii, T_vj, T_vi), CHANNELS)]
    blocks = [[None] * 3 for _ in range(3)]
    for r, (ca, Ta) in enumerate(zip(CHANNELS, times)):
        for c in range(r, 3):
            cb, Tb = CHANNELS[c], times[c]
            blk = cross_kernel(ca, cb, Ta[:, None], Tb[None, :], theta)
            blocks[r][c] = blk
            if c != r:
                blocks[c][r] = blk.T
    K = np.block(blocks)
    # diagonal blocks are symmetric analytically; remove rounding asymmetry
    return 0.5 * (K + K.T)


def noise_diagonal(n_ii: int, n_vj: int, n_vi: int, theta: LineHyperParams) -> np.ndarray:
    return np.concatenate([
        np.full(n_ii, theta.noise_ii), np.full(n_vj, theta.noise_vj), np.full(n_vi, theta.noise_vi),
    ])


def cross_vectors(channel: str, t_star, T_ii, T_vj, T_vi, theta: LineHyperParams) -> np.ndarray:
    """Rows ``q_s(t*)`` against the training blocks; shape ``(len(t_star), N)``
    (a 1-D vector for scalar ``t_star``)."""
    _check(channel)
    ts = np.asarray(t_star, dtype=float)
    scalar = ts.ndim == 0
    ts = np.atleast_1d(ts)
    times = [_as_times(T, c) for T, c in zip((T_ii, T_vj, T_vi), CHANNELS)]
    Q = np.hstack([
        cross_kernel(channel, cb, ts[:, None], Tb[None, :], theta)
        for cb, Tb in zip(CHANNELS, times)
    ])
    return Q[0] if scalar else Q


def prior_variance(channel: str, theta: LineHyperParams) -> float:
    """``k_s(t, t)`` for a channel (stationary, so independent of ``t``)."""
    return float(cross_kernel(channel, channel, 0.0, 0.0, theta))


__all__ = [
    "CHANNELS", "RBFParams", "LineHyperParams", "rbf", "rbf_derivatives", "cross_kernel",
    "assemble_joint", "noise_diagonal", "cross_vectors", "prior_variance",
]
