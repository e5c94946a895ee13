"""Noise schedules and the forward / x0-recovery affine maps.

Timesteps are 1-based: t in [1, T], stored at array index t-1. The value
alpha_bar at "t=0" is treated as 1 (clean data).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class ScheduleError(Exception):
    pass


class RangeError(Exception):
    pass


@dataclass(frozen=True)
class NoiseSchedule:
    betas: np.ndarray       # (T,)
    alphas: np.ndarray      # (T,)
    alpha_bars: np.ndarray  # (T,) strictly decreasing
    sigmas: np.ndarray      # (T,) DDPM posterior stds, sigma_1 forced to 0

    @property
    def T(self) -> int:
        return self.betas.shape[0]

    def at(self, t: int):
        """(alpha_t, alpha_bar_t, sigma_t) for 1-based t."""
        if not 1 <= t <= self.T:
            raise RangeError(f"t={t} outside [1, {self.T}]")
        return self.alphas[t - 1], self.alpha_bars[t - 1], self.sigmas[t - 1]


def make_schedule(T: int, beta_start: float = 1e-4, beta_end: float = 0.02,
                  kind: str = "linear") -> NoiseSchedule:
    if T < 1:
        raise ScheduleError("T must be >= 1")
    if not (0 < beta_start <= beta_end < 1):
        raise ScheduleError(f"need 0 < beta_start <= beta_end < 1, got ({beta_start}, {beta_end})")
    if kind == "linear":
        betas = np.linspace(beta_start, beta_end, T)
    elif kind == "cosine":
        # squared-cosine alpha_bar profile, betas clipped into the given range
        s = 0.008
        ts = np.arange(T + 1) / T
        ab = np.cos((ts + s) / (1 + s) * np.pi / 2) ** 2
        betas = np.clip(1 - ab[1:] / ab[:-1], beta_start, beta_end)
    else:
        raise ScheduleError(f"unknown schedule kind {kind!r}")
    alphas = 1.0 - betas
    alpha_bars = np.cumprod(alphas)
    prev = np.concatenate([[1.0], alpha_bars[:-1]])
    sigmas = np.sqrt(betas * (1 - prev) / (1 - alpha_bars))
    sigmas[0] = 0.0  # final reverse step is deterministic
    return NoiseSchedule(betas, alphas, alpha_bars, sigmas)


def forward_noise(x0: np.ndarray, t: int, eps: np.ndarray, sched: NoiseSchedule) -> np.ndarray:
    """x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) eps."""
    if x0.shape != eps.shape:
        raise RangeError(f"shape mismatch {x0.shape} vs {eps.shape}")
    _, ab, _ = sched.at(t)
    return np.sqrt(ab) * x0 + np.sqrt(1 - ab) * eps


def ddim_x0(x_t: np.ndarray, eps_pred: np.ndarray, t: int, sched: NoiseSchedule) -> np.ndarray:
    """First-order estimate of the clean sample from (x_t, predicted noise)."""
    _, ab, _ = sched.at(t)
    return (x_t - np.sqrt(1 - ab) * eps_pred) / np.sqrt(ab)
