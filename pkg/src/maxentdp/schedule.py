"""Variance-preserving noise schedule.

The forward kernel is ``p(a_t | a_0) = N(sqrt(s(t)) a_0, (1 - s(t)) I)`` where
``s(t) = sigmoid(alpha_t)`` is the signal variance and ``alpha_t`` the log-SNR.
We use the linear-beta VP process: ``s(t) = exp(-B(t))`` with
``B(t) = beta_min t + (beta_max - beta_min) t^2 / 2``.  Everything is closed form.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit


def _check_time(t) -> np.ndarray:
    t = np.asarray(t, dtype=np.float64)
    if np.any(~np.isfinite(t)) or np.any(t < 0.0) or np.any(t > 1.0):
        raise ValueError(f"diffusion time must lie in [0, 1], got {t}")
    return t


def variances_from_log_snr(alpha):
    """(sigmoid(alpha), sigmoid(-alpha)): signal and noise variance at log-SNR alpha."""
    alpha = np.asarray(alpha, dtype=np.float64)
    return expit(alpha), expit(-alpha)


@dataclass(frozen=True)
class NoiseSchedule:
    beta_min: float = 0.1
    beta_max: float = 20.0
    t_min: float = 1e-3
    t_max: float = 0.9946

    def __post_init__(self):
        if not self.beta_min > 0:
            raise ValueError("beta_min must be positive")
        if not self.beta_max > self.beta_min:
            raise ValueError("beta_max must exceed beta_min")
        if not 0.0 <= self.t_min < self.t_max <= 1.0:
            raise ValueError("need 0 <= t_min < t_max <= 1")

    def beta(self, t):
        t = _check_time(t)
        return self.beta_min + t * (self.beta_max - self.beta_min)

    def integrated_beta(self, t):
        t = _check_time(t)
        return self.beta_min * t + 0.5 * (self.beta_max - self.beta_min) * t * t

    def log_snr(self, t):
        """alpha_t = log(s / (1 - s)); +inf at t = 0."""
        b = self.integrated_beta(t)
        with np.errstate(divide="ignore"):
            return -np.log(np.expm1(b))

    def signal_and_noise_var(self, t):
        """Return ``(sigmoid(alpha_t), sigmoid(-alpha_t))``.

        Computed from ``B(t)`` directly so the pair sums to one without
        cancellation at either end of the time range.
        """
        b = self.integrated_beta(t)
        return np.exp(-b), -np.expm1(-b)

    def signal_var(self, t):
        return np.exp(-self.integrated_beta(t))

    def noise_var(self, t):
        return -np.expm1(-self.integrated_beta(t))

    def drift_diffusion(self, t):
        """Return ``(f(t), g^2(t))`` of the VP SDE.

        ``f = 0.5 d/dt log s(t) = -beta(t)/2`` and ``g^2 = -d/dt log s(t) = beta(t)``.
        """
        b = self.beta(t)
        return -0.5 * b, b

    def perturb(self, a0, t, eps):
        a0 = np.asarray(a0, dtype=np.float64)
        eps = np.asarray(eps, dtype=np.float64)
        if a0.shape != eps.shape:
            raise ValueError(f"noise shape {eps.shape} does not match action shape {a0.shape}")
        s, n = self.signal_and_noise_var(t)
        s = np.asarray(s)
        n = np.asarray(n)
        if s.ndim and a0.ndim > s.ndim:
            s = s[..., None]
            n = n[..., None]
        return np.sqrt(s) * a0 + np.sqrt(n) * eps

    def uniform_grid(self, T: int) -> np.ndarray:
        """T + 1 equally spaced times from t_min to t_max inclusive."""
        if int(T) != T or T < 1:
            raise ValueError(f"grid needs T >= 1 intervals, got {T}")
        T = int(T)
        grid = self.t_min + (np.arange(T + 1) / T) * (self.t_max - self.t_min)
        grid[-1] = self.t_max
        return grid
