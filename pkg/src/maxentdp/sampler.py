"""Drawing actions from the diffusion policy.

Two reverse-time integrators on the uniform grid from ``t_max`` down to ``t_min``:
explicit Euler on the probability-flow ODE (``pf_ode``), and DDPM-style ancestral
steps (``ancestral``).  :func:`select_action` adds best-of-M selection by Q.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .schedule import NoiseSchedule

METHODS = ("pf_ode", "ancestral")


class SamplerError(FloatingPointError):
    def __init__(self, step: int, message: str):
        super().__init__(f"step {step}: {message}")
        self.step = step


@dataclass(frozen=True)
class SamplerConfig:
    method: str = "pf_ode"
    steps: int = 20
    low: float = -1.0
    high: float = 1.0
    clip_final: bool = True

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"sampler method must be one of {METHODS}")
        if self.steps < 1:
            raise ValueError("sampler needs at least one step")
        if not self.low < self.high:
            raise ValueError("action bounds need low < high")


def _check(a, step):
    if not np.all(np.isfinite(a)):
        raise SamplerError(step, "non-finite action during sampling")
    return a


def pf_ode_step(net, s, a_t, t_cur: float, t_next: float, schedule: NoiseSchedule, step: int = 0):
    """One Euler step of da/dt = f(t) a + g^2(t) eps_phi / (2 sqrt(1 - s(t))) from t_cur to t_next."""
    if t_next > t_cur:
        raise ValueError("reverse-time step needs t_next <= t_cur")
    if t_next == t_cur:
        return np.array(a_t, dtype=np.float64, copy=True)
    f, g2 = schedule.drift_diffusion(t_cur)
    eps = net(a_t, t_cur, s)
    drift = f * a_t + 0.5 * g2 * eps / np.sqrt(schedule.noise_var(t_cur))
    return _check(a_t + (t_next - t_cur) * drift, step)


def ancestral_step(
    net, s, a_t, t_cur: float, t_next: float, rng, schedule: NoiseSchedule, low=-1.0, high=1.0, final=False, step: int = 0
):
    """Gaussian posterior step q(a_next | a_t, a0_hat) with a0_hat clipped to the action box.

    The step variance is ``1 - s(t_cur)/s(t_next)`` (the forward increment's
    variance), and zero when ``final``.
    """
    if t_next > t_cur:
        raise ValueError("reverse-time step needs t_next <= t_cur")
    if t_next == t_cur:
        return np.array(a_t, dtype=np.float64, copy=True)
    s_c, n_c = schedule.signal_and_noise_var(t_cur)
    s_n, n_n = schedule.signal_and_noise_var(t_next)
    eps = net(a_t, t_cur, s)
    a0_hat = np.clip((a_t - np.sqrt(n_c) * eps) / np.sqrt(s_c), low, high)
    keep = s_c / s_n  # signal kept by the forward increment t_next -> t_cur
    inc = -np.expm1(np.log(s_c) - np.log(s_n))
    mean = (np.sqrt(s_n) * inc / n_c) * a0_hat + (np.sqrt(keep) * n_n / n_c) * a_t
    if final:
        return _check(mean, step)
    return _check(mean + np.sqrt(inc) * rng.standard_normal(np.shape(a_t)), step)


def sample_action(net, s, config: SamplerConfig, rng: np.random.Generator, schedule: NoiseSchedule, n: int | None = None):
    """Integrate from ``a ~ N(0, I)`` at t_max down to t_min.

    ``s`` is ``(B, state_dim)`` (or ``None`` for state-free nets); ``n`` sets the
    batch size when ``s`` is ``None``.
    """
    if s is not None:
        s = np.atleast_2d(np.asarray(s, dtype=np.float64))
        B = s.shape[0]
    else:
        B = 1 if n is None else n
    a = rng.standard_normal((B, net.action_dim))
    grid = schedule.uniform_grid(config.steps)
    for k in range(config.steps, 0, -1):
        step = config.steps - k
        if config.method == "pf_ode":
            a = pf_ode_step(net, s, a, grid[k], grid[k - 1], schedule, step)
        else:
            a = ancestral_step(net, s, a, grid[k], grid[k - 1], rng, schedule, config.low, config.high, k == 1, step)
    if config.clip_final:
        a = np.clip(a, config.low, config.high)
    return a


def select_action(net, Q, s, M: int, config: SamplerConfig, rng: np.random.Generator, schedule: NoiseSchedule):
    """Best-of-M: draw M candidates per state and keep the one with the largest Q.

    Ties go to the lowest candidate index.  Returns ``(actions, q_values)``.
    """
    if M < 1:
        raise ValueError("need at least one candidate")
    s = np.atleast_2d(np.asarray(s, dtype=np.float64))
    B = s.shape[0]
    s_rep = np.repeat(s, M, axis=0)
    cand = sample_action(net, s_rep, config, rng, schedule).reshape(B, M, -1)
    q = np.asarray(Q(s_rep, cand.reshape(B * M, -1))).reshape(B, M)
    best = np.argmax(q, axis=1)
    rows = np.arange(B)
    return cand[rows, best], q[rows, best]
