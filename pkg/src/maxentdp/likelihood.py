"""Log-probability of a diffusion policy by numerical integration over the signal variance.

With ``s_i = sigmoid(alpha_{t_i})`` on the uniform grid ``t_0 < ... < t_T``:

    log p(a0) ≈ -d/2 log(2 pi e) + 1/2 sum_i w_i (d s_i - err_i),
    w_i = (s_{i-1} - s_i) / (s_i (1 - s_i)),
    err_i = 1/N sum_j ||eps_j - eps_phi(sqrt(s_i) a0 + sqrt(1 - s_i) eps_j, t_i)||^2.

The sum is a left-endpoint rule in ``s``.  ``net`` below is any callable
``net(a_t, t, s) -> eps`` (a :class:`~maxentdp.networks.NoisePredictionNet` or an
analytic stand-in).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import chi2

from .schedule import NoiseSchedule

NOISE_MODES = ("iid", "stratified")
DEFAULT_SCHEDULE = NoiseSchedule()


@dataclass(frozen=True)
class LikelihoodConfig:
    T: int = 20
    N: int = 50
    noise: str = "stratified"
    max_rows: int = 200_000  # rows per network call; bounds peak memory

    def __post_init__(self):
        if self.T < 1 or self.N < 1:
            raise ValueError("likelihood needs T >= 1 and N >= 1")
        if self.noise not in NOISE_MODES:
            raise ValueError(f"noise must be one of {NOISE_MODES}")


@dataclass
class LogProbEstimate:
    value: np.ndarray  # (B,) nats
    contributions: np.ndarray  # (B, T): w_i (d s_i - err_i)


def log_constant(d: int) -> float:
    """c' = -(d/2) log(2 pi e)."""
    return -0.5 * d * np.log(2.0 * np.pi * np.e)


def integration_weight(schedule: NoiseSchedule, t_prev, t_cur):
    """w = (s(t_prev) - s(t_cur)) / (s(t_cur) (1 - s(t_cur)))."""
    t_prev = np.asarray(t_prev, dtype=np.float64)
    t_cur = np.asarray(t_cur, dtype=np.float64)
    if np.any(t_prev > t_cur):
        raise ValueError("integration interval must run forward in time (t_prev <= t_cur)")
    s_prev = schedule.signal_var(t_prev)
    s_cur, n_cur = schedule.signal_and_noise_var(t_cur)
    return weight_from_signal(s_prev, s_cur, n_cur)


def weight_from_signal(s_prev, s_cur, n_cur=None):
    s_prev = np.asarray(s_prev, dtype=np.float64)
    s_cur = np.asarray(s_cur, dtype=np.float64)
    if np.any(s_prev < s_cur):
        raise ValueError("signal variance must not increase across the interval")
    if n_cur is None:
        n_cur = 1.0 - s_cur
    return (s_prev - s_cur) / (s_cur * n_cur)


def draw_noise(rng: np.random.Generator, shape, mode: str = "iid"):
    """Standard-normal noise of ``shape = (..., N, d)``.

    ``"stratified"`` draws the N squared radii from the N equal-probability strata
    of the chi-square(d) law (randomly permuted, uniform directions), so each
    vector is still marginally N(0, I) but the batch's mean ``||eps||^2`` is pinned
    close to ``d``.
    """
    if mode == "iid":
        return rng.standard_normal(shape)
    *lead, N, d = shape
    direction = rng.standard_normal(shape)
    direction /= np.linalg.norm(direction, axis=-1, keepdims=True)
    u = (rng.permuted(np.broadcast_to(np.arange(N), (*lead, N)), axis=-1) + rng.random((*lead, N))) / N
    radius = np.sqrt(chi2.ppf(u, d))
    return direction * radius[..., None]


def _predict(net, a_t, t, s, max_rows):
    rows = a_t.shape[0]
    if rows <= max_rows:
        return net(a_t, t, s)
    out = np.empty_like(a_t)
    for lo in range(0, rows, max_rows):
        hi = lo + max_rows
        out[lo:hi] = net(a_t[lo:hi], t[lo:hi], None if s is None else s[lo:hi])
    return out


def noise_pred_error(
    net, s, a0, t, N: int, rng: np.random.Generator, schedule: NoiseSchedule | None = None, noise=None, mode: str = "iid"
):
    """Monte Carlo estimate of E||eps - eps_phi(a_t, t, s)||^2 with ``a_t = perturb(a0, t, eps)``.

    ``a0`` is ``(B, d)``; returns ``(B,)``.  ``noise`` of shape ``(B, N, d)`` overrides the draw.
    """
    schedule = schedule or DEFAULT_SCHEDULE
    a0 = np.atleast_2d(np.asarray(a0, dtype=np.float64))
    if noise is None:
        if N < 1:
            raise ValueError("need N >= 1 noise samples")
        noise = draw_noise(rng, (a0.shape[0], N, a0.shape[1]), mode)
    return _step_error(net, s, a0, t, noise, schedule, 200_000)


def log_prob(
    net,
    s,
    a0,
    config: LikelihoodConfig = LikelihoodConfig(),
    rng=None,
    schedule: NoiseSchedule | None = None,
) -> LogProbEstimate:
    """Estimate log pi(a0 | s) for every row of ``a0``.

    ``rng`` is a generator, or a list of generators (one per row) for
    batch-independent results.  Fresh noise is drawn for every step and sample.
    """
    schedule = schedule or DEFAULT_SCHEDULE
    a0 = np.atleast_2d(np.asarray(a0, dtype=np.float64))
    B, d = a0.shape
    T, N = config.T, config.N
    if isinstance(rng, (list, tuple)):
        if len(rng) != B:
            raise ValueError("need one generator per batch item")
        noise = np.stack([draw_noise(r, (T, N, d), config.noise) for r in rng], axis=1)
    else:
        noise = draw_noise(rng, (T, B, N, d), config.noise)
    grid = schedule.uniform_grid(T)
    sig = schedule.signal_var(grid)
    contributions = np.empty((B, T))
    for i in range(1, T + 1):
        contributions[:, i - 1] = step_contribution(net, s, a0, grid[i - 1], grid[i], noise[i - 1], schedule, config.max_rows, sig[i - 1], sig[i])
    value = log_constant(d) + 0.5 * contributions.sum(axis=1)
    return LogProbEstimate(value, contributions)


def step_contribution(net, s, a0, t_prev, t_cur, noise, schedule: NoiseSchedule, max_rows=200_000, s_prev=None, s_cur=None):
    """One term ``w_i (d s_i - err_i)`` of the left-endpoint sum, using the given noise ``(B, N, d)``."""
    d = a0.shape[1]
    if s_prev is None:
        s_prev = schedule.signal_var(t_prev)
    if s_cur is None:
        s_cur = schedule.signal_var(t_cur)
    w = weight_from_signal(s_prev, s_cur, schedule.noise_var(t_cur))
    err = _step_error(net, s, a0, t_cur, noise, schedule, max_rows)
    return w * (d * s_cur - err)


def _step_error(net, s, a0, t, noise, schedule, max_rows):
    B, N, d = noise.shape
    sig, nvar = np.sqrt(schedule.signal_var(t)), np.sqrt(schedule.noise_var(t))
    a_t = (sig * a0[:, None, :] + nvar * noise).reshape(B * N, d)
    s_rep = None
    if s is not None:
        s = np.asarray(s, dtype=np.float64)
        if s.ndim == 1:
            s = np.broadcast_to(s, (B, s.shape[0]))
        s_rep = np.repeat(s, N, axis=0)
    pred = _predict(net, a_t, np.full(B * N, float(t)), s_rep, max_rows).reshape(B, N, d)
    diff = noise - pred
    return (diff * diff).sum(-1).mean(-1)


def entropy_term(net, s, actions, config: LikelihoodConfig = LikelihoodConfig(), rng=None, schedule=None):
    """log pi(a'|s') for the Bellman target (the caller multiplies by beta)."""
    return log_prob(net, s, actions, config, rng, schedule).value
