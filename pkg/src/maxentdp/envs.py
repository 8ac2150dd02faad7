"""Desk-scale tasks and the closed-form oracles used to check the estimators.

* :class:`MultiGoalEnv` - 2-D point mass with four goals; action is a velocity in ``[-1, 1]^2``.
* :class:`GaussianMixture` - the four-mode target used for the static-Q task; its
  noised density under the VP kernel is again a Gaussian mixture, so the true score
  and log-density are available in closed form.
* :class:`StandardNormalNoise` - the exact noise predictor for ``p(a_0) = N(0, I)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from .schedule import NoiseSchedule

LOG_2PI = np.log(2.0 * np.pi)


@dataclass(frozen=True)
class GaussianMixture:
    means: np.ndarray = field(
        default_factory=lambda: np.array([[-0.5, -0.5], [-0.5, 0.5], [0.5, 0.5], [0.5, -0.5]])
    )
    std: float = 0.1
    weights: np.ndarray = field(default_factory=lambda: np.full(4, 0.25))

    def __post_init__(self):
        object.__setattr__(self, "means", np.atleast_2d(np.asarray(self.means, dtype=np.float64)))
        object.__setattr__(self, "weights", np.asarray(self.weights, dtype=np.float64))
        if not self.std > 0:
            raise ValueError("mixture std must be positive")
        if abs(self.weights.sum() - 1.0) > 1e-12 or np.any(self.weights < 0):
            raise ValueError("mixture weights must be non-negative and sum to 1")

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    def _noised(self, t, schedule):
        if t is None:
            return self.means, self.std**2
        s, n = schedule.signal_and_noise_var(t)
        return np.sqrt(s) * self.means, s * self.std**2 + n

    def _component_logpdf(self, a, centers, var):
        """Per-component log densities stacked on a leading axis: shape (components, ...)."""
        a = np.asarray(a, dtype=np.float64)
        # ||a - c||^2 expanded; components lead so reductions run over contiguous slabs
        const = np.log(self.weights) - 0.5 * (centers * centers).sum(-1) / var - 0.5 * self.dim * (LOG_2PI + np.log(var))
        lp = np.tensordot(centers / var, a, axes=(1, -1))
        lp += const.reshape((-1,) + (1,) * (a.ndim - 1))
        lp -= (0.5 / var) * np.einsum("...i,...i->...", a, a)
        return lp

    def log_prob(self, a, t=None, schedule: NoiseSchedule | None = None):
        """log p(a), or log p_t(a) of the noised mixture when ``t`` is given."""
        centers, var = self._noised(t, schedule)
        lp = self._component_logpdf(a, centers, var)
        m = lp.max(axis=0)
        lp -= m
        np.exp(lp, out=lp)
        return m + np.log(lp.sum(axis=0))

    def score(self, a, t=None, schedule: NoiseSchedule | None = None):
        """Exact grad log p_t(a); ``t=None`` means the clean density."""
        a = np.asarray(a, dtype=np.float64)
        centers, var = self._noised(t, schedule)
        lp = np.moveaxis(self._component_logpdf(a, centers, var), 0, -1)
        resp = np.exp(lp - logsumexp(lp, axis=-1, keepdims=True))
        return -(resp[..., None] * (a[..., None, :] - centers)).sum(-2) / var

    def posterior_normalizer(self, a_t, t, schedule: NoiseSchedule):
        """Z(a_t) = E_{a0 ~ N(a_t/sqrt(s), n/s I)}[p(a0)] in closed form (convolution of Gaussians)."""
        s, n = schedule.signal_and_noise_var(t)
        centers = np.asarray(a_t, dtype=np.float64) / np.sqrt(s)
        var = self.std**2 + n / s
        d2 = ((centers[..., None, :] - self.means) ** 2).sum(-1)
        lp = np.log(self.weights) - 0.5 * d2 / var - 0.5 * self.dim * (LOG_2PI + np.log(var))
        return np.exp(logsumexp(lp, axis=-1))


@dataclass(frozen=True)
class MixtureQ:
    """Static Q(a) = beta * log p(a), so exp(Q / beta) is exactly the mixture density."""

    beta: float = 0.05
    mixture: GaussianMixture = field(default_factory=GaussianMixture)

    def __call__(self, s, a):
        return self.beta * self.mixture.log_prob(a)

    def grad(self, s, a):
        return self.beta * self.mixture.score(a)


@dataclass(frozen=True)
class QuadraticQ:
    """Q(a) = -c * ||a - center||^2."""

    c: float = 25.0
    center: float = 0.0

    def __call__(self, s, a):
        return -self.c * ((np.asarray(a) - self.center) ** 2).sum(-1)

    def grad(self, s, a):
        return -2.0 * self.c * (np.asarray(a) - self.center)


class StandardNormalNoise:
    """Exact noise target for p(a_0) = N(0, I): the marginal stays N(0, I), so eps*(a_t) = sqrt(1 - s_t) a_t."""

    def __init__(self, schedule: NoiseSchedule, action_dim: int = 2):
        self.schedule = schedule
        self.action_dim = action_dim
        self.state_dim = 0

    def __call__(self, a_t, t, s=None):
        a_t = np.asarray(a_t, dtype=np.float64)
        n = np.asarray(self.schedule.noise_var(t))
        if n.ndim:
            n = n.reshape(n.shape + (1,) * (a_t.ndim - n.ndim))
        return np.sqrt(n) * a_t


def standard_normal_logpdf(a):
    a = np.asarray(a, dtype=np.float64)
    return -0.5 * (a * a).sum(-1) - 0.5 * a.shape[-1] * LOG_2PI


@dataclass
class MultiGoalConfig:
    goals: tuple = ((5.0, 0.0), (-5.0, 0.0), (0.0, 5.0), (0.0, -5.0))
    velocity_cost: float = 0.05
    goal_radius: float = 1.0
    horizon: int = 50
    arena: float = 7.0
    init_std: float = 0.1
    dt: float = 1.0
    action_scale: float = 1.0


def multigoal_step(pos, action, cfg: MultiGoalConfig):
    """Vectorised transition.  Returns ``(next_pos, reward, at_goal, clipped)``."""
    pos = np.asarray(pos, dtype=np.float64)
    action = np.asarray(action, dtype=np.float64)
    clipped_action = np.clip(action, -1.0, 1.0)
    clipped = np.any(clipped_action != action, axis=-1)
    nxt = pos + cfg.dt * cfg.action_scale * clipped_action
    nxt = np.clip(nxt, -cfg.arena, cfg.arena)
    dist = goal_distances(nxt, cfg).min(-1)
    reward = -dist - cfg.velocity_cost * (clipped_action**2).sum(-1)
    return nxt, reward, dist <= cfg.goal_radius, clipped


def goal_distances(pos, cfg: MultiGoalConfig):
    goals = np.asarray(cfg.goals, dtype=np.float64)
    return np.linalg.norm(np.asarray(pos)[..., None, :] - goals, axis=-1)


class MultiGoalEnv:
    """Single-owner point-mass episode.  ``step`` returns (state, reward, terminated, truncated, info)."""

    state_dim = 2
    action_dim = 2
    action_low = -1.0
    action_high = 1.0

    def __init__(self, cfg: MultiGoalConfig | None = None):
        self.cfg = cfg or MultiGoalConfig()
        self.pos = np.zeros(2)
        self.t = 0

    def reset(self, rng: np.random.Generator):
        self.pos = rng.normal(0.0, self.cfg.init_std, size=2)
        self.pos = np.clip(self.pos, -self.cfg.arena, self.cfg.arena)
        self.t = 0
        return self.pos.copy()

    def step(self, action):
        nxt, reward, at_goal, clipped = multigoal_step(self.pos, action, self.cfg)
        self.pos = nxt
        self.t += 1
        terminated = bool(at_goal)
        truncated = (not terminated) and self.t >= self.cfg.horizon
        return nxt.copy(), float(reward), terminated, truncated, {"clipped": bool(clipped)}

    def get_state(self):
        return {"pos": self.pos.copy(), "t": self.t}

    def set_state(self, state):
        self.pos = np.asarray(state["pos"], dtype=np.float64).copy()
        self.t = int(state["t"])
