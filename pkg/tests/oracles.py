"""Independent reference computations used by the tests.

These do not call the package's closed-form mixture code: noised densities and
scores come from brute-force quadrature over the clean action, and the Fisher
scale from Monte Carlo.
"""

import numpy as np

MEANS = np.array([[-0.5, -0.5], [-0.5, 0.5], [0.5, 0.5], [0.5, -0.5]])
STD = 0.1


def clean_mixture_pdf(a, means=MEANS, std=STD, weights=None):
    a = np.asarray(a, dtype=np.float64)
    weights = np.full(len(means), 1.0 / len(means)) if weights is None else np.asarray(weights)
    total = 0.0
    for w, m in zip(weights, means):
        d2 = ((a - m) ** 2).sum(-1)
        total = total + w * np.exp(-0.5 * d2 / std**2) / (2 * np.pi * std**2)
    return total


def quadrature_score(a_t, s, n, half_width=1.5, size=400):
    """grad log p_t(a_t) with p_t(a_t) = int p0(a0) N(a_t; sqrt(s) a0, n I) da0, on a size x size grid."""
    g = np.linspace(-half_width, half_width, size)
    X, Y = np.meshgrid(g, g, indexing="ij")
    a0 = np.stack([X, Y], -1)
    p0 = clean_mixture_pdf(a0)
    out = []
    for p in np.atleast_2d(a_t):
        diff = p - np.sqrt(s) * a0
        k = p0 * np.exp(-0.5 * (diff**2).sum(-1) / n)
        out.append((k[..., None] * (-diff / n)).sum((0, 1)) / k.sum())
    return np.array(out)


def quadrature_normalizer(a_t, s, n, half_width=1.5, size=400):
    """Z(a_t) = E_{a0 ~ N(a_t / sqrt(s), n / s I)} p0(a0) by grid quadrature."""
    g = np.linspace(-half_width, half_width, size)
    da = (g[1] - g[0]) ** 2
    X, Y = np.meshgrid(g, g, indexing="ij")
    a0 = np.stack([X, Y], -1)
    p0 = clean_mixture_pdf(a0)
    v = n / s
    out = []
    for p in np.atleast_2d(a_t):
        d2 = ((a0 - p / np.sqrt(s)) ** 2).sum(-1)
        out.append((p0 * np.exp(-0.5 * d2 / v) / (2 * np.pi * v)).sum() * da)
    return np.array(out)


def score_rms(score_fn, s, n, draws=200_000, seed=0):
    """sqrt(E_{p_t} ||score||^2): the typical score magnitude under the noised mixture."""
    rng = np.random.default_rng(seed)
    comp = rng.integers(len(MEANS), size=draws)
    a0 = MEANS[comp] + STD * rng.standard_normal((draws, 2))
    a_t = np.sqrt(s) * a0 + np.sqrt(n) * rng.standard_normal((draws, 2))
    sc = score_fn(a_t)
    return float(np.sqrt((sc**2).sum(-1).mean()))


class ScaledGaussianNoise:
    """Exact noise predictor for p(a0) = N(0, v I): eps*(a_t) = sqrt(n) a_t / (s v + n)."""

    def __init__(self, schedule, v, action_dim=2):
        self.schedule = schedule
        self.v = v
        self.action_dim = action_dim
        self.state_dim = 0

    def __call__(self, a_t, t, s=None):
        sig, n = self.schedule.signal_and_noise_var(np.asarray(t, dtype=np.float64))
        sig, n = np.asarray(sig), np.asarray(n)
        if sig.ndim:
            sig, n = sig[..., None], n[..., None]
        return np.sqrt(n) * np.asarray(a_t) / (sig * self.v + n)


def energy_distance(x, y):
    """2 E|X - Y| - E|X - X'| - E|Y - Y'| for samples in R^d."""
    def mean_dist(a, b):
        return np.linalg.norm(a[:, None, :] - b[None, :, :], axis=-1).mean()

    return 2 * mean_dist(x, y) - mean_dist(x, x) - mean_dist(y, y)
