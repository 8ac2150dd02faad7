"""Training targets for the noise-prediction network.

Given a Q-function, the policy target is ``pi(a) ∝ exp(Q(a) / beta)``.  For a noisy
action ``a_t`` the reverse posterior is ``p(a0 | a_t) ∝ exp(Q(a0)/beta) N(a0 | a_t/sqrt(s), n/s I)``
(``s``, ``n`` the signal and noise variances at ``t``), so writing
``a0 = a_t/sqrt(s) + sqrt(n/s) eps`` turns the score into an expectation over ``eps``:

    grad log p_t(a_t) = E[w(a0) eps] / sqrt(n),    w = exp(Q/beta) / Z(a_t).

:func:`qne_target` is the self-normalised version of that expectation, the Q-weighted
noise estimate.  :func:`is_score_estimate` is the plain importance-sampling form (it
needs ``Z``), and :func:`idem_target` / :func:`qsm_target` are the gradient-based
comparators.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy.special import log_ndtr, ndtri, ndtri_exp

from .schedule import NoiseSchedule

DEFAULT_SCHEDULE = NoiseSchedule()
# below this log F(a) the linear-space inverse CDF underflows; switch to log space
LOG_CDF_FLOOR = -600.0


class NonFiniteQError(FloatingPointError):
    """Q stayed non-finite on a candidate after one resample."""


def sample_truncated_standard_normal(lo, hi, rng: np.random.Generator, size=None):
    """Draw N(0, 1) conditioned on ``[lo, hi]`` per coordinate by inverse CDF.

    Works in log-CDF space and reflects intervals lying in the upper tail, so
    bounds far out in either tail (e.g. ``[8, 12]``) still sample correctly.
    ``size`` (broadcast-compatible with the bounds) draws several values per
    interval while evaluating the CDF only once per interval.
    """
    lo, hi = np.broadcast_arrays(np.asarray(lo, dtype=np.float64), np.asarray(hi, dtype=np.float64))
    if np.any(~(lo < hi)):
        raise ValueError("truncation bounds need lo < hi in every coordinate")
    flip = lo > 0
    a = np.where(flip, -hi, lo)
    b = np.where(flip, -lo, hi)
    log_fa = log_ndtr(a)
    log_fb = log_ndtr(b)
    u = rng.random(lo.shape if size is None else size)
    if np.all(log_fa > LOG_CDF_FLOOR):
        # F(a) is a normal float everywhere, so plain ndtri is exact enough and cheaper
        fa = np.exp(log_fa)
        u *= np.exp(log_fb) - fa
        u += fa
        x = ndtri(u)
    else:
        # log(F(a) + u (F(b) - F(a))) without leaving log space
        ratio = np.exp(log_fa - log_fb)
        log_p = (1.0 - u) * ratio
        log_p += u
        np.log(log_p, out=log_p)
        log_p += log_fb
        x = ndtri_exp(log_p)
    np.maximum(x, a, out=x)
    np.minimum(x, b, out=x)
    if flip.any():
        x = np.where(flip, -x, x)
    return x


@dataclass
class CandidateSet:
    noise: np.ndarray  # (B, K, d)
    actions: np.ndarray  # (B, K, d)
    q: np.ndarray | None = None  # (B, K)
    weights: np.ndarray | None = None  # (B, K)


def _prep(a_t, t, schedule):
    a_t = np.atleast_2d(np.asarray(a_t, dtype=np.float64))
    t = np.broadcast_to(np.asarray(t, dtype=np.float64), a_t.shape[:1])
    s, n = schedule.signal_and_noise_var(t)
    return a_t, t, np.sqrt(s)[:, None, None], np.sqrt(n)[:, None, None]


def _noise_bounds(a_t, sqrt_s, sqrt_n, bounds):
    lo, hi = bounds
    a = a_t[:, None, :]
    return (lo * sqrt_s - a) / sqrt_n, (hi * sqrt_s - a) / sqrt_n


def candidate_actions(
    a_t, t, K: int, bounds=(-1.0, 1.0), rng: np.random.Generator | None = None, schedule: NoiseSchedule = DEFAULT_SCHEDULE
) -> CandidateSet:
    """K posterior-proposal candidates ``a0 = a_t/sqrt(s) + sqrt(n/s) eps`` per row of ``a_t``.

    With ``bounds`` the noise is truncated so every candidate lands inside the box;
    ``bounds=None`` draws plain standard normals.
    """
    if K < 1:
        raise ValueError("need at least one candidate")
    a_t, t, sqrt_s, sqrt_n = _prep(a_t, t, schedule)
    if not np.all(np.isfinite(a_t)):
        raise ValueError("noisy action must be finite")
    B, d = a_t.shape
    if bounds is None:
        eps = rng.standard_normal((B, K, d))
    else:
        lo, hi = _noise_bounds(a_t, sqrt_s, sqrt_n, bounds)
        eps = sample_truncated_standard_normal(lo, hi, rng, size=(B, K, d))
    acts = a_t[:, None, :] / sqrt_s + (sqrt_n / sqrt_s) * eps
    if bounds is not None:
        acts = np.clip(acts, bounds[0], bounds[1])
    return CandidateSet(eps, acts)


def softmax_weights(q, beta: float):
    """Row-wise softmax(q / beta) with max subtraction."""
    z = np.asarray(q, dtype=np.float64) / beta
    z = z - z.max(axis=-1, keepdims=True)
    w = np.exp(z)
    return w / w.sum(axis=-1, keepdims=True)


def _expand_state(s, B, K):
    if s is None:
        return None
    s = np.asarray(s, dtype=np.float64)
    if s.ndim == 1:
        s = np.broadcast_to(s, (B, s.shape[0]))
    return s[:, None, :]


def _evaluate_q(Q, s, cands: CandidateSet, a_t, t, sqrt_s, sqrt_n, bounds, rng):
    B, K, _ = cands.actions.shape
    s_rep = _expand_state(s, B, K)
    q = np.asarray(Q(s_rep, cands.actions), dtype=np.float64)
    bad = ~np.isfinite(q)
    if bad.any():
        rows, cols = np.nonzero(bad)
        d = a_t.shape[1]
        if bounds is None:
            fresh = rng.standard_normal((rows.size, d))
        else:
            lo, hi = _noise_bounds(a_t, sqrt_s, sqrt_n, bounds)
            fresh = sample_truncated_standard_normal(lo[rows, 0], hi[rows, 0], rng)
        cands.noise[rows, cols] = fresh
        new_act = a_t[rows] / sqrt_s[rows, 0] + (sqrt_n[rows, 0] / sqrt_s[rows, 0]) * fresh
        if bounds is not None:
            new_act = np.clip(new_act, bounds[0], bounds[1])
        cands.actions[rows, cols] = new_act
        s_bad = None if s_rep is None else np.broadcast_to(s_rep, (B, K, s_rep.shape[-1]))[rows, cols]
        q_new = np.asarray(Q(s_bad, new_act), dtype=np.float64)
        if not np.all(np.isfinite(q_new)):
            raise NonFiniteQError(f"Q is non-finite on {int((~np.isfinite(q_new)).sum())} resampled candidate(s)")
        q[rows, cols] = q_new
    cands.q = q
    return q


def _per_item(fn, rngs: Sequence[np.random.Generator], a_t, t, s, **kw):
    a_t = np.atleast_2d(np.asarray(a_t, dtype=np.float64))
    t = np.broadcast_to(np.asarray(t, dtype=np.float64), a_t.shape[:1])
    if len(rngs) != a_t.shape[0]:
        raise ValueError("need one generator per batch item")
    s = None if s is None else np.asarray(s, dtype=np.float64)
    out = []
    for i, r in enumerate(rngs):
        si = s if s is None or s.ndim == 1 else s[i]
        out.append(fn(a_t=a_t[i : i + 1], t=t[i : i + 1], s=si, rng=r, **kw)[0])
    return np.stack(out)


def qne_target(
    Q: Callable,
    s,
    a_t,
    t,
    K: int = 500,
    beta: float = 0.05,
    bounds=(-1.0, 1.0),
    rng=None,
    schedule: NoiseSchedule = DEFAULT_SCHEDULE,
    return_candidates: bool = False,
):
    """Q-weighted noise estimate ``eps* = -sum_i softmax(Q(a0^i)/beta)_i eps^i``.

    ``a_t`` is ``(B, d)``; ``t`` a scalar or ``(B,)``.  ``rng`` may be a list of
    generators, one per row, in which case each row is computed from its own
    stream and the result does not depend on batch composition.
    """
    if not beta > 0:
        raise ValueError("temperature beta must be positive")
    if isinstance(rng, (list, tuple)):
        return _per_item(qne_target, rng, a_t, t, s, Q=Q, K=K, beta=beta, bounds=bounds, schedule=schedule)
    a_t, t, sqrt_s, sqrt_n = _prep(a_t, t, schedule)
    cands = candidate_actions(a_t, t, K, bounds, rng, schedule)
    q = _evaluate_q(Q, s, cands, a_t, t, sqrt_s, sqrt_n, bounds, rng)
    cands.weights = softmax_weights(q, beta)
    target = -np.einsum("bk,bkd->bd", cands.weights, cands.noise)
    if return_candidates:
        return target, cands
    return target


def is_score_estimate(
    Q: Callable, s, a_t, t, K: int, beta: float, Z, rng=None, schedule: NoiseSchedule = DEFAULT_SCHEDULE
):
    """Unbiased importance-sampling score ``(1/sqrt(n)) (1/K) sum_i w(a0^i) eps^i`` with ``w = exp(Q/beta)/Z``.

    Only usable when the normaliser ``Z(a_t)`` is known, i.e. on synthetic problems.
    """
    Z = np.asarray(Z, dtype=np.float64)
    if np.any(~(Z > 0)):
        raise ValueError("normaliser Z must be positive")
    a_t, t, sqrt_s, sqrt_n = _prep(a_t, t, schedule)
    cands = candidate_actions(a_t, t, K, None, rng, schedule)
    q = _evaluate_q(Q, s, cands, a_t, t, sqrt_s, sqrt_n, None, rng)
    w = np.exp(q / beta) / np.broadcast_to(Z, a_t.shape[:1])[:, None]
    return np.einsum("bk,bkd->bd", w, cands.noise) / K / sqrt_n[:, 0]


def finite_difference_grad(Q: Callable, s, a, h: float = 1e-5):
    a = np.asarray(a, dtype=np.float64)
    g = np.empty_like(a)
    for j in range(a.shape[-1]):
        step = np.zeros(a.shape[-1])
        step[j] = h
        g[..., j] = (Q(s, a + step) - Q(s, a - step)) / (2 * h)
    return g


def q_action_grad(Q: Callable, s, a):
    grad = getattr(Q, "grad", None)
    if grad is not None:
        return np.asarray(grad(s, a), dtype=np.float64)
    return finite_difference_grad(Q, s, a)


def idem_target(
    Q: Callable,
    s,
    a_t,
    t,
    K: int = 500,
    beta: float = 0.05,
    bounds=(-1.0, 1.0),
    rng=None,
    schedule: NoiseSchedule = DEFAULT_SCHEDULE,
):
    """Weighted-gradient comparator: score ≈ (1/sqrt(s)) sum_i softmax(Q/beta)_i grad Q(a0^i)/beta.

    Returned as a noise-prediction target, ``-sqrt(n) * score``.
    """
    if not beta > 0:
        raise ValueError("temperature beta must be positive")
    a_t, t, sqrt_s, sqrt_n = _prep(a_t, t, schedule)
    cands = candidate_actions(a_t, t, K, bounds, rng, schedule)
    q = _evaluate_q(Q, s, cands, a_t, t, sqrt_s, sqrt_n, bounds, rng)
    w = softmax_weights(q, beta)
    grads = q_action_grad(Q, _expand_state(s, *cands.actions.shape[:2]), cands.actions) / beta
    score = np.einsum("bk,bkd->bd", w, grads) / sqrt_s[:, 0]
    return -sqrt_n[:, 0] * score


def qsm_target(Q: Callable, s, a_t, t, beta: float = 0.05, schedule: NoiseSchedule = DEFAULT_SCHEDULE):
    """Direct-gradient comparator: score ≈ grad_{a_t} Q(a_t) / beta, target ``-sqrt(n) * score``."""
    a_t, t, _, sqrt_n = _prep(a_t, t, schedule)
    return -sqrt_n[:, 0] * q_action_grad(Q, s, a_t) / beta


def target_to_score(target, t, schedule: NoiseSchedule = DEFAULT_SCHEDULE):
    """Convert a noise-prediction target back to a score, ``-target / sqrt(n)``."""
    n = np.asarray(schedule.noise_var(t))
    return -np.asarray(target) / np.sqrt(n)[..., None]


@dataclass
class EstimatorReport:
    name: str
    mean: np.ndarray  # (P, d) mean target over repeats, per point
    std: np.ndarray  # (d,) per-coordinate sample std, averaged over points
    point_std: np.ndarray  # (P, d)
    K: int | None = None
    beta: float | None = None


def estimator_std(estimator: Callable, a_t, t, repeats: int, rng: np.random.Generator, name: str = "", K=None, beta=None):
    """Re-run ``estimator(a_t, t, rng) -> (P, d)`` ``repeats`` times and summarise the spread."""
    if repeats < 2:
        raise ValueError("need at least two repeats to measure spread")
    runs = np.stack([np.asarray(estimator(a_t, t, rng)) for _ in range(repeats)])
    point_std = runs.std(axis=0, ddof=1)
    return EstimatorReport(name, runs.mean(axis=0), point_std.mean(axis=0), point_std, K, beta)


def policy_loss_and_grad(net, s, a_t, t, target):
    """Mean over the batch of ``||eps_phi(a_t, t, s) - eps*||^2`` and its parameter gradients.

    ``target`` is a constant; no gradient flows through it.
    """
    pred, tape = net.forward(a_t, t, s)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ValueError(f"target shape {target.shape} != prediction shape {pred.shape}")
    diff = pred - target
    B = diff.reshape(-1, diff.shape[-1]).shape[0]
    loss = float((diff * diff).sum() / B)
    grads = net.backward(tape, 2.0 * diff / B)
    return loss, grads
