"""The two learned functions of the agent: the noise predictor and the critics."""

from __future__ import annotations

import numpy as np

from .netcore import EMBED_DIM, Mlp, time_embed


def _as_batch(x, n, width):
    if width == 0:
        return np.zeros((n, 0))
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = np.broadcast_to(x, (n, width))
    return x


class NoisePredictionNet:
    """eps_phi(a_t, t, s): input is the concatenation [a_t, time_embed(t), s]."""

    def __init__(self, action_dim: int, state_dim: int = 0, hidden=(256, 256), rng=None, mlp: Mlp | None = None):
        self.action_dim = int(action_dim)
        self.state_dim = int(state_dim)
        if mlp is None:
            mlp = Mlp([self.action_dim + EMBED_DIM + self.state_dim, *hidden, self.action_dim], rng)
        if mlp.in_dim != self.action_dim + EMBED_DIM + self.state_dim or mlp.out_dim != self.action_dim:
            raise ValueError("mlp widths do not match action/state dimensions")
        self.mlp = mlp

    def inputs(self, a_t, t, s=None):
        a_t = np.asarray(a_t, dtype=np.float64)
        lead = a_t.shape[:-1]
        a2 = a_t.reshape(-1, self.action_dim)
        n = a2.shape[0]
        t = np.broadcast_to(np.asarray(t, dtype=np.float64), lead).reshape(n)
        if self.state_dim:
            s = np.asarray(s, dtype=np.float64)
            s = np.broadcast_to(s, lead + (self.state_dim,)).reshape(n, self.state_dim)
            return np.concatenate([a2, time_embed(t), s], axis=1), lead
        return np.concatenate([a2, time_embed(t)], axis=1), lead

    def __call__(self, a_t, t, s=None):
        x, lead = self.inputs(a_t, t, s)
        return self.mlp(x).reshape(lead + (self.action_dim,))

    def forward(self, a_t, t, s=None):
        x, lead = self.inputs(a_t, t, s)
        out, tape = self.mlp.forward(x)
        return out.reshape(lead + (self.action_dim,)), tape

    def backward(self, tape, grad_out):
        grads, _ = self.mlp.backward(tape, np.asarray(grad_out).reshape(-1, self.action_dim))
        return grads


class Critic:
    """Q_theta(s, a) with input [s, a] and scalar output."""

    def __init__(self, state_dim: int, action_dim: int, hidden=(256, 256), rng=None, mlp: Mlp | None = None):
        self.state_dim = int(state_dim)
        self.action_dim = int(action_dim)
        if mlp is None:
            mlp = Mlp([self.state_dim + self.action_dim, *hidden, 1], rng)
        self.mlp = mlp

    def inputs(self, s, a):
        a = np.asarray(a, dtype=np.float64)
        lead = a.shape[:-1]
        a2 = a.reshape(-1, self.action_dim)
        if self.state_dim:
            s = np.broadcast_to(np.asarray(s, dtype=np.float64), lead + (self.state_dim,))
            return np.concatenate([s.reshape(-1, self.state_dim), a2], axis=1), lead
        return a2, lead

    def __call__(self, s, a):
        x, lead = self.inputs(s, a)
        return self.mlp(x)[:, 0].reshape(lead)

    def forward(self, s, a):
        x, lead = self.inputs(s, a)
        out, tape = self.mlp.forward(x)
        return out[:, 0].reshape(lead), tape

    def action_grad(self, s, a):
        """dQ/da for every row; used by the gradient-based comparator estimators."""
        x, lead = self.inputs(s, a)
        out, tape = self.mlp.forward(x)
        _, gx = self.mlp.backward(tape, np.ones_like(out))
        return gx[:, self.state_dim:].reshape(lead + (self.action_dim,))

    def copy(self) -> "Critic":
        return Critic(self.state_dim, self.action_dim, mlp=self.mlp.copy())


class MinCritic:
    """Q(s, a) = min(Q1, Q2); the Q that weights candidates in RL mode."""

    def __init__(self, q1: Critic, q2: Critic):
        self.q1 = q1
        self.q2 = q2

    def __call__(self, s, a):
        return np.minimum(self.q1(s, a), self.q2(s, a))

    def grad(self, s, a):
        v1, v2 = self.q1(s, a), self.q2(s, a)
        g1, g2 = self.q1.action_grad(s, a), self.q2.action_grad(s, a)
        return np.where((v1 <= v2)[..., None], g1, g2)
