"""Dense MLPs with hand-written reverse-mode gradients and Adam, in numpy.

Hidden layers use mish, the output layer is linear.  Inputs are row batches of
shape ``(batch, in_dim)``; weights are stored ``(in_dim, out_dim)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

EMBED_DIM = 16


def mish(x):
    # x * tanh(softplus(x)) rewritten through n = e^x: tanh(log(1+n)) = n(n+2) / (n(n+2) + 2)
    n = np.exp(np.minimum(x, 20.0))
    q = n * (n + 2.0)
    return x * (q / (q + 2.0))


def _mish_and_grad(x):
    n = np.exp(np.minimum(x, 20.0))
    q = n * (n + 2.0)
    th = q / (q + 2.0)
    # d/dx mish = tanh(sp) + x * sech^2(sp) * sigmoid(x)
    grad = th + x * (1.0 - th * th) * (n / (1.0 + n))
    return x * th, grad


_CHUNK = 16384  # elements per block; keeps temporaries cache-resident


def _bias_mish(z, b, with_grad=False):
    """In place ``z += b``, then mish(z) (and its derivative), processed in row blocks.

    Same arithmetic as :func:`mish` / :func:`_mish_and_grad`; blocking only keeps the
    temporaries small, which is several times faster on large batches.
    """
    rows = max(1, _CHUNK // z.shape[1])
    h = np.empty_like(z)
    dh = np.empty_like(z) if with_grad else None
    n = np.empty((rows, z.shape[1]))
    q = np.empty_like(n)
    for lo in range(0, z.shape[0], rows):
        zz = z[lo : lo + rows]
        k = zz.shape[0]
        nn, qq = n[:k], q[:k]
        zz += b
        np.minimum(zz, 20.0, out=nn)
        np.exp(nn, out=nn)
        np.add(nn, 2.0, out=qq)
        qq *= nn
        if with_grad:
            th = qq / (qq + 2.0)
            sig = nn / (1.0 + nn)
            np.multiply(zz, th, out=h[lo : lo + rows])
            # d/dx mish = tanh(sp) + x * sech^2(sp) * sigmoid(x)
            np.multiply(th, th, out=qq)
            np.subtract(1.0, qq, out=qq)
            qq *= zz
            qq *= sig
            np.add(th, qq, out=dh[lo : lo + rows])
        else:
            np.add(qq, 2.0, out=nn)
            qq /= nn
            np.multiply(qq, zz, out=h[lo : lo + rows])
    return (h, dh) if with_grad else h


def time_embed(t):
    """16-dim sinusoidal embedding of diffusion time; frequencies pi * 2^k, k = 0..7."""
    t = np.asarray(t, dtype=np.float64)
    freqs = np.pi * 2.0 ** np.arange(EMBED_DIM // 2)
    ang = t[..., None] * freqs
    return np.concatenate([np.sin(ang), np.cos(ang)], axis=-1)


class StaleTapeError(RuntimeError):
    """Raised when a tape is replayed after the network's parameters changed."""


@dataclass
class GradTape:
    owner: int
    version: int
    inputs: list
    preacts: list
    grads_act: list


class Mlp:
    def __init__(self, widths, rng: np.random.Generator | None = None):
        widths = [int(w) for w in widths]
        if len(widths) < 2 or any(w <= 0 for w in widths):
            raise ValueError(f"bad layer widths {widths}")
        self.widths = widths
        self.params: list[np.ndarray] = []
        for fan_in, fan_out in zip(widths[:-1], widths[1:]):
            if rng is None:
                w = np.zeros((fan_in, fan_out))
            else:
                lim = np.sqrt(3.0 / fan_in)
                w = rng.uniform(-lim, lim, size=(fan_in, fan_out))
            self.params += [w, np.zeros(fan_out)]
        self.version = 0

    @property
    def n_layers(self) -> int:
        return len(self.widths) - 1

    @property
    def in_dim(self) -> int:
        return self.widths[0]

    @property
    def out_dim(self) -> int:
        return self.widths[-1]

    def n_params(self) -> int:
        return sum(p.size for p in self.params)

    def touch(self):
        """Mark parameters as modified; invalidates outstanding tapes."""
        self.version += 1

    def _check_input(self, x):
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != self.in_dim:
            raise ValueError(f"expected input width {self.in_dim}, got {x.shape[-1]}")
        return x

    def __call__(self, x):
        x = self._check_input(x)
        lead = x.shape[:-1]
        h = x.reshape(-1, self.in_dim)
        last = self.n_layers - 1
        for i in range(self.n_layers):
            z = h @ self.params[2 * i]
            if i < last:
                h = _bias_mish(z, self.params[2 * i + 1])
            else:
                h = z + self.params[2 * i + 1]
        return h.reshape(lead + (self.out_dim,))

    def forward(self, x):
        """Forward pass that also returns a tape for :meth:`backward`."""
        x = self._check_input(x)
        lead = x.shape[:-1]
        inputs, preacts, grads_act = [], [], []
        h = x.reshape(-1, self.in_dim)
        last = self.n_layers - 1
        for i in range(self.n_layers):
            inputs.append(h)
            z = h @ self.params[2 * i]
            if i < last:
                h, dz = _bias_mish(z, self.params[2 * i + 1], with_grad=True)
                grads_act.append(dz)
            else:
                z += self.params[2 * i + 1]
                h = z
            preacts.append(z)
        tape = GradTape(id(self), self.version, inputs, preacts, grads_act)
        return h.reshape(lead + (self.out_dim,)), tape

    def backward(self, tape: GradTape, grad_out):
        """Reverse pass.  Returns ``(param_grads, input_grad)``; grads are summed over the batch."""
        if tape.owner != id(self) or tape.version != self.version:
            raise StaleTapeError("tape does not belong to the current parameters of this network")
        g = np.asarray(grad_out, dtype=np.float64)
        if g.size != tape.preacts[-1].size or g.shape[-1] != self.out_dim:
            raise ValueError(f"output gradient shape {g.shape} does not match output {tape.preacts[-1].shape}")
        lead = g.shape[:-1]
        g = g.reshape(-1, self.out_dim)
        grads = [None] * len(self.params)
        for i in reversed(range(self.n_layers)):
            if i < self.n_layers - 1:
                g = g * tape.grads_act[i]
            grads[2 * i] = tape.inputs[i].T @ g
            grads[2 * i + 1] = g.sum(axis=0)
            g = g @ self.params[2 * i].T
        return grads, g.reshape(lead + (self.in_dim,))

    def copy(self) -> "Mlp":
        other = Mlp.__new__(Mlp)
        other.widths = list(self.widths)
        other.params = [p.copy() for p in self.params]
        other.version = 0
        return other

    def load_params(self, params):
        if len(params) != len(self.params) or any(a.shape != b.shape for a, b in zip(params, self.params)):
            raise ValueError("parameter shapes do not match network")
        for dst, src in zip(self.params, params):
            dst[...] = src
        self.touch()


class Adam:
    """Adam with bias correction, updating a network's arrays in place."""

    def __init__(self, net: Mlp, lr: float = 3e-4, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.net = net
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self.m = [np.zeros_like(p) for p in net.params]
        self.v = [np.zeros_like(p) for p in net.params]

    def step(self, grads):
        params = self.net.params
        if len(grads) != len(params):
            raise ValueError("gradient list length does not match parameters")
        for p, g in zip(params, grads):
            if p.shape != np.shape(g):
                raise ValueError(f"gradient shape {np.shape(g)} != parameter shape {p.shape}")
        self.step_count += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** self.step_count
        c2 = 1.0 - b2 ** self.step_count
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
        self.net.touch()
