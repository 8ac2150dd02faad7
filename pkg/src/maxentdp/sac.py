"""Soft actor-critic with a diffusion actor.

Critics are trained on the entropy-augmented soft Bellman target; the actor is
trained by regressing the noise-prediction network onto the Q-weighted noise
estimate of :func:`maxentdp.qne.qne_target`.
"""

from __future__ import annotations

import csv
import io
import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import checkpoint, rng as rngmod
from .envs import MixtureQ, MultiGoalConfig, MultiGoalEnv, goal_distances, multigoal_step
from .likelihood import LikelihoodConfig, entropy_term
from .netcore import Adam
from .networks import Critic, MinCritic, NoisePredictionNet
from .qne import policy_loss_and_grad, qne_target
from .sampler import SamplerConfig, sample_action, select_action
from .schedule import NoiseSchedule

log = logging.getLogger(__name__)

METRIC_COLUMNS = ("step", "episode_return", "critic_loss_1", "critic_loss_2", "actor_loss", "mean_logpi", "target_std")


class TrainingError(FloatingPointError):
    """Training produced a non-finite quantity; ``diagnostics`` says where."""

    def __init__(self, message: str, diagnostics: dict | None = None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


@dataclass
class Transition:
    s: np.ndarray
    a: np.ndarray
    r: float
    s_next: np.ndarray
    done: bool


@dataclass
class Batch:
    s: np.ndarray
    a: np.ndarray
    r: np.ndarray
    s_next: np.ndarray
    done: np.ndarray


class ReplayBuffer:
    """Fixed-capacity ring buffer; once full, each push overwrites the oldest item."""

    def __init__(self, capacity: int, state_dim: int, action_dim: int):
        if capacity < 1:
            raise ValueError("buffer capacity must be positive")
        self.capacity = int(capacity)
        self.state_dim = int(state_dim)
        self.action_dim = int(action_dim)
        self.s = np.zeros((self.capacity, self.state_dim))
        self.a = np.zeros((self.capacity, self.action_dim))
        self.r = np.zeros(self.capacity)
        self.s_next = np.zeros((self.capacity, self.state_dim))
        self.done = np.zeros(self.capacity, dtype=bool)
        self.size = 0
        self.cursor = 0

    def __len__(self):
        return self.size

    def push(self, tr: Transition):
        s, a, s2 = (np.asarray(x, dtype=np.float64) for x in (tr.s, tr.a, tr.s_next))
        if s.shape != (self.state_dim,) or s2.shape != (self.state_dim,) or a.shape != (self.action_dim,):
            raise ValueError(
                f"transition dims (s {s.shape}, a {a.shape}, s_next {s2.shape}) do not match "
                f"buffer (state {self.state_dim}, action {self.action_dim})"
            )
        if not np.isfinite(tr.r):
            raise ValueError("reward must be finite")
        i = self.cursor
        self.s[i], self.a[i], self.r[i], self.s_next[i], self.done[i] = s, a, tr.r, s2, bool(tr.done)
        self.cursor = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def sample_indices(self, B: int, rng: np.random.Generator):
        if self.size == 0:
            raise ValueError("cannot sample from an empty buffer")
        return rng.integers(0, self.size, size=B)

    def sample(self, B: int, rng: np.random.Generator) -> Batch:
        """Uniform with replacement over the stored items."""
        idx = self.sample_indices(B, rng)
        return Batch(self.s[idx], self.a[idx], self.r[idx], self.s_next[idx], self.done[idx])

    def state_dict(self) -> dict:
        n = self.size
        return {"s": self.s[:n], "a": self.a[:n], "r": self.r[:n], "s_next": self.s_next[:n], "done": self.done[:n],
                "cursor": np.int64(self.cursor)}

    def load_state_dict(self, st: dict):
        n = len(st["r"])
        if n > self.capacity:
            raise ValueError("saved buffer exceeds capacity")
        for k in ("s", "a", "r", "s_next", "done"):
            getattr(self, k)[:n] = st[k]
        self.size = n
        self.cursor = int(st["cursor"])


@dataclass(frozen=True)
class TrainerConfig:
    gamma: float = 0.99
    tau: float = 0.005
    beta: float = 0.05
    batch_size: int = 256
    K: int = 500
    actor_lr: float = 3e-4
    critic_lr: float = 3e-4
    updates_per_step: int = 1
    warmup_steps: int = 1000
    total_steps: int = 10_000
    buffer_capacity: int = 1_000_000
    entropy_in_target: bool = True  # False drops -beta log pi from the Bellman target only
    log_every: int = 100
    checkpoint_every: int = 1000

    def __post_init__(self):
        if not 0.0 < self.gamma < 1.0:
            raise ValueError("gamma must lie in (0, 1)")
        if not 0.0 < self.tau <= 1.0:
            raise ValueError("tau must lie in (0, 1]")
        if not self.beta > 0.0:
            raise ValueError("beta must be positive")
        for k in ("batch_size", "K", "buffer_capacity", "log_every"):
            if getattr(self, k) < 1:
                raise ValueError(f"{k} must be positive")
        for k in ("updates_per_step", "warmup_steps", "total_steps", "checkpoint_every"):
            if getattr(self, k) < 0:
                raise ValueError(f"{k} must be non-negative")
        if not (self.actor_lr > 0 and self.critic_lr > 0):
            raise ValueError("learning rates must be positive")


class CriticPair:
    def __init__(self, state_dim: int, action_dim: int, hidden=(256, 256), rng=None, lr: float = 3e-4):
        self.q1 = Critic(state_dim, action_dim, hidden, rng)
        self.q2 = Critic(state_dim, action_dim, hidden, rng)
        self.q1_target = self.q1.copy()
        self.q2_target = self.q2.copy()
        self.opt1 = Adam(self.q1.mlp, lr)
        self.opt2 = Adam(self.q2.mlp, lr)

    def live(self) -> MinCritic:
        return MinCritic(self.q1, self.q2)

    def target(self) -> MinCritic:
        return MinCritic(self.q1_target, self.q2_target)

    def pairs(self):
        return ((self.q1, self.q1_target), (self.q2, self.q2_target))


def soft_update(critics: CriticPair, tau: float):
    """theta' <- tau theta + (1 - tau) theta' on both target copies."""
    if not 0.0 < tau <= 1.0:
        raise ValueError("tau must lie in (0, 1]")
    for live, targ in critics.pairs():
        for p, pt in zip(live.mlp.params, targ.mlp.params):
            if tau == 1.0:
                pt[...] = p
            else:
                pt += tau * (p - pt)
        targ.mlp.touch()


def soft_bellman_target(r, done, gamma: float, min_q_next, beta: float, log_pi):
    """r + (1 - done) gamma (min Q'(s', a') - beta log pi(a'|s'))."""
    r = np.asarray(r, dtype=np.float64)
    cont = ~np.asarray(done, dtype=bool)
    out = r.copy()
    out[cont] += gamma * (np.asarray(min_q_next)[cont] - beta * np.asarray(log_pi)[cont])
    return out


def bellman_target(
    critics: CriticPair,
    net,
    batch: Batch,
    beta: float,
    gamma: float,
    rng: np.random.Generator,
    sampler_cfg: SamplerConfig = SamplerConfig(),
    lik_cfg: LikelihoodConfig = LikelihoodConfig(),
    schedule: NoiseSchedule = NoiseSchedule(),
    entropy: bool = True,
):
    """Targets for a batch; returns ``(targets, log_pi)`` with ``log_pi`` NaN on done rows.

    Rows with ``done`` never touch the next-state networks.  With ``entropy=False``
    (or ``beta = 0``) this is the clipped double-Q target.
    """
    cont = ~batch.done
    log_pi = np.full(len(batch.r), np.nan)
    min_q = np.zeros(len(batch.r))
    if cont.any():
        s2 = batch.s_next[cont]
        a2 = sample_action(net, s2, sampler_cfg, rng, schedule)
        min_q[cont] = critics.target()(s2, a2)
        if entropy and beta != 0.0:
            lp = entropy_term(net, s2, a2, lik_cfg, rng, schedule)
            if not np.all(np.isfinite(lp)):
                bad = np.flatnonzero(~np.isfinite(lp))
                raise TrainingError("non-finite log pi in Bellman target",
                                    {"rows": bad.tolist(), "states": s2[bad].tolist(), "actions": a2[bad].tolist()})
            log_pi[cont] = lp
        else:
            log_pi[cont] = 0.0
    lp_used = np.where(cont, log_pi, 0.0)
    target = soft_bellman_target(batch.r, batch.done, gamma, min_q, beta if entropy else 0.0, lp_used)
    return target, log_pi


def _mse_step(critic: Critic, opt: Adam, s, a, target):
    pred, tape = critic.forward(s, a)
    diff = pred - target
    loss = float(np.mean(diff * diff))
    grads, _ = critic.mlp.backward(tape, (2.0 / len(diff)) * diff[:, None])
    opt.step(grads)
    return loss


def critic_update(critics: CriticPair, batch: Batch, targets, targets2=None):
    """One Adam step per critic on the squared Bellman error; ``targets2`` defaults to ``targets``."""
    targets = np.asarray(targets, dtype=np.float64)
    targets2 = targets if targets2 is None else np.asarray(targets2, dtype=np.float64)
    l1 = _mse_step(critics.q1, critics.opt1, batch.s, batch.a, targets)
    l2 = _mse_step(critics.q2, critics.opt2, batch.s, batch.a, targets2)
    return l1, l2


@dataclass
class ActorStep:
    loss: float
    t: np.ndarray
    a_t: np.ndarray
    target: np.ndarray


def actor_update(
    net: NoisePredictionNet,
    opt: Adam,
    Q,
    s,
    a,
    beta: float,
    K: int,
    rng: np.random.Generator,
    schedule: NoiseSchedule = NoiseSchedule(),
    bounds=(-1.0, 1.0),
) -> ActorStep:
    """Noise the batch actions at uniform times, build QNE targets under ``Q``, take one Adam step."""
    a = np.asarray(a, dtype=np.float64)
    B = a.shape[0]
    t = rng.uniform(schedule.t_min, schedule.t_max, size=B)
    a_t = schedule.perturb(a, t, rng.standard_normal(a.shape))
    target = qne_target(Q, s, a_t, t, K=K, beta=beta, bounds=bounds, rng=rng, schedule=schedule)
    loss, grads = policy_loss_and_grad(net, s, a_t, t, target)
    if not np.isfinite(loss):
        raise TrainingError("non-finite actor loss", {"loss": loss})
    opt.step(grads)
    return ActorStep(float(loss), t, a_t, target)


# ---------------------------------------------------------------------------
# evaluation


@dataclass
class EvalResult:
    step: int
    returns: np.ndarray
    goals: np.ndarray  # goal index reached (final position within capture radius), -1 if none
    trajectories: list

    @property
    def mean_return(self) -> float:
        return float(np.mean(self.returns))

    def goal_fractions(self, n_goals: int = 4) -> np.ndarray:
        return np.array([(self.goals == g).mean() for g in range(n_goals)])


def evaluate_multigoal(net, Q, env_cfg: MultiGoalConfig, episodes: int, M: int, sampler_cfg: SamplerConfig,
                       rng: np.random.Generator, schedule: NoiseSchedule, step: int = 0) -> EvalResult:
    """Batched rollouts with best-of-M action selection."""
    pos = np.clip(rng.normal(0.0, env_cfg.init_std, size=(episodes, 2)), -env_cfg.arena, env_cfg.arena)
    states = [[p.tolist()] for p in pos]
    actions = [[] for _ in range(episodes)]
    rewards = [[] for _ in range(episodes)]
    active = np.ones(episodes, dtype=bool)
    for _ in range(env_cfg.horizon):
        idx = np.flatnonzero(active)
        if idx.size == 0:
            break
        act, _ = select_action(net, Q, pos[idx], M, sampler_cfg, rng, schedule)
        nxt, rew, at_goal, _ = multigoal_step(pos[idx], act, env_cfg)
        pos[idx] = nxt
        for j, i in enumerate(idx):
            states[i].append(nxt[j].tolist())
            actions[i].append(act[j].tolist())
            rewards[i].append(float(rew[j]))
        active[idx[at_goal]] = False
    dist = goal_distances(pos, env_cfg)
    goals = np.where(dist.min(-1) <= env_cfg.goal_radius, dist.argmin(-1), -1)
    returns = np.array([sum(r) for r in rewards])
    trajs = [{"step": step, "episode": i, "goal": int(goals[i]), "states": states[i], "actions": actions[i],
              "rewards": rewards[i]} for i in range(episodes)]
    return EvalResult(step, returns, goals, trajs)


def mode_fractions(samples, means) -> np.ndarray:
    """Share of samples whose nearest center is each mean."""
    d = ((np.asarray(samples)[:, None, :] - np.asarray(means)) ** 2).sum(-1)
    nearest = d.argmin(-1)
    return np.bincount(nearest, minlength=len(means)) / len(nearest)


# ---------------------------------------------------------------------------
# training loop


def _mean(xs):
    xs = [x for x in xs if x is not None and np.isfinite(x)]
    return float(np.mean(xs)) if xs else float("nan")


class Trainer:
    """Owns every piece of mutable training state for one run.

    ``cfg`` is a :class:`maxentdp.config.RunConfig`.  With ``env.name ==
    "mixture_static"`` there is no environment or critic: each step is one
    actor-only update against the fixed mixture Q, with batch actions drawn
    uniformly from the action box.
    """

    def __init__(self, cfg, out_dir=None):
        self.cfg = cfg
        self.sac: TrainerConfig = cfg.sac
        self.schedule: NoiseSchedule = cfg.noise_schedule
        self.sampler_cfg: SamplerConfig = cfg.sampler
        self.lik_cfg: LikelihoodConfig = cfg.likelihood
        self.out = Path(out_dir) if out_dir is not None else None
        if self.out is not None:
            self.out.mkdir(parents=True, exist_ok=True)
        self.rngs = rngmod.streams(cfg.seed)
        self.static = cfg.env.name == "mixture_static"
        init = self.rngs["init"]
        hidden = tuple(cfg.net.hidden)
        if self.static:
            self.mixture = cfg.env.mixture()
            self.Q_static = MixtureQ(self.sac.beta, self.mixture)
            self.net = NoisePredictionNet(self.mixture.dim, 0, hidden, init)
            self.critics = None
            self.env = None
        else:
            self.env_cfg = cfg.env.multigoal()
            self.env = MultiGoalEnv(self.env_cfg)
            sd, ad = self.env.state_dim, self.env.action_dim
            self.net = NoisePredictionNet(ad, sd, hidden, init)
            self.critics = CriticPair(sd, ad, hidden, init, self.sac.critic_lr)
            self.buffer = ReplayBuffer(self.sac.buffer_capacity, sd, ad)
            self.state = self.env.reset(self.rngs["env"])
            self.ep_return = 0.0
        self.actor_opt = Adam(self.net.mlp, self.sac.actor_lr)
        self.step = 0
        self.metrics: list[dict] = []
        self.evals: list[dict] = []
        self.trajectories: list[dict] = []
        self._window = self._empty_window()

    @staticmethod
    def _empty_window():
        return {"returns": [], "l1": [], "l2": [], "actor": [], "logpi": []}

    # -- single iteration ---------------------------------------------------

    def _update(self):
        rs = self.rngs
        sac = self.sac
        batch = self.buffer.sample(sac.batch_size, rs["replay"])
        targets, log_pi = bellman_target(self.critics, self.net, batch, sac.beta, sac.gamma, rs["estimator"],
                                         self.sampler_cfg, self.lik_cfg, self.schedule, sac.entropy_in_target)
        l1, l2 = critic_update(self.critics, batch, targets)
        st = actor_update(self.net, self.actor_opt, self.critics.live(), batch.s, batch.a, sac.beta, sac.K,
                          rs["actor"], self.schedule, (self.sampler_cfg.low, self.sampler_cfg.high))
        soft_update(self.critics, sac.tau)
        self._last_actor = (batch.s, st)
        if not all(np.isfinite([l1, l2, st.loss])):
            raise TrainingError("non-finite loss", {"critic_loss_1": l1, "critic_loss_2": l2, "actor_loss": st.loss})
        w = self._window
        w["l1"].append(l1)
        w["l2"].append(l2)
        w["actor"].append(st.loss)
        if np.any(~batch.done):
            w["logpi"].append(float(np.nanmean(log_pi)))

    def _static_update(self):
        sac = self.sac
        rng = self.rngs["actor"]
        lo, hi = self.sampler_cfg.low, self.sampler_cfg.high
        a = rng.uniform(lo, hi, size=(sac.batch_size, self.mixture.dim))
        st = actor_update(self.net, self.actor_opt, self.Q_static, None, a, sac.beta, sac.K, rng, self.schedule, (lo, hi))
        self._last_actor = (None, st)
        self._window["actor"].append(st.loss)

    def _env_step(self):
        sac = self.sac
        rng = self.rngs["explore"]
        if self.step < sac.warmup_steps:
            action = rng.uniform(self.sampler_cfg.low, self.sampler_cfg.high, size=self.env.action_dim)
        else:
            action = sample_action(self.net, self.state[None], self.sampler_cfg, rng, self.schedule)[0]
        nxt, reward, terminated, truncated, _ = self.env.step(action)
        self.buffer.push(Transition(self.state, action, reward, nxt, terminated))
        self.ep_return += reward
        if terminated or truncated:
            self._window["returns"].append(self.ep_return)
            self.ep_return = 0.0
            self.state = self.env.reset(self.rngs["env"])
        else:
            self.state = nxt

    def iteration(self):
        """One env step (or one static update) followed by the configured number of updates."""
        if self.static:
            for _ in range(self.sac.updates_per_step):
                self._static_update()
        else:
            self._env_step()
            if self.step >= self.sac.warmup_steps:
                for _ in range(self.sac.updates_per_step):
                    self._update()
        self.step += 1

    # -- diagnostics ----------------------------------------------------------

    def _target_std(self, n: int = 16) -> float:
        """Mean per-coordinate std of two independent QNE targets on recent actor inputs."""
        last = getattr(self, "_last_actor", None)
        if last is None:
            return float("nan")
        s, st = last
        s = None if s is None else s[:n]
        Q = self.Q_static if self.static else self.critics.live()
        rng = self.rngs["estimator"]
        bounds = (self.sampler_cfg.low, self.sampler_cfg.high)
        x1, x2 = (qne_target(Q, s, st.a_t[:n], st.t[:n], K=self.sac.K, beta=self.sac.beta, bounds=bounds, rng=rng,
                             schedule=self.schedule) for _ in range(2))
        return float(np.sqrt(np.mean((x1 - x2) ** 2) / 2.0))

    def _log_row(self):
        w = self._window
        row = {
            "step": self.step,
            "episode_return": _mean(w["returns"]),
            "critic_loss_1": _mean(w["l1"]),
            "critic_loss_2": _mean(w["l2"]),
            "actor_loss": _mean(w["actor"]),
            "mean_logpi": _mean(w["logpi"]),
            "target_std": self._target_std(),
        }
        self.metrics.append(row)
        self._window = self._empty_window()
        log.info("step %d actor %.4g critic %.4g/%.4g", row["step"], row["actor_loss"], row["critic_loss_1"],
                 row["critic_loss_2"])

    # -- evaluation -----------------------------------------------------------

    def evaluate(self, episodes: int | None = None) -> EvalResult:
        """Evaluation at the current step; its randomness depends only on (seed, step)."""
        ev = self.cfg.eval
        rng = rngmod.stream(self.cfg.seed, "eval", self.step)
        episodes = ev.episodes if episodes is None else episodes
        if self.static:
            samples = sample_action(self.net, None, self.sampler_cfg, rng, self.schedule, n=ev.samples)
            frac = mode_fractions(samples, self.mixture.means)
            return EvalResult(self.step, np.array([np.nan]), np.array([]), [{"step": self.step, "mode_fractions": frac.tolist()}])
        return evaluate_multigoal(self.net, self.critics.live(), self.env_cfg, episodes, ev.action_candidates,
                                  self.sampler_cfg, rng, self.schedule, self.step)

    def _record_eval(self, res: EvalResult):
        row = {"step": res.step}
        if self.static:
            row.update({f"mode_{i}": f for i, f in enumerate(res.trajectories[0]["mode_fractions"])})
        else:
            row["mean_return"] = res.mean_return
            row.update({f"goal_{g}": f for g, f in enumerate(res.goal_fractions(len(self.env_cfg.goals)))})
        self.evals.append(row)
        self.trajectories.extend(res.trajectories)

    # -- persistence ------------------------------------------------------------

    def networks(self):
        nets = {"actor": self.net.mlp}
        opts = {"actor": self.actor_opt}
        if self.critics is not None:
            c = self.critics
            nets.update({"q1": c.q1.mlp, "q2": c.q2.mlp, "q1_target": c.q1_target.mlp, "q2_target": c.q2_target.mlp})
            opts.update({"q1": c.opt1, "q2": c.opt2})
        return nets, opts

    def save_checkpoint(self, tag=None) -> Path:
        tag = self.step if tag is None else tag
        path = self.out / f"checkpoint_{tag}.bin"
        nets, opts = self.networks()
        checkpoint.save(path, nets, opts)
        extra = {
            "step": np.int64(self.step),
            "json": np.array(json.dumps({
                "rng": rngmod.get_states(self.rngs),
                "window": self._window,
                "env": None if self.static else {"pos": self.env.pos.tolist(), "t": self.env.t},
                "ep_return": None if self.static else self.ep_return,
                "state": None if self.static else self.state.tolist(),
            })),
        }
        if not self.static:
            extra.update({f"buffer_{k}": v for k, v in self.buffer.state_dict().items()})
        buf = io.BytesIO()
        np.savez(buf, **extra)
        checkpoint.atomic_write(path.with_suffix(".resume.npz"), buf.getvalue())
        return path

    def load_checkpoint(self, path):
        path = Path(path)
        nets, opts = checkpoint.load(path)
        mine, my_opts = self.networks()
        if set(nets) != set(mine):
            raise checkpoint.CheckpointError(f"checkpoint networks {sorted(nets)} do not match run {sorted(mine)}")
        for k, net in nets.items():
            mine[k].load_params(net.params)
        for k, opt in opts.items():
            dst = my_opts[k]
            dst.step_count = opt.step_count
            dst.m = [m.copy() for m in opt.m]
            dst.v = [v.copy() for v in opt.v]
        side = path.with_suffix(".resume.npz")
        if not side.exists():
            return  # weights only (evaluation use)
        with np.load(side) as z:
            data = {k: z[k] for k in z.files}
        meta = json.loads(str(data["json"]))
        self.step = int(data["step"])
        rngmod.set_states(self.rngs, meta["rng"])
        self._window = meta["window"]
        if not self.static:
            self.env.set_state(meta["env"])
            self.ep_return = meta["ep_return"]
            self.state = np.asarray(meta["state"], dtype=np.float64)
            self.buffer.load_state_dict({k[len("buffer_"):]: v for k, v in data.items() if k.startswith("buffer_")})

    def flush(self):
        """Rewrite the CSV/JSONL artifacts from memory (each file atomically)."""
        if self.out is None:
            return
        write_csv(self.out / "metrics.csv", METRIC_COLUMNS, self.metrics)
        if self.evals:
            write_csv(self.out / "evals.csv", list(self.evals[0]), self.evals)
        write_jsonl(self.out / "eval_trajectories.jsonl", self.trajectories)

    # -- driver -------------------------------------------------------------------

    def run(self, until: int | None = None):
        sac = self.sac
        ev = self.cfg.eval
        until = sac.total_steps if until is None else until
        while self.step < until:
            try:
                self.iteration()
            except TrainingError:
                if self.out is not None:
                    self.save_checkpoint(f"{self.step}_abort")
                    self.flush()
                raise
            if self.step % sac.log_every == 0:
                self._log_row()
            if ev.every and self.step % ev.every == 0:
                self._record_eval(self.evaluate())
            if self.out is not None and sac.checkpoint_every and self.step % sac.checkpoint_every == 0:
                self.save_checkpoint()
                self.flush()
        self.flush()
        return self.metrics


def train(cfg, out_dir=None, resume=None, until=None) -> Trainer:
    tr = Trainer(cfg, out_dir)
    if resume is not None:
        tr.load_checkpoint(resume)
        if out_dir is not None:
            tr.metrics = [r for r in read_csv(Path(out_dir) / "metrics.csv") if r["step"] <= tr.step]
            tr.evals = [r for r in read_csv(Path(out_dir) / "evals.csv") if r["step"] <= tr.step]
            tr.trajectories = [r for r in read_jsonl(Path(out_dir) / "eval_trajectories.jsonl") if r["step"] <= tr.step]
    tr.run(until)
    return tr


# ---------------------------------------------------------------------------
# artifact files


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return "" if np.isnan(v) else repr(float(v))
    return str(v)


def write_csv(path, columns, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    w.writerows([_fmt(r.get(c, float("nan"))) for c in columns] for r in rows)
    checkpoint.atomic_write(path, buf.getvalue().encode())


def read_csv(path) -> list[dict]:
    path = Path(path)
    if not path.exists():
        return []
    with path.open(newline="") as fh:
        return [{c: int(v) if c == "step" else (float(v) if v else float("nan")) for c, v in row.items()}
                for row in csv.DictReader(fh)]


def write_jsonl(path, records):
    text = "".join(json.dumps(r) + "\n" for r in records)
    checkpoint.atomic_write(path, text.encode())


def read_jsonl(path) -> list[dict]:
    path = Path(path)
    if not path.exists():
        return []
    return [json.loads(line) for line in path.read_text().splitlines() if line]
