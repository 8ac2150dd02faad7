import numpy as np
import pytest
from scipy.stats import chisquare

from maxentdp import config
from maxentdp.networks import NoisePredictionNet
from maxentdp.sac import (
    Batch,
    CriticPair,
    ReplayBuffer,
    Trainer,
    TrainingError,
    Transition,
    actor_update,
    bellman_target,
    critic_update,
    soft_bellman_target,
    soft_update,
)
from maxentdp.netcore import Adam
from maxentdp.sampler import SamplerConfig, sample_action
from maxentdp.schedule import NoiseSchedule

SCHED = NoiseSchedule()
SMALL = SamplerConfig(steps=3)


def _tiny_cfg(**sac):
    base = dict(batch_size=8, K=8, warmup_steps=20, total_steps=60, log_every=10, checkpoint_every=0)
    base.update(sac)
    return config.RunConfig(
        net=config.NetConfig((16, 16)),
        sac=config.TrainerConfig(**base),
        sampler=config.SamplerConfig(steps=3),
        likelihood=config.LikelihoodConfig(T=3, N=2),
        eval=config.EvalConfig(every=30, episodes=3, action_candidates=2),
    )


def _batch(B=6, seed=0, done=None):
    g = np.random.default_rng(seed)
    done = np.zeros(B, dtype=bool) if done is None else np.asarray(done)
    return Batch(g.normal(size=(B, 2)), g.uniform(-1, 1, (B, 2)), g.normal(size=B), g.normal(size=(B, 2)), done)


def _params(mlps):
    return [p.copy() for m in mlps for p in m.params]


class TestReplayBuffer:
    def _push(self, buf, i, done=False):
        buf.push(Transition(np.full(2, i), np.zeros(2), float(i), np.zeros(2), done))

    def test_ring_eviction(self):
        buf = ReplayBuffer(5, 2, 2)
        for i in range(6):
            self._push(buf, i)
        assert len(buf) == 5
        assert sorted(buf.r) == [1, 2, 3, 4, 5]

    def test_empty_sample(self):
        with pytest.raises(ValueError):
            ReplayBuffer(5, 2, 2).sample(1, np.random.default_rng(0))

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            ReplayBuffer(5, 2, 2).push(Transition(np.zeros(3), np.zeros(2), 0.0, np.zeros(2), False))

    def test_nonfinite_reward(self):
        with pytest.raises(ValueError):
            ReplayBuffer(5, 2, 2).push(Transition(np.zeros(2), np.zeros(2), np.nan, np.zeros(2), False))

    def test_full_size_sample_is_multiset_of_stored(self):
        buf = ReplayBuffer(10, 2, 2)
        for i in range(7):
            self._push(buf, i)
        b = buf.sample(7, np.random.default_rng(0))
        assert b.s.shape == (7, 2) and set(b.r) <= set(range(7))

    def test_uniform_chi_square(self):
        buf = ReplayBuffer(20, 2, 2)
        for i in range(13):
            self._push(buf, i)
        idx = buf.sample_indices(13_000, np.random.default_rng(1))
        assert chisquare(np.bincount(idx, minlength=13)).pvalue > 0.01

    def test_state_dict_roundtrip(self):
        buf = ReplayBuffer(4, 2, 2)
        for i in range(6):
            self._push(buf, i, done=i % 2 == 0)
        other = ReplayBuffer(4, 2, 2)
        other.load_state_dict(buf.state_dict())
        for k in ("s", "a", "r", "s_next", "done"):
            np.testing.assert_array_equal(getattr(other, k), getattr(buf, k))
        assert other.cursor == buf.cursor and len(other) == len(buf)


class TestSoftBellman:
    def test_hand_value(self):
        out = soft_bellman_target([1.0], [False], 0.99, [2.0], 0.05, [-3.0])
        np.testing.assert_allclose(out, [3.1285], rtol=1e-14)

    def test_done_gives_reward(self):
        out = soft_bellman_target([1.0, 2.0], [True, True], 0.99, [np.nan, 5.0], 0.05, [np.nan, 1.0])
        np.testing.assert_array_equal(out, [1.0, 2.0])

    def test_zero_beta_is_double_q(self):
        out = soft_bellman_target([0.5], [False], 0.9, [2.0], 0.0, [-7.0])
        np.testing.assert_allclose(out, [0.5 + 0.9 * 2.0])


class _Exploding:
    action_dim = 2
    state_dim = 2

    def __call__(self, *a, **k):
        raise AssertionError("next-state network evaluated on a terminal row")


class _Recorder:
    """Wraps a net and records the states it is called with."""

    def __init__(self, net):
        self.net = net
        self.action_dim, self.state_dim = net.action_dim, net.state_dim
        self.seen = []

    def __call__(self, a_t, t, s=None):
        self.seen.append(np.array(s))
        return self.net(a_t, t, s)


class TestBellmanTarget:
    def setup_method(self):
        g = np.random.default_rng(0)
        self.net = NoisePredictionNet(2, 2, (8, 8), g)
        self.critics = CriticPair(2, 2, (8, 8), g)

    def test_all_done_never_touches_networks(self):
        class Fake:
            def target(self):
                return _Exploding()

        b = _batch(done=np.ones(6, dtype=bool))
        tgt, lp = bellman_target(Fake(), _Exploding(), b, 0.05, 0.99, np.random.default_rng(0), SMALL)
        np.testing.assert_array_equal(tgt, b.r)
        assert np.all(np.isnan(lp))

    def test_mixed_batch_skips_terminal_states(self):
        done = np.array([True, False, True, False, False, True])
        b = _batch(done=done)
        b.s_next[done] = 1e6  # sentinel
        rec = _Recorder(self.net)
        tgt, _ = bellman_target(self.critics, rec, b, 0.05, 0.99, np.random.default_rng(0), SMALL)
        assert all(np.all(np.abs(s) < 1e5) for s in rec.seen)
        np.testing.assert_array_equal(tgt[done], b.r[done])

    def test_clipped_double_q(self):
        b = _batch()
        tgt, _ = bellman_target(self.critics, self.net, b, 0.05, 0.99, np.random.default_rng(3), SMALL, entropy=False)
        a2 = sample_action(self.net, b.s_next, SMALL, np.random.default_rng(3), SCHED)
        q = np.minimum(self.critics.q1_target(b.s_next, a2), self.critics.q2_target(b.s_next, a2))
        np.testing.assert_allclose(tgt, b.r + 0.99 * q, rtol=1e-12)

    def test_entropy_term(self):
        b = _batch()
        with_h, lp = bellman_target(self.critics, self.net, b, 0.05, 0.99, np.random.default_rng(3), SMALL)
        without, _ = bellman_target(self.critics, self.net, b, 0.05, 0.99, np.random.default_rng(3), SMALL, entropy=False)
        np.testing.assert_allclose(with_h, without - 0.99 * 0.05 * lp, rtol=1e-12)

    def test_target_networks_used(self):
        b = _batch()
        before, _ = bellman_target(self.critics, self.net, b, 0.05, 0.99, np.random.default_rng(3), SMALL, entropy=False)
        for p in self.critics.q1.mlp.params + self.critics.q2.mlp.params:
            p += 1.0
        self.critics.q1.mlp.touch()
        self.critics.q2.mlp.touch()
        after, _ = bellman_target(self.critics, self.net, b, 0.05, 0.99, np.random.default_rng(3), SMALL, entropy=False)
        np.testing.assert_array_equal(before, after)

    def test_nonfinite_log_pi(self):
        class NanNet(_Recorder):
            def __call__(self, a_t, t, s=None):
                out = self.net(a_t, t, s)
                return out if np.ndim(t) == 0 else np.full_like(out, np.nan)

        with pytest.raises(TrainingError) as e:
            bellman_target(self.critics, NanNet(self.net), _batch(), 0.05, 0.99, np.random.default_rng(0), SMALL)
        assert "rows" in e.value.diagnostics


class TestCriticUpdate:
    def setup_method(self):
        self.critics = CriticPair(2, 2, (8, 8), np.random.default_rng(1), lr=1e-2)

    def test_exact_targets_leave_params(self):
        b = _batch()
        c = self.critics
        q1 = c.q1(b.s, b.a)
        c2 = CriticPair(2, 2, (8, 8), np.random.default_rng(1))
        c.q2.mlp.load_params(c.q1.mlp.params)
        before = _params([c.q1.mlp, c.q2.mlp])
        l1, l2 = critic_update(c, b, q1)
        assert l1 == 0.0 and l2 == 0.0
        for p, q in zip(before, _params([c.q1.mlp, c.q2.mlp])):
            np.testing.assert_array_equal(p, q)
        del c2

    def test_loss_decreases(self):
        b = _batch(B=32)
        tgt = np.sin(b.s[:, 0]) + b.a[:, 1]
        first = critic_update(self.critics, b, tgt)
        for _ in range(99):
            last = critic_update(self.critics, b, tgt)
        assert last[0] < first[0] and last[1] < first[1]

    def test_independent_critics(self):
        b = _batch()
        tgt = np.zeros(6)
        other = CriticPair(2, 2, (8, 8), np.random.default_rng(1), lr=1e-2)
        critic_update(self.critics, b, tgt, tgt)
        critic_update(other, b, tgt, tgt + 5.0)
        for p, q in zip(self.critics.q1.mlp.params, other.q1.mlp.params):
            np.testing.assert_array_equal(p, q)
        assert any(not np.array_equal(p, q) for p, q in zip(self.critics.q2.mlp.params, other.q2.mlp.params))


class TestSoftUpdate:
    def setup_method(self):
        self.c = CriticPair(2, 2, (8, 8), np.random.default_rng(2))
        for p in self.c.q1.mlp.params + self.c.q2.mlp.params:
            p += np.random.default_rng(3).normal(size=p.shape)

    def _gap(self):
        return [p - pt for live, targ in self.c.pairs() for p, pt in zip(live.mlp.params, targ.mlp.params)]

    def test_tau_one_copies(self):
        soft_update(self.c, 1.0)
        for g in self._gap():
            np.testing.assert_array_equal(g, 0.0)

    def test_scalar_probe(self):
        for live, targ in self.c.pairs():
            for p, pt in zip(live.mlp.params, targ.mlp.params):
                p[...] = 1.0
                pt[...] = 0.0
        soft_update(self.c, 0.005)
        for live, targ in self.c.pairs():
            for pt in targ.mlp.params:
                np.testing.assert_allclose(pt, 0.005, rtol=1e-15)

    def test_contraction_exact(self):
        before = self._gap()
        soft_update(self.c, 0.005)
        for b, a in zip(before, self._gap()):
            np.testing.assert_allclose(a, 0.995 * b, rtol=1e-10, atol=1e-15)

    def test_geometric_convergence(self):
        g0 = max(np.abs(g).max() for g in self._gap())
        for _ in range(200):
            soft_update(self.c, 0.05)
        g1 = max(np.abs(g).max() for g in self._gap())
        assert g1 <= g0 * 0.95**200 * (1 + 1e-6)

    def test_live_untouched(self):
        live = _params([self.c.q1.mlp, self.c.q2.mlp])
        soft_update(self.c, 0.3)
        for p, q in zip(live, _params([self.c.q1.mlp, self.c.q2.mlp])):
            np.testing.assert_array_equal(p, q)

    @pytest.mark.parametrize("tau", [0.0, -0.1, 1.5])
    def test_bad_tau(self, tau):
        with pytest.raises(ValueError):
            soft_update(self.c, tau)


class TestActorUpdate:
    def _run(self, seed):
        g = np.random.default_rng(0)
        net = NoisePredictionNet(2, 2, (8, 8), g)
        critics = CriticPair(2, 2, (8, 8), g)
        opt = Adam(net.mlp)
        b = _batch()
        st = actor_update(net, opt, critics.live(), b.s, b.a, 0.05, 16, np.random.default_rng(seed), SCHED)
        return st, net

    def test_deterministic(self):
        (s1, n1), (s2, n2) = self._run(5), self._run(5)
        for x, y in ((s1.t, s2.t), (s1.a_t, s2.a_t), (s1.target, s2.target)):
            np.testing.assert_array_equal(x, y)
        for p, q in zip(n1.mlp.params, n2.mlp.params):
            np.testing.assert_array_equal(p, q)
        assert s1.loss == s2.loss

    def test_times_in_range(self):
        st, _ = self._run(6)
        assert np.all((st.t >= SCHED.t_min) & (st.t <= SCHED.t_max))


class TestTrainer:
    def test_dry_run_keeps_init(self):
        cfg = _tiny_cfg(updates_per_step=0)
        tr = Trainer(cfg)
        init = _params(tr.networks()[0].values())
        tr.run()
        assert tr.step == 60 and len(tr.buffer) == 60
        for p, q in zip(init, _params(tr.networks()[0].values())):
            np.testing.assert_array_equal(p, q)

    def test_equal_seeds_equal_logs(self):
        a, b = Trainer(_tiny_cfg()), Trainer(_tiny_cfg())
        a.run()
        b.run()
        assert len(a.metrics) == 6
        np.testing.assert_array_equal(
            [[r[k] for k in sorted(r)] for r in a.metrics], [[r[k] for k in sorted(r)] for r in b.metrics]
        )
        assert a.evals == b.evals

    def test_different_seeds_differ(self):
        a, b = Trainer(_tiny_cfg()), Trainer(_tiny_cfg().replace(seed=1))
        a.run()
        b.run()
        assert a.metrics[-1]["critic_loss_1"] != b.metrics[-1]["critic_loss_1"]

    def test_warmup_uses_no_updates(self):
        tr = Trainer(_tiny_cfg())
        init = _params(tr.networks()[0].values())
        tr.run(20)
        for p, q in zip(init, _params(tr.networks()[0].values())):
            np.testing.assert_array_equal(p, q)
        tr.run(21)
        assert any(not np.array_equal(p, q) for p, q in zip(init, _params(tr.networks()[0].values())))

    def test_abort_writes_checkpoint(self, tmp_path, monkeypatch):
        tr = Trainer(_tiny_cfg(), tmp_path)

        def bad_update():
            raise TrainingError("non-finite loss", {"critic_loss_1": float("nan")})

        tr.run(25)
        monkeypatch.setattr(tr, "_update", bad_update)
        with pytest.raises(TrainingError):
            tr.run()
        assert (tmp_path / "checkpoint_25_abort.bin").exists()
        assert (tmp_path / "metrics.csv").exists()

    def test_entropy_flag_is_config_only(self):
        a = Trainer(_tiny_cfg(entropy_in_target=False))
        b = Trainer(_tiny_cfg())
        a.run(30)
        b.run(30)
        assert a.metrics[-1]["critic_loss_1"] != b.metrics[-1]["critic_loss_1"]
        assert np.isnan(a.metrics[-1]["mean_logpi"]) or a.metrics[-1]["mean_logpi"] == 0.0

    def test_static_mixture_task(self):
        cfg = _tiny_cfg().replace(env=config.EnvConfig(name="mixture_static"),
                                  eval=config.EvalConfig(every=30, samples=50))
        tr = Trainer(cfg)
        tr.run()
        assert tr.critics is None and len(tr.evals) == 2
        np.testing.assert_allclose(sum(tr.evals[-1][f"mode_{i}"] for i in range(4)), 1.0)
