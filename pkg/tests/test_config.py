import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from maxentdp import config
from maxentdp.config import ConfigError


class TestParse:
    def test_empty_file_defaults(self, tmp_path):
        p = tmp_path / "empty.toml"
        p.write_text("")
        cfg = config.parse_config(p)
        assert cfg == config.RunConfig()
        assert (cfg.sac.gamma, cfg.sac.tau, cfg.sac.batch_size, cfg.sac.K) == (0.99, 0.005, 256, 500)
        assert (cfg.likelihood.T, cfg.likelihood.N, cfg.eval.action_candidates) == (20, 50, 10)
        assert cfg.sampler.steps == 20 and cfg.net.hidden == (256, 256)

    @pytest.mark.parametrize(
        "text, key",
        [
            ("[sac]\ngamma = 1.5", "sac.gamma"),
            ("[sac]\ntau = 0.0", "sac.tau"),
            ("[sac]\nbeta = -1.0", "sac.beta"),
            ("[sac]\nbatch_size = 'big'", "sac.batch_size"),
            ("[sac]\ngama = 0.9", "sac.gama"),
            ("[nope]\nx = 1", "nope"),
            ("seed = -3", "seed"),
            ("[env]\nname = 'ant'", "env.name"),
            ("[sampler]\nmethod = 'ddim'", "sampler.method"),
            ("[likelihood]\nnoise = 'sobol'", "likelihood.noise"),
            ("[eval]\naction_candidates = 0", "eval.action_candidates"),
            ("[net]\nhidden = [64, 0]", "net.hidden"),
            ("[sac]\nentropy_in_target = 1", "sac.entropy_in_target"),
        ],
    )
    def test_errors_name_key(self, text, key):
        with pytest.raises(ConfigError) as e:
            config.loads(text)
        assert e.value.key == key
        assert key in str(e.value)

    def test_combined_constraint(self):
        with pytest.raises(ConfigError) as e:
            config.loads("[sampler]\nlow = 1.0\nhigh = 0.5")
        assert e.value.key.startswith("sampler.")

    def test_valid_combination_accepted(self):
        cfg = config.loads("[env]\nmixture_means = [[0.0, 0.0], [1.0, 1.0]]\nmixture_weights = [0.5, 0.5]")
        assert len(cfg.env.mixture_weights) == 2

    def test_invalid_toml(self):
        with pytest.raises(ConfigError):
            config.loads("[sac\n")

    def test_int_promoted_to_float(self):
        assert config.loads("[sac]\nbeta = 1").sac.beta == 1.0

    def test_diffusion_steps_fills_grids(self):
        cfg = config.loads("[schedule]\ndiffusion_steps = 8")
        assert cfg.sampler.steps == 8 and cfg.likelihood.T == 8
        cfg = config.loads("[schedule]\ndiffusion_steps = 8\n[sampler]\nsteps = 3")
        assert cfg.sampler.steps == 3 and cfg.likelihood.T == 8


class TestRoundTrip:
    def test_defaults(self):
        cfg = config.RunConfig()
        assert config.loads(config.dumps(cfg)) == cfg

    def test_file_roundtrip(self, tmp_path):
        text = "seed = 4\nout = 'x'\n[net]\nhidden = [64, 64]\n[sac]\nK = 64\nentropy_in_target = false\n[bench]\nK = [10, 20]\n"
        cfg = config.loads(text)
        p = tmp_path / "c.toml"
        p.write_text(config.dumps(cfg))
        assert config.parse_config(p) == cfg

    @given(
        st.integers(0, 2**31),
        st.floats(0.01, 0.999),
        st.floats(1e-3, 1.0),
        st.lists(st.integers(1, 512), min_size=1, max_size=4),
        st.sampled_from(["pf_ode", "ancestral"]),
    )
    @settings(max_examples=50, deadline=None)
    def test_property(self, seed, gamma, tau, hidden, method):
        cfg = config.RunConfig(seed=seed).replace(
            sac=config.TrainerConfig(gamma=gamma, tau=tau),
            net=config.NetConfig(tuple(hidden)),
            sampler=config.SamplerConfig(method),
        )
        assert config.loads(config.dumps(cfg)) == cfg
