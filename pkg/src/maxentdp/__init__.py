"""Maximum-entropy reinforcement learning with a diffusion-model policy, in numpy."""

from .config import RunConfig, parse_config
from .likelihood import LikelihoodConfig, log_prob
from .networks import Critic, MinCritic, NoisePredictionNet
from .qne import idem_target, qne_target, qsm_target
from .sac import Trainer, TrainerConfig, train
from .sampler import SamplerConfig, sample_action, select_action
from .schedule import NoiseSchedule

__all__ = [
    "Critic", "LikelihoodConfig", "MinCritic", "NoisePredictionNet", "NoiseSchedule", "RunConfig", "SamplerConfig",
    "Trainer", "TrainerConfig", "idem_target", "log_prob", "parse_config", "qne_target", "qsm_target", "sample_action",
    "select_action", "train",
]
