"""Run configuration: TOML sections mapped onto frozen dataclasses.

Every field has a default, unknown keys are rejected, and every error names the
offending ``section.key``.
"""

from __future__ import annotations

import dataclasses
import sys
from dataclasses import dataclass, field
from pathlib import Path

import tomli_w

from .envs import GaussianMixture, MultiGoalConfig
from .likelihood import LikelihoodConfig
from .sac import TrainerConfig
from .sampler import SamplerConfig
from .schedule import NoiseSchedule

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

ENV_NAMES = ("multigoal", "mixture_static")
ESTIMATORS = ("qne", "idem", "qsm")


class ConfigError(ValueError):
    def __init__(self, key: str, message: str):
        super().__init__(f"{key}: {message}")
        self.key = key


@dataclass(frozen=True)
class ScheduleConfig:
    """Schedule parameters plus ``diffusion_steps``, the grid size shared by the sampler and the likelihood.

    Setting ``diffusion_steps`` in a file fills ``sampler.steps`` and
    ``likelihood.T`` unless those are given explicitly.
    """

    beta_min: float = 0.1
    beta_max: float = 20.0
    t_min: float = 1e-3
    t_max: float = 0.9946
    diffusion_steps: int = 20

    def __post_init__(self):
        if self.diffusion_steps < 1:
            raise ValueError("diffusion_steps must be positive")
        self.schedule()

    def schedule(self) -> NoiseSchedule:
        return NoiseSchedule(self.beta_min, self.beta_max, self.t_min, self.t_max)


@dataclass(frozen=True)
class NetConfig:
    hidden: tuple = (256, 256)

    def __post_init__(self):
        if len(self.hidden) < 1 or any(h < 1 for h in self.hidden):
            raise ValueError("hidden widths must be positive")


@dataclass(frozen=True)
class EnvConfig:
    name: str = "multigoal"
    goals: tuple = ((5.0, 0.0), (-5.0, 0.0), (0.0, 5.0), (0.0, -5.0))
    velocity_cost: float = 0.05
    goal_radius: float = 1.0
    horizon: int = 50
    arena: float = 7.0
    init_std: float = 0.1
    dt: float = 1.0
    action_scale: float = 1.0
    mixture_means: tuple = ((-0.5, -0.5), (-0.5, 0.5), (0.5, 0.5), (0.5, -0.5))
    mixture_std: float = 0.1
    mixture_weights: tuple = (0.25, 0.25, 0.25, 0.25)

    def __post_init__(self):
        if self.name not in ENV_NAMES:
            raise ValueError(f"must be one of {ENV_NAMES}")
        if self.horizon < 1:
            raise ValueError("horizon must be positive")
        for k in ("goal_radius", "arena", "dt", "action_scale", "mixture_std"):
            if not getattr(self, k) > 0:
                raise ValueError(f"{k} must be positive")
        if self.init_std < 0 or self.velocity_cost < 0:
            raise ValueError("init_std and velocity_cost must be non-negative")
        if len(self.mixture_means) != len(self.mixture_weights):
            raise ValueError("mixture_means and mixture_weights differ in length")
        self.mixture()

    def multigoal(self) -> MultiGoalConfig:
        return MultiGoalConfig(self.goals, self.velocity_cost, self.goal_radius, self.horizon, self.arena,
                               self.init_std, self.dt, self.action_scale)

    def mixture(self) -> GaussianMixture:
        return GaussianMixture(self.mixture_means, self.mixture_std, self.mixture_weights)


@dataclass(frozen=True)
class EvalConfig:
    every: int = 1000
    episodes: int = 10
    action_candidates: int = 10  # best-of-M
    samples: int = 1000  # actions drawn per evaluation on the static task

    def __post_init__(self):
        if self.every < 0:
            raise ValueError("every must be non-negative")
        for k in ("episodes", "action_candidates", "samples"):
            if getattr(self, k) < 1:
                raise ValueError(f"{k} must be positive")


@dataclass(frozen=True)
class BenchConfig:
    """Sweep for ``bench-estimators``: probe points are drawn uniformly from the action box."""

    estimators: tuple = ESTIMATORS
    t: tuple = (0.1, 0.3, 0.5, 0.7, 0.9)
    K: tuple = (100, 500)
    beta: float = 0.05
    q: str = "quadratic"  # or "mixture"
    quadratic_c: float = 25.0
    points: int = 20
    repeats: int = 200
    perturb_std: float = 0.01  # spread of probe-point perturbations for the gradient-only estimator

    def __post_init__(self):
        if not self.estimators or any(e not in ESTIMATORS for e in self.estimators):
            raise ValueError(f"estimators must be drawn from {ESTIMATORS}")
        if any(not 0.0 < t <= 1.0 for t in self.t) or not self.t:
            raise ValueError("t values must lie in (0, 1]")
        if any(k < 1 for k in self.K) or not self.K:
            raise ValueError("K values must be positive")
        if self.q not in ("quadratic", "mixture"):
            raise ValueError("q must be 'quadratic' or 'mixture'")
        if not self.beta > 0 or self.points < 1 or self.repeats < 2 or not self.perturb_std > 0:
            raise ValueError("need beta > 0, points >= 1, repeats >= 2, perturb_std > 0")


@dataclass(frozen=True)
class CheckConfig:
    """Points for ``check-likelihood``: a grid x grid lattice on [low, high]^2, or ``points`` N(0, I) draws if grid = 0."""

    points: int = 50
    grid: int = 0
    low: float = -1.0
    high: float = 1.0

    def __post_init__(self):
        if self.points < 1 or self.grid < 0:
            raise ValueError("points must be positive and grid non-negative")
        if not self.low < self.high:
            raise ValueError("need low < high")


SECTIONS = {
    "schedule": ScheduleConfig,
    "net": NetConfig,
    "sac": TrainerConfig,
    "sampler": SamplerConfig,
    "env": EnvConfig,
    "likelihood": LikelihoodConfig,
    "eval": EvalConfig,
    "bench": BenchConfig,
    "check": CheckConfig,
}


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    out: str = "runs/default"
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)
    net: NetConfig = field(default_factory=NetConfig)
    sac: TrainerConfig = field(default_factory=TrainerConfig)
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    env: EnvConfig = field(default_factory=EnvConfig)
    likelihood: LikelihoodConfig = field(default_factory=LikelihoodConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    bench: BenchConfig = field(default_factory=BenchConfig)
    check: CheckConfig = field(default_factory=CheckConfig)

    @property
    def noise_schedule(self) -> NoiseSchedule:
        return self.schedule.schedule()

    def replace(self, **kw) -> "RunConfig":
        return dataclasses.replace(self, **kw)


def _coerce(key: str, value, default):
    """Check ``value`` against the type of ``default``; lists become tuples."""
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(key, f"expected a boolean, got {value!r}")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(key, f"expected an integer, got {value!r}")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(key, f"expected a number, got {value!r}")
        return float(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(key, f"expected a string, got {value!r}")
        return value
    if isinstance(default, tuple):
        if not isinstance(value, (list, tuple)):
            raise ConfigError(key, f"expected a list, got {value!r}")
        proto = default[0] if default else 0.0
        return tuple(_coerce(f"{key}[{i}]", v, proto) for i, v in enumerate(value))
    raise ConfigError(key, "unsupported field type")


def _build_section(name: str, cls, raw):
    if not isinstance(raw, dict):
        raise ConfigError(name, "expected a table")
    defaults = cls()
    fields = {f.name for f in dataclasses.fields(cls)}
    kw = {}
    for k, v in raw.items():
        key = f"{name}.{k}"
        if k not in fields:
            raise ConfigError(key, "unknown key")
        kw[k] = _coerce(key, v, getattr(defaults, k))
    try:
        return cls(**kw)
    except ValueError as e:
        err = e
    # attribute the failure to a single key where one fails on its own
    for k, v in kw.items():
        try:
            cls(**{k: v})
        except ValueError as e:
            raise ConfigError(f"{name}.{k}", str(e)) from None
    raise ConfigError(f"{name}.{'/'.join(kw)}", str(err)) from None


def from_dict(data: dict) -> RunConfig:
    data = dict(data)
    steps = data.get("schedule", {}).get("diffusion_steps") if isinstance(data.get("schedule"), dict) else None
    if steps is not None:
        for sec, key in (("sampler", "steps"), ("likelihood", "T")):
            raw = data.get(sec, {})
            if isinstance(raw, dict) and key not in raw:
                data[sec] = {**raw, key: steps}
    kw = {}
    for k, v in data.items():
        if k in SECTIONS:
            kw[k] = _build_section(k, SECTIONS[k], v)
        elif k == "seed":
            kw[k] = _coerce("seed", v, 0)
            if v < 0:
                raise ConfigError("seed", "must be non-negative")
        elif k == "out":
            kw[k] = _coerce("out", v, "")
        else:
            raise ConfigError(k, "unknown key")
    return RunConfig(**kw)


def loads(text: str) -> RunConfig:
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as e:
        raise ConfigError("<file>", f"not valid TOML: {e}") from None
    return from_dict(data)


def parse_config(path) -> RunConfig:
    return loads(Path(path).read_text())


def _plain(v):
    if isinstance(v, tuple):
        return [_plain(x) for x in v]
    return v


def to_dict(cfg: RunConfig) -> dict:
    out = {"seed": cfg.seed, "out": cfg.out}
    for name in SECTIONS:
        sec = getattr(cfg, name)
        out[name] = {f.name: _plain(getattr(sec, f.name)) for f in dataclasses.fields(sec)}
    return out


def dumps(cfg: RunConfig) -> str:
    return tomli_w.dumps(to_dict(cfg))
