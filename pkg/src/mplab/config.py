"""Run configuration: flat ``key = value`` text with dotted section prefixes.

Every key has a default; unknown keys and malformed values are rejected
with the offending key named in the message.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from .ewta import EwtaSchedule
from .worldsim.episode import WorldConfig, outcome_bound

METHODS = ("kalman", "linear", "fln", "fln_noprior", "bayesian")


class ConfigError(ValueError):
    """Invalid configuration key or value."""


@dataclass(frozen=True)
class DataConfig:
    train_episodes: int = 60
    test_episodes: int = 60
    test_seed_offset: int = 100_000
    t_stride: int = 1
    test_stride: int = 3
    scenes: int = 200


@dataclass(frozen=True)
class EwtaConfig:
    stages: tuple[int, ...] = (20, 10, 5, 2, 1)
    steps_per_stage: int = 2000


@dataclass(frozen=True)
class TrainSection:
    lr: float = 1e-3
    batch: int = 32
    hidden: int = 256
    layers: int = 3
    fit_steps: int = 2000
    fit_hidden: int = 500
    fit_dropout: float = 0.2
    log_every: int = 50


@dataclass(frozen=True)
class RpnConfig:
    t_stride: int = 1


@dataclass(frozen=True)
class RtnConfig:
    steps: int = 4000
    horizons: tuple[int, ...] = (15, 5)


@dataclass(frozen=True)
class FlnConfig:
    k: int = 4
    observe: int = 5
    horizon: int = 15


@dataclass(frozen=True)
class EpnConfig:
    k: int = 8
    horizon: int = 5
    events: int = 200
    steps_per_stage: int = 2000
    fit_steps: int = 2000


@dataclass(frozen=True)
class BayesConfig:
    dropout: float = 0.2
    samples: int = 20
    k: int = 4


@dataclass(frozen=True)
class EvalConfig:
    methods: tuple[str, ...] = METHODS
    coverage_px: float = 3.0
    smoothing_px: float = 2.0
    density_points: int = 64


SECTIONS = {
    "world": WorldConfig,
    "data": DataConfig,
    "ewta": EwtaConfig,
    "train": TrainSection,
    "rpn": RpnConfig,
    "rtn": RtnConfig,
    "fln": FlnConfig,
    "epn": EpnConfig,
    "bayes": BayesConfig,
    "eval": EvalConfig,
}


@dataclass(frozen=True)
class RunConfig:
    world: WorldConfig = field(default_factory=WorldConfig)
    data: DataConfig = field(default_factory=DataConfig)
    ewta: EwtaConfig = field(default_factory=EwtaConfig)
    train: TrainSection = field(default_factory=TrainSection)
    rpn: RpnConfig = field(default_factory=RpnConfig)
    rtn: RtnConfig = field(default_factory=RtnConfig)
    fln: FlnConfig = field(default_factory=FlnConfig)
    epn: EpnConfig = field(default_factory=EpnConfig)
    bayes: BayesConfig = field(default_factory=BayesConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    @property
    def schedule(self) -> EwtaSchedule:
        return EwtaSchedule(self.ewta.stages, self.ewta.steps_per_stage)

    def train_config(self, stage: str | None = None):
        """Training settings; ``stage="epn"`` applies the emergence budgets."""
        from .pipeline.models import TrainConfig
        t = self.train
        sched, fit = self.schedule, t.fit_steps
        if stage == "epn":
            sched = EwtaSchedule(self.ewta.stages, self.epn.steps_per_stage)
            fit = self.epn.fit_steps
        return TrainConfig(t.lr, t.batch, t.hidden, t.layers, sched, fit,
                           t.fit_hidden, t.fit_dropout, self.rtn.steps, t.log_every)

    def with_values(self, **dotted) -> "RunConfig":
        """Copy with ``section__key=value`` overrides (string values are parsed)."""
        return parse_config("\n".join(f"{k.replace('__', '.')} = {_format(v)}"
                                      for k, v in dotted.items()), base=self)


def _format(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, tuple):
        return ", ".join(_format(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _parse_value(key: str, text: str, default):
    text = text.strip()
    try:
        if isinstance(default, bool):
            low = text.lower()
            if low not in ("true", "false"):
                raise ValueError(text)
            return low == "true"
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
        if isinstance(default, tuple):
            items = [s.strip() for s in text.split(",") if s.strip()]
            if default and isinstance(default[0], int):
                return tuple(int(s) for s in items)
            return tuple(items)
        return text
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {text!r} as {type(default).__name__}") from None


def parse_config(text: str, base: RunConfig | None = None) -> RunConfig:
    """Parse ``section.key = value`` lines over ``base`` (defaults if omitted)."""
    cfg = base or RunConfig()
    updates: dict[str, dict] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw.strip()!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        section, _, name = key.partition(".")
        if section not in SECTIONS or not name:
            raise ConfigError(f"unknown config key {key!r}")
        known = {f.name: f for f in fields(SECTIONS[section])}
        if name not in known:
            raise ConfigError(f"unknown config key {key!r}")
        default = getattr(getattr(cfg, section), name)
        updates.setdefault(section, {})[name] = _parse_value(key, value, default)
    parts = {}
    for section in SECTIONS:
        try:
            parts[section] = replace(getattr(cfg, section), **updates.get(section, {}))
        except (TypeError, ValueError) as e:
            raise ConfigError(f"{section}: {e}") from None
    out = RunConfig(**parts)
    validate(out)
    return out


def serialize_config(cfg: RunConfig) -> str:
    lines = []
    for section in SECTIONS:
        obj = getattr(cfg, section)
        for f in fields(obj):
            lines.append(f"{section}.{f.name} = {_format(getattr(obj, f.name))}")
    return "\n".join(lines) + "\n"


def validate(cfg: RunConfig) -> None:
    w = cfg.world
    for name in ("p_cross", "p_continue", "p_wait", "p_straight", "p_left", "p_right"):
        if not 0.0 <= getattr(w, name) <= 1.0:
            raise ConfigError(f"world.{name} must lie in [0, 1]")
    if w.p_cross + w.p_continue + w.p_wait <= 0 or w.p_straight + w.p_left + w.p_right <= 0:
        raise ConfigError("world branch probabilities must not all be zero")
    if w.frame_size % w.downsample:
        raise ConfigError("world.frame_size must be divisible by world.downsample")
    if w.map_size < 32:
        raise ConfigError("world.map_size must be >= 32")
    need = cfg.fln.observe + cfg.fln.horizon + 1
    if w.length < need:
        raise ConfigError(f"world.length must be >= fln.observe + fln.horizon + 1 = {need}")
    bound = outcome_bound(w, max(cfg.fln.horizon, cfg.epn.horizon))
    if bound > w.branch_cap:
        raise ConfigError(f"branch depth allows {bound} outcomes per window, above "
                          f"world.branch_cap = {w.branch_cap}")
    try:
        cfg.schedule
    except ValueError as e:
        raise ConfigError(f"ewta.stages: {e}") from None
    unknown = set(cfg.eval.methods) - set(METHODS)
    if unknown:
        raise ConfigError(f"eval.methods: unknown method(s) {sorted(unknown)}")
    for section, name in (("fln", "k"), ("epn", "k"), ("bayes", "k"), ("data", "train_episodes"),
                          ("epn", "steps_per_stage"), ("ewta", "steps_per_stage"),
                          ("data", "test_episodes"), ("data", "scenes"), ("train", "batch")):
        if getattr(getattr(cfg, section), name) < 1:
            raise ConfigError(f"{section}.{name} must be >= 1")


def load_config(path) -> RunConfig:
    return parse_config(Path(path).read_text())


BENCH_OVERRIDES = """\
# forced 0.5/0.5 crossing decisions, fixed walking speed, noisy detections
world.p_cross = 0.5
world.p_continue = 0.5
world.p_wait = 0.0
world.ped_speed_min = 1.0
world.ped_speed_max = 1.0
world.obs_noise_pos = 0.2
world.obs_noise_size = 1.0
# budgets sized for a single-core run
data.train_episodes = 300
data.test_episodes = 60
ewta.steps_per_stage = 600
train.fit_steps = 2500
rtn.steps = 1000
epn.steps_per_stage = 200
epn.fit_steps = 10000
"""


def bench_config() -> RunConfig:
    return parse_config(BENCH_OVERRIDES)
