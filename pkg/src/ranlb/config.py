"""Configuration dataclasses, presets and the YAML config loader.

Every parameter block validates itself in ``__post_init__`` so a bad value
fails at construction, before any simulation work starts.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
import typing
from dataclasses import dataclass, field
from pathlib import Path

import yaml


class ConfigError(ValueError):
    """Invalid or inconsistent configuration."""


def _check(cond, msg):
    if not cond:
        raise ConfigError(msg)


@dataclass
class MobilityParams:
    alpha: float = 0.9
    mean_speed: float = 1.5  # m/s
    mean_heading: float = math.pi  # rad
    sigma_speed: float = 0.5  # m/s
    sigma_heading: float = 0.6  # rad
    tick: float = 0.1  # s
    area_width: float = 1000.0
    area_height: float = 1000.0

    def __post_init__(self):
        _check(0.0 <= self.alpha <= 1.0, "mobility.alpha must lie in [0, 1]")
        _check(self.sigma_speed >= 0, "mobility.sigma_speed must be >= 0")
        _check(self.sigma_heading >= 0, "mobility.sigma_heading must be >= 0")
        _check(self.tick > 0, "mobility.tick must be > 0")
        _check(self.area_width > 0 and self.area_height > 0, "mobility area must be positive")


@dataclass
class ChannelParams:
    tx_power: float = 46.0  # dBm, whole carrier
    bandwidth: float = 20.0  # MHz
    prb_count: int = 106
    noise_figure: float = 7.0  # dB
    shadow_sigma: float = 6.0  # dB
    shadow_decorrelation: float = 50.0  # m
    d_min: float = 10.0  # m
    site_radius: float = 300.0  # m, circumradius of the BS triangle

    def __post_init__(self):
        _check(self.prb_count > 0, "channel.prb_count must be > 0")
        _check(math.isfinite(self.tx_power), "channel.tx_power must be finite")
        _check(self.shadow_sigma >= 0, "channel.shadow_sigma must be >= 0")
        _check(self.shadow_decorrelation > 0, "channel.shadow_decorrelation must be > 0")
        _check(self.d_min > 0, "channel.d_min must be > 0")


@dataclass
class TrafficParams:
    full_buffer_fraction: float = 0.05
    arrival_rate: float = 60.0  # packets/s per bursty UE (~70% PRB utilization at 45 UEs)
    packet_size: int = 1500  # bytes
    queue_capacity: int = 500  # packets
    qci_weight_bursty: float = 1.0
    qci_weight_full_buffer: float = 1.0

    def __post_init__(self):
        _check(0.0 <= self.full_buffer_fraction <= 1.0, "traffic.full_buffer_fraction must lie in [0, 1]")
        _check(self.arrival_rate >= 0, "traffic.arrival_rate must be >= 0")
        _check(self.packet_size > 0, "traffic.packet_size must be > 0")
        _check(self.queue_capacity >= 0, "traffic.queue_capacity must be >= 0")


@dataclass
class SchedulerParams:
    beta: float = 0.5
    rate_ema: float = 0.05
    harq_max: int = 4
    bler_target: float = 0.1

    def __post_init__(self):
        _check(0.0 <= self.beta <= 1.0, "scheduler.beta must lie in [0, 1]")
        _check(0.0 < self.rate_ema <= 1.0, "scheduler.rate_ema must lie in (0, 1]")
        _check(self.harq_max >= 1, "scheduler.harq_max must be >= 1")
        _check(0.0 <= self.bler_target < 1.0, "scheduler.bler_target must lie in [0, 1)")


@dataclass
class A3Params:
    hysteresis: float = 2.0  # dB
    ttt: float = 0.32  # s
    t_pingpong: float = 5.0  # s
    t_hof: float = 1.0  # s
    rlf_sinr_threshold: float = -8.0  # dB
    rlf_duration: float = 0.2  # s
    interruption: float = 0.05  # s

    def __post_init__(self):
        _check(self.hysteresis >= 0, "handover.hysteresis must be >= 0")
        _check(self.ttt >= 0, "handover.ttt must be >= 0")
        _check(self.interruption >= 0, "handover.interruption must be >= 0")


@dataclass
class NoiseParams:
    sigma_rsrp: float = 1.0  # dB
    sigma_cqi: float = 0.5  # CQI units
    sigma_delay_ms: float = 2.0  # ms, applied to latency and jitter reports

    def __post_init__(self):
        _check(min(self.sigma_rsrp, self.sigma_cqi, self.sigma_delay_ms) >= 0, "noise sigmas must be >= 0")


@dataclass
class PipeParams:
    lag: float = 0.0  # s
    p_miss: float = 0.0
    ema_constant: float = 0.3

    def __post_init__(self):
        _check(self.lag >= 0, "pipe.lag must be >= 0")
        _check(0.0 <= self.p_miss <= 1.0, "pipe.p_miss must lie in [0, 1]")
        _check(0.0 < self.ema_constant <= 1.0, "pipe.ema_constant must lie in (0, 1]")


KPI_NAMES = ("thr", "fair", "lat", "jit", "plr", "ho")
HIGHER_IS_BETTER = {"thr": True, "fair": True, "lat": False, "jit": False, "plr": False, "ho": False}


@dataclass
class RewardWeights:
    thr: float = 0.35
    fair: float = 0.20
    lat: float = 0.20
    plr: float = 0.10
    jit: float = 0.10
    ho: float = 0.05
    lambda_s: float = 0.10
    mode: str = "normalized"  # normalized | legacy
    smoothness: str = "l2"  # l2 | squared
    delta_a: float = 12.0  # dB, normalizer of the squared smoothness form
    normalization: str = "percentile"  # percentile | sigmoid

    def __post_init__(self):
        ws = self.as_array()
        _check(all(w >= 0 for w in ws), "reward weights must be >= 0")
        _check(abs(sum(ws) - 1.0) <= 1e-9, f"reward weights must sum to 1 (got {sum(ws)!r})")
        _check(self.lambda_s >= 0, "reward.lambda_s must be >= 0")
        _check(self.mode in ("normalized", "legacy"), "reward.mode must be 'normalized' or 'legacy'")
        _check(self.smoothness in ("l2", "squared"), "reward.smoothness must be 'l2' or 'squared'")
        _check(self.normalization in ("percentile", "sigmoid"), "reward.normalization must be 'percentile' or 'sigmoid'")
        _check(self.delta_a > 0, "reward.delta_a must be > 0")

    def as_array(self):
        return [getattr(self, k) for k in KPI_NAMES]

    def renormalized(self, **overrides):
        """Copy with some weights replaced, rescaled so the six sum to 1."""
        vals = {k: getattr(self, k) for k in KPI_NAMES}
        vals.update({k: v for k, v in overrides.items() if k in vals})
        total = sum(vals.values())
        _check(total > 0, "at least one reward weight must be positive")
        vals = {k: v / total for k, v in vals.items()}
        rest = {k: v for k, v in overrides.items() if k not in vals}
        return dataclasses.replace(self, **vals, **rest)


@dataclass
class LegacyRefs:
    t_max: float = 0.0  # bit/s; 0 selects the cell peak PHY rate
    j_max: float = 0.05  # s
    l_max: float = 0.10  # s
    h_max: float = 10.0  # handovers per window

    def __post_init__(self):
        _check(self.t_max >= 0 and self.j_max > 0 and self.l_max > 0 and self.h_max > 0,
               "legacy reward references must be positive")


@dataclass
class SimConfig:
    n_cells: int = 3
    n_ues: int = 45
    control_interval: float = 1.0  # s
    episode_length: int = 600  # control steps
    cio_min: float = -6.0
    cio_max: float = 6.0
    gamma: float = 0.99
    warmup_ticks: int = 10
    mobility: MobilityParams = field(default_factory=MobilityParams)
    channel: ChannelParams = field(default_factory=ChannelParams)
    traffic: TrafficParams = field(default_factory=TrafficParams)
    scheduler: SchedulerParams = field(default_factory=SchedulerParams)
    handover: A3Params = field(default_factory=A3Params)
    noise: NoiseParams = field(default_factory=NoiseParams)
    pipe: PipeParams = field(default_factory=PipeParams)
    reward: RewardWeights = field(default_factory=RewardWeights)
    legacy: LegacyRefs = field(default_factory=LegacyRefs)

    def __post_init__(self):
        _check(self.n_cells >= 1, "sim.n_cells must be >= 1")
        _check(self.n_ues >= 1, "sim.n_ues must be >= 1")
        _check(self.episode_length >= 1, "sim.episode_length must be >= 1")
        _check(self.cio_max > self.cio_min, "sim.cio_max must exceed sim.cio_min")
        _check(0 < self.gamma <= 1, "sim.gamma must lie in (0, 1]")
        ratio = self.control_interval / self.mobility.tick
        _check(self.control_interval > 0 and abs(ratio - round(ratio)) < 1e-9 and round(ratio) >= 1,
               "sim.control_interval must be an integer multiple of mobility.tick")

    @property
    def ticks_per_step(self):
        return int(round(self.control_interval / self.mobility.tick))


@dataclass
class PPOHyperparams:
    gamma: float = 0.99
    gae_lambda: float = 0.95
    clip_eps: float = 0.2
    entropy_coef: float = 0.01
    value_coef: float = 0.5
    lr: float = 3e-4
    batch_size: int = 64
    minibatches: int = 8
    epochs: int = 10
    horizon: int = 2048
    max_grad_norm: float = 0.5
    kl_target: float = 0.01
    hidden: tuple = (256, 256)
    init_log_std: float = 0.0
    state_dependent_std: bool = False

    def __post_init__(self):
        self.hidden = tuple(int(h) for h in self.hidden)
        for name in ("gamma", "clip_eps", "lr", "max_grad_norm"):
            _check(getattr(self, name) > 0, f"ppo.{name} must be > 0")
        _check(self.clip_eps < 1, "ppo.clip_eps must be < 1")
        _check(0 <= self.gae_lambda <= 1, "ppo.gae_lambda must lie in [0, 1]")
        _check(self.entropy_coef >= 0 and self.value_coef >= 0, "ppo loss coefficients must be >= 0")
        _check(self.kl_target >= 0, "ppo.kl_target must be >= 0")
        _check(min(self.batch_size, self.minibatches, self.epochs, self.horizon) >= 1,
               "ppo batch/minibatch/epoch/horizon counts must be >= 1")


@dataclass
class ReBuHaParams:
    rbu_high: float = 0.8
    rbu_low: float = 0.5
    cio_step: float = 1.0  # dB
    clean_utilization: bool = True

    def __post_init__(self):
        _check(0 <= self.rbu_low < self.rbu_high <= 1, "rebuha thresholds must satisfy 0 <= low < high <= 1")
        _check(self.cio_step > 0, "rebuha.cio_step must be > 0")


@dataclass
class CDQLParams:
    levels: tuple = (-6.0, -3.0, 0.0, 3.0, 6.0)
    replay_capacity: int = 50000
    batch_size: int = 64
    eps_start: float = 1.0
    eps_end: float = 0.05
    eps_decay_fraction: float = 0.5
    target_sync: int = 500
    lr: float = 3e-4
    gamma: float = 0.99
    hidden: tuple = (256, 256)
    max_grad_norm: float = 10.0

    def __post_init__(self):
        self.levels = tuple(float(x) for x in self.levels)
        self.hidden = tuple(int(h) for h in self.hidden)
        _check(len(self.levels) >= 1, "cdql.levels must not be empty")
        _check(0 < self.eps_decay_fraction <= 1, "cdql.eps_decay_fraction must lie in (0, 1]")
        _check(self.replay_capacity >= self.batch_size >= 1, "cdql.replay_capacity must be >= batch_size >= 1")


DEFAULT_UE_GRID = (15, 30, 45, 60, 90, 120)


@dataclass
class ExperimentConfig:
    sim: SimConfig = field(default_factory=SimConfig)
    ppo: PPOHyperparams = field(default_factory=PPOHyperparams)
    cdql: CDQLParams = field(default_factory=CDQLParams)
    rebuha: ReBuHaParams = field(default_factory=ReBuHaParams)
    seeds: tuple = (0, 1, 2, 3, 4)
    episodes: int = 500
    eval_episodes: int = 10
    calibration_seeds: tuple = (1000, 1001)
    calibration_episodes: int = 2
    buckets: tuple = (1, 20, 50, 100, 250, 500)
    bucket_halfwidth: int = 5
    sweeps: dict = field(default_factory=lambda: {
        "ue_count": list(DEFAULT_UE_GRID),
        "sigma_rsrp": [1.0, 3.0, 5.0],
        "sigma_cqi": [0.5, 1.0, 2.0],
        "sigma_delay": [2.0, 5.0, 10.0],
        "lag": [0.0, 0.1, 0.2, 0.5],
        "p_miss": [0.0, 0.01, 0.05, 0.10],
        "speed": [1.5, 15.0, 30.0],
        "alpha": [0.2, 0.6, 0.9],
        "delta_t": [0.5, 1.0, 5.0],
    })
    out: str = "results"

    def __post_init__(self):
        self.seeds = tuple(int(s) for s in self.seeds)
        self.calibration_seeds = tuple(int(s) for s in self.calibration_seeds)
        self.buckets = tuple(int(b) for b in self.buckets)
        _check(len(self.seeds) >= 1, "seeds must not be empty")
        _check(self.episodes >= 0, "episodes must be >= 0")
        _check(self.eval_episodes >= 1, "eval_episodes must be >= 1")
        unknown = set(self.sweeps) - set(SWEEP_AXES)
        _check(not unknown, f"unknown sweep axis in sweeps: {sorted(unknown)}")
        overlap = set(self.seeds) & set(self.calibration_seeds)
        _check(not overlap, f"calibration seeds must be held out from training seeds: {sorted(overlap)}")

    def config_hash(self):
        blob = json.dumps(to_dict(self), sort_keys=True, default=str).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


SWEEP_AXES = ("ue_count", "sigma_rsrp", "sigma_cqi", "sigma_delay", "lag", "p_miss", "speed", "alpha", "delta_t")


def with_axis(sim: SimConfig, axis: str, value) -> SimConfig:
    """Return a copy of ``sim`` with one sweep axis set to ``value``."""
    r = dataclasses.replace
    if axis == "ue_count":
        return r(sim, n_ues=int(value))
    if axis == "sigma_rsrp":
        return r(sim, noise=r(sim.noise, sigma_rsrp=float(value)))
    if axis == "sigma_cqi":
        return r(sim, noise=r(sim.noise, sigma_cqi=float(value)))
    if axis == "sigma_delay":
        return r(sim, noise=r(sim.noise, sigma_delay_ms=float(value)))
    if axis == "lag":
        return r(sim, pipe=r(sim.pipe, lag=float(value)))
    if axis == "p_miss":
        return r(sim, pipe=r(sim.pipe, p_miss=float(value)))
    if axis == "speed":
        v = float(value)
        return r(sim, mobility=r(sim.mobility, mean_speed=v, sigma_speed=v / 3.0))
    if axis == "alpha":
        return r(sim, mobility=r(sim.mobility, alpha=float(value)))
    if axis == "delta_t":
        return r(sim, control_interval=float(value))
    raise ConfigError(f"unknown sweep axis {axis!r}; expected one of {', '.join(SWEEP_AXES)}")


# ---------------------------------------------------------------- presets

def full_preset() -> ExperimentConfig:
    return ExperimentConfig()


def desk_preset() -> ExperimentConfig:
    sim = SimConfig(episode_length=100)
    return ExperimentConfig(
        sim=sim,
        # shorter rollouts give more (KL-bounded) updates within the small budget;
        # a narrower initial policy keeps the CIO-change penalty from swamping the reward
        ppo=PPOHyperparams(horizon=128, init_log_std=-1.0),
        seeds=(0, 1, 2),
        episodes=150,
        eval_episodes=5,
        buckets=(1, 20, 50, 100, 150),
        sweeps={
            "ue_count": [15, 45, 90],
            "sigma_rsrp": [1.0, 3.0, 5.0],
            "lag": [0.0, 0.1, 0.2, 0.5],
            "p_miss": [0.0, 0.01, 0.05, 0.10],
            "speed": [1.5, 15.0, 30.0],
        },
        out="results/desk",
    )


PRESETS = {"desk": desk_preset, "full": full_preset}


# ---------------------------------------------------------------- dict <-> dataclass

def to_dict(obj):
    if dataclasses.is_dataclass(obj):
        return {f.name: to_dict(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, (list, tuple)):
        return [to_dict(x) for x in obj]
    if isinstance(obj, dict):
        return {k: to_dict(v) for k, v in obj.items()}
    return obj


def from_dict(cls, data, base=None, path=""):
    """Build ``cls`` from a nested mapping, overlaying onto ``base``.

    Unknown keys raise :class:`ConfigError` naming the offending key path.
    """
    if not isinstance(data, dict):
        raise ConfigError(f"{path or 'config'}: expected a mapping, got {type(data).__name__}")
    base = base if base is not None else cls()
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    updates = {}
    for key, value in data.items():
        where = f"{path}.{key}" if path else key
        if key not in names:
            raise ConfigError(f"unknown config key: {where}")
        current = getattr(base, key)
        if dataclasses.is_dataclass(current):
            updates[key] = from_dict(type(current), value, current, where)
        elif hints.get(key) is dict:
            if not isinstance(value, dict):
                raise ConfigError(f"{where}: expected a mapping")
            updates[key] = value
        else:
            updates[key] = _coerce(value, current, where)
    try:
        return dataclasses.replace(base, **updates)
    except ConfigError as exc:
        raise ConfigError(f"{path or 'config'}: {exc}") from None


def _coerce(value, current, where):
    if isinstance(current, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{where}: expected a boolean")
        return value
    if isinstance(current, (int, float)) and not isinstance(current, bool):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{where}: expected a number, got {value!r}")
        return type(current)(value) if isinstance(current, float) else value
    if isinstance(current, tuple):
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{where}: expected a list")
        return tuple(value)
    if isinstance(current, str) and not isinstance(value, str):
        raise ConfigError(f"{where}: expected a string")
    return value


def load_config(path=None, preset="desk", overrides=None) -> ExperimentConfig:
    if preset not in PRESETS:
        raise ConfigError(f"unknown preset {preset!r}")
    cfg = PRESETS[preset]()
    if path is not None:
        text = Path(path).read_text()
        try:
            data = yaml.safe_load(text) or {}
        except yaml.YAMLError as exc:
            raise ConfigError(f"cannot parse {path}: {exc}") from None
        cfg = from_dict(ExperimentConfig, data, cfg)
    if overrides:
        cfg = from_dict(ExperimentConfig, overrides, cfg)
    return cfg
