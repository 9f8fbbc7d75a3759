"""Scenario configuration: dataclasses, JSON loading and canonical presets.

A scenario file is a JSON object with one section per subsystem. Every
parameter of the simulation lives here so that a run is fully described by
(scenario, master seed).
"""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from typing import Optional

from .pool import DocaConfig, ResourcePoolConfig

KMH_TO_MS = 1000.0 / 3600.0


class ConfigError(ValueError):
    """Invalid scenario configuration; message names the offending key."""


@dataclass
class MobilityConfig:
    mode: str = "e0"                      # "e0" (wrap-around) or "poisson"
    n_vehicles: int = 30                  # e0 only: constant population
    speed_mean_kmh: float = 50.0
    speed_std_kmh: float = 0.0
    arrival_rate_per_s: float = 0.4       # poisson mode: per direction
    wrap_delay_rate_per_s: float = 0.4    # e0: re-entry delay ~ Exp(rate)
    initial_placement: str = "uniform"    # "uniform" or "even"
    min_speed_ms: float = 1.0             # truncation of drawn speeds
    substep_ms: int = 10                  # mobility integration step
    avg_speed_estimate_kmh: Optional[float] = None  # v_avg; None -> speed_mean

    @property
    def speed_mean_ms(self) -> float:
        return self.speed_mean_kmh * KMH_TO_MS

    @property
    def speed_std_ms(self) -> float:
        return self.speed_std_kmh * KMH_TO_MS

    @property
    def avg_speed_ms(self) -> float:
        kmh = self.avg_speed_estimate_kmh
        return (kmh if kmh is not None else self.speed_mean_kmh) * KMH_TO_MS

    def validate(self):
        if self.mode not in ("e0", "poisson"):
            raise ConfigError(f"mobility.mode: unknown mode {self.mode!r}")
        if self.mode == "e0" and self.n_vehicles < 1:
            raise ConfigError("mobility.n_vehicles: must be >= 1 in e0 mode")
        if self.mode == "poisson" and self.arrival_rate_per_s <= 0:
            raise ConfigError("mobility.arrival_rate_per_s: must be > 0")
        if self.speed_std_kmh < 0:
            raise ConfigError("mobility.speed_std_kmh: must be >= 0")
        if self.initial_placement not in ("uniform", "even"):
            raise ConfigError("mobility.initial_placement: must be 'uniform' or 'even'")
        if self.substep_ms < 1:
            raise ConfigError("mobility.substep_ms: must be >= 1")


@dataclass
class TrafficConfig:
    kind: str = "periodic"                # "periodic" or "aperiodic"
    s_msg_bytes: int = 190
    event_rate_per_s: float = 1.0         # aperiodic: Poisson events per vehicle
    processing_delay_ms: int = 4
    generation_phase_ms: Optional[int] = None  # None -> period - processing delay
    randomize_phase: bool = False         # per-vehicle random generation offset

    def phase_ms(self, period_ms: int) -> int:
        if self.generation_phase_ms is not None:
            return self.generation_phase_ms % period_ms
        # Default phase puts generation exactly one processing delay before
        # the next pool period, so a message waits at most M subframes.
        return (period_ms - self.processing_delay_ms) % period_ms

    def validate(self):
        if self.kind not in ("periodic", "aperiodic"):
            raise ConfigError(f"traffic.kind: unknown kind {self.kind!r}")
        if self.event_rate_per_s <= 0:
            raise ConfigError("traffic.event_rate_per_s: must be > 0")
        if self.processing_delay_ms < 0:
            raise ConfigError("traffic.processing_delay_ms: must be >= 0")


@dataclass
class ChannelConfig:
    model: str = "protocol"               # "protocol" or "sinr"
    r_tx_m: float = 120.0                 # protocol-model transmission range
    p_tx_dbm: float = -5.0
    p_max_dbm: float = 23.0
    noise_psd_dbm_hz: float = -174.0
    rx_noise_figure_db: float = 9.0
    subchannel_bandwidth_hz: float = 16 * 180e3
    sinr_threshold_db: float = 5.0        # decode threshold, config default
    pathloss_a: float = 22.7              # A*log10(d) + B + C*log10(f/5)
    pathloss_b: float = 41.0
    pathloss_c: float = 20.0
    carrier_ghz: float = 5.9
    min_pathloss_distance_m: float = 3.0
    shadowing_std_db: float = 3.0
    shadowing_decorr_m: float = 25.0
    link_budget_offset_db: float = 6.0    # antenna gains folded into one offset
    reference_mode: bool = False          # propagation-only (no HD, no interference)

    def validate(self):
        if self.model not in ("protocol", "sinr"):
            raise ConfigError(f"channel.model: unknown model {self.model!r}")
        if not 0 < 10 ** (self.p_tx_dbm / 10) and self.model == "sinr":
            raise ConfigError("channel.p_tx_dbm: transmit power must be positive")
        if self.p_tx_dbm > self.p_max_dbm:
            raise ConfigError("channel.p_tx_dbm: exceeds p_max_dbm")
        if self.shadowing_std_db < 0:
            raise ConfigError("channel.shadowing_std_db: must be >= 0")
        if self.r_tx_m <= 0:
            raise ConfigError("channel.r_tx_m: must be > 0")


@dataclass
class Mode4Config:
    t1_ms: int = 4
    t2_ms: int = 14
    c_resel_min: int = 5
    c_resel_max: int = 15
    p_keep: float = 0.0
    thr_sense_dbm: float = -120.0
    sensing_window_ms: int = 1000
    rssi_fraction: float = 0.2

    def validate(self, period_ms: int):
        if self.t1_ms >= self.t2_ms:
            raise ConfigError("mode4.t1_ms: must be < t2_ms")
        if not 0 <= self.p_keep <= 1:
            raise ConfigError("mode4.p_keep: must be in [0, 1]")
        if self.sensing_window_ms % period_ms != 0:
            raise ConfigError("mode4.sensing_window_ms: must be a multiple of the pool period")
        if not 0 < self.rssi_fraction <= 1:
            raise ConfigError("mode4.rssi_fraction: must be in (0, 1]")
        if self.c_resel_min > self.c_resel_max or self.c_resel_min < 1:
            raise ConfigError("mode4.c_resel_min: invalid reselection counter range")


DEFAULT_PRR_BINS = [(0, 20), (20, 40), (40, 60), (60, 80), (80, 100), (100, 120), (120, 140)]


@dataclass
class MetricsConfig:
    prr_bins: list = field(default_factory=lambda: [list(b) for b in DEFAULT_PRR_BINS])
    prr_interval_s: float = 10.0
    warmup_s: float = 200.0
    pir_range_m: float = 50.0
    awareness_n: int = 3
    awareness_k: int = 10
    awareness_window_s: float = 1.0

    def validate(self, horizon_s: float):
        edges = [tuple(b) for b in self.prr_bins]
        for (a, b) in edges:
            if not a < b:
                raise ConfigError(f"metrics.prr_bins: empty bin ({a},{b})")
        for (_, b0), (a1, _) in zip(edges, edges[1:]):
            if a1 < b0:
                raise ConfigError("metrics.prr_bins: bins must be disjoint and ordered")
        if horizon_s <= self.warmup_s:
            raise ConfigError("metrics.warmup_s: warmup must be shorter than the horizon")

    @property
    def max_bin_edge(self) -> float:
        return max(b for _, b in self.prr_bins)


@dataclass
class TrainerConfig:
    n_workers: int = 16
    epoch_len: int = 60
    max_epochs: int = 2000
    lr0: float = 1e-3                     # alpha = lr0 / (1 + lr_decay * ep^lr_pow)
    lr_decay: float = 0.01
    lr_pow: float = 1.1
    reward_range_m: list = field(default_factory=lambda: [0.0, 100.0])
    invalid_action_penalty: float = -10.0
    checkpoint_interval: int = 500
    dtype: str = "float32"
    augment: bool = True
    randomize_first_action: bool = True
    curve_smoothing: int = 100            # trailing epochs in the smoothed curve
    # Per-update global-norm clips; the critic's applies after its fan-in
    # preconditioning. Early epochs see advantages the size of a whole
    # unnormalized ~60-step return; clipping preserves the update direction,
    # bounds the transient, and stops binding once the value baseline tracks.
    # <= 0 disables.
    actor_grad_norm: float = 30.0
    critic_grad_norm: float = 50.0
    # Entropy bonus weight on the actor. Without it the softmax saturates
    # one-hot within tens of epochs (score-function gradients then vanish
    # exactly and the policy can never recover).
    entropy_beta: float = 3.0
    # How many workers may run an epoch simultaneously. All n_workers keep
    # their own environments and apply asynchronously; this only bounds the
    # thread-level parallelism (GIL contention on small hosts). 0 -> auto.
    concurrent_workers: int = 0

    def validate(self):
        if self.n_workers < 1:
            raise ConfigError("trainer.n_workers: must be >= 1")
        if self.epoch_len < 1:
            raise ConfigError("trainer.epoch_len: must be >= 1")
        if self.lr0 <= 0:
            raise ConfigError("trainer.lr0: must be > 0")
        if self.dtype not in ("float32", "float64"):
            raise ConfigError("trainer.dtype: must be 'float32' or 'float64'")

    def alpha(self, epoch: int) -> float:
        return self.lr0 / (1.0 + self.lr_decay * epoch ** self.lr_pow)


@dataclass
class ScenarioConfig:
    name: str = "scenario"
    pool: ResourcePoolConfig = field(default_factory=lambda: ResourcePoolConfig(2, 10))
    doca: DocaConfig = field(default_factory=DocaConfig)
    mobility: MobilityConfig = field(default_factory=MobilityConfig)
    traffic: TrafficConfig = field(default_factory=TrafficConfig)
    channel: ChannelConfig = field(default_factory=ChannelConfig)
    mode4: Mode4Config = field(default_factory=Mode4Config)
    metrics: MetricsConfig = field(default_factory=MetricsConfig)
    trainer: TrainerConfig = field(default_factory=TrainerConfig)
    scheduler: str = "random"             # random | mode4 | oracle | rl | mixed
    horizon_s: float = 1000.0
    seed: int = 1
    # Outcome pairs farther apart than this are not recorded; interference is
    # still summed over all transmitters. None -> max PRR bin edge.
    max_pair_distance_m: Optional[float] = None
    random_initial_assignment: bool = False

    def validate(self) -> "ScenarioConfig":
        self.mobility.validate()
        self.traffic.validate()
        self.channel.validate()
        self.mode4.validate(self.pool.period_ms)
        self.metrics.validate(self.horizon_s)
        self.trainer.validate()
        if self.scheduler not in ("random", "mode4", "oracle", "rl", "mixed"):
            raise ConfigError(f"scheduler: unknown scheduler {self.scheduler!r}")
        if self.horizon_s <= 0:
            raise ConfigError("horizon_s: must be > 0")
        return self

    @property
    def record_distance_m(self) -> float:
        if self.max_pair_distance_m is not None:
            return self.max_pair_distance_m
        return float(self.metrics.max_bin_edge)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def copy(self) -> "ScenarioConfig":
        return scenario_from_dict(self.to_dict())


_SECTION_TYPES = {
    "pool": ResourcePoolConfig,
    "doca": DocaConfig,
    "mobility": MobilityConfig,
    "traffic": TrafficConfig,
    "channel": ChannelConfig,
    "mode4": Mode4Config,
    "metrics": MetricsConfig,
    "trainer": TrainerConfig,
}


def _build_section(name, cls, data):
    if not isinstance(data, dict):
        raise ConfigError(f"{name}: expected an object, got {type(data).__name__}")
    fields = {f.name for f in dataclasses.fields(cls)}
    for key in data:
        if key not in fields:
            raise ConfigError(f"{name}.{key}: unknown key")
    try:
        return cls(**data)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{name}: {exc}") from exc


def scenario_from_dict(data: dict) -> ScenarioConfig:
    if not isinstance(data, dict):
        raise ConfigError("scenario: top level must be an object")
    known = {f.name for f in dataclasses.fields(ScenarioConfig)}
    for key in data:
        if key not in known:
            raise ConfigError(f"{key}: unknown key")
    kwargs = {}
    for key, value in data.items():
        if key in _SECTION_TYPES:
            kwargs[key] = _build_section(key, _SECTION_TYPES[key], value)
        else:
            kwargs[key] = value
    try:
        scenario = ScenarioConfig(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    return scenario.validate()


def load_scenario(path: str) -> ScenarioConfig:
    with open(path) as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: not valid JSON ({exc})") from exc
    return scenario_from_dict(data)


def save_scenario(scenario: ScenarioConfig, path: str) -> None:
    with open(path, "w") as fh:
        json.dump(scenario.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")


# ---------------------------------------------------------------------------
# Canonical scenario presets.

def preset_e0_train(pool=(2, 10)) -> ScenarioConfig:
    """Wrap-around training world: 30 vehicles, protocol channel, 120 m range."""
    k, m = pool
    sc = ScenarioConfig(
        name=f"e0-train-{k}x{m}",
        pool=ResourcePoolConfig(k, m),
        doca=DocaConfig(length_m=500.0, lanes_per_direction=1),
        mobility=MobilityConfig(mode="e0", n_vehicles=30, speed_mean_kmh=50.0,
                                substep_ms=100),
        traffic=TrafficConfig(kind="periodic"),
        channel=ChannelConfig(model="protocol", r_tx_m=120.0),
        metrics=MetricsConfig(warmup_s=0.0, prr_bins=[[0, 100]]),
        scheduler="rl",
        horizon_s=1e9,
        random_initial_assignment=True,
    )
    return sc.validate()


def preset_single_domain(pool=(2, 10), n_vehicles=10) -> ScenarioConfig:
    """Ten vehicles, one collision domain: every same-TB pair collides."""
    k, m = pool
    sc = ScenarioConfig(
        name=f"single-domain-{k}x{m}",
        pool=ResourcePoolConfig(k, m),
        doca=DocaConfig(length_m=500.0, lanes_per_direction=1),
        mobility=MobilityConfig(mode="e0", n_vehicles=n_vehicles,
                                speed_mean_kmh=50.0, initial_placement="even",
                                substep_ms=100),
        traffic=TrafficConfig(kind="periodic"),
        channel=ChannelConfig(model="protocol", r_tx_m=1e6),
        metrics=MetricsConfig(warmup_s=0.0, prr_bins=[[0, 1000]], prr_interval_s=1.0),
        scheduler="oracle",
        horizon_s=1.5,
        max_pair_distance_m=1e6,
    )
    return sc.validate()


def preset_eval(load="L", l_doca=500.0, lanes=1, channel_model="sinr",
                traffic_kind="periodic") -> ScenarioConfig:
    """Poisson-arrival evaluation world with the SINR channel."""
    speeds = {"L": (120.0, 12.0), "HL": (50.0, 5.0)}
    if lanes == 2:
        speeds = {"L": (120.0, 36.0), "HL": (50.0, 15.0)}
    mean, std = speeds[load]
    sc = ScenarioConfig(
        name=f"eval-{load}-{int(l_doca)}m-{lanes}lane",
        pool=ResourcePoolConfig(2, 10),
        doca=DocaConfig(length_m=l_doca, lanes_per_direction=lanes),
        mobility=MobilityConfig(mode="poisson", arrival_rate_per_s=0.4,
                                speed_mean_kmh=mean, speed_std_kmh=std),
        traffic=TrafficConfig(kind=traffic_kind),
        channel=ChannelConfig(model=channel_model, p_tx_dbm=-5.0),
        metrics=MetricsConfig(warmup_s=200.0),
        scheduler="mode4",
        horizon_s=1000.0,
    )
    return sc.validate()


def preset_mixed() -> ScenarioConfig:
    """Mixed per-vehicle schedulers on the SINR channel, for invariant sweeps."""
    sc = preset_eval(load="HL", l_doca=500.0, lanes=1)
    sc.name = "mixed-hl-500m"
    sc.scheduler = "mixed"
    return sc.validate()


PRESETS = {
    "e0_train": preset_e0_train,
    "single_domain": preset_single_domain,
    "eval_loaded": lambda: preset_eval("L"),
    "eval_highload": lambda: preset_eval("HL"),
    "mixed": preset_mixed,
}
