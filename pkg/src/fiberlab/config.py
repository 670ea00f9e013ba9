"""Experiment configuration: strict YAML parsing, defaults, and seed streams.

Unknown keys are rejected so a typo never silently falls back to a default.
All randomness derives from one root seed through named sub-streams, letting
individual stages (data, channel noise, initialization, shuffling) be varied
independently.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, replace

import numpy as np
import yaml

from .channel import LinkSpec, uniform_link
from .compensation import DbpSpec
from .equalizer import EqualizerSpec, TrainingConfig
from .waveform import PulseShapeSpec

# fixed stream tags: changing one stage's stream leaves the others untouched
_STREAMS = {"data-bits": 0x6269, "channel-noise": 0x6368, "init": 0x696e, "shuffle": 0x7368}

SWEEP_VARIABLES = ("launch_power", "distance", "tap_length")


def stream_seed(root_seed: int, stream: str, *extra: int) -> int:
    """Deterministic integer seed for one named randomness stream."""
    if stream not in _STREAMS:
        raise KeyError(f"unknown stream {stream!r}; expected one of {sorted(_STREAMS)}")
    seq = np.random.SeedSequence([int(root_seed), _STREAMS[stream], *map(int, extra)])
    return int(seq.generate_state(1, np.uint64)[0])


@dataclass(frozen=True)
class LinkConfig:
    n_spans: int = 10
    span_km: float = 80.0
    alpha_db_per_km: float = 0.2
    beta2_ps2_per_km: float = -21.7
    gamma_per_w_km: float = 1.3
    step_km: float = 1.0
    noise_figure_db: float = 5.0
    center_frequency_thz: float = 193.5
    ase: bool = True
    launch_power_dbm: float = 1.0

    def build(self) -> LinkSpec:
        return uniform_link(
            n_spans=self.n_spans, span_km=self.span_km,
            launch_power_dbm=self.launch_power_dbm,
            alpha_db_per_km=self.alpha_db_per_km,
            beta2_ps2_per_km=self.beta2_ps2_per_km,
            gamma_per_w_km=self.gamma_per_w_km, step_km=self.step_km,
            noise_figure_db=self.noise_figure_db,
            center_frequency_thz=self.center_frequency_thz, ase=self.ase)


@dataclass(frozen=True)
class SignalConfig:
    symbol_rate_ghz: float = 32.0
    modulation: str = "16qam"
    rolloff: float = 0.01
    filter_span: int = 256
    sps: int = 4

    def __post_init__(self):
        if self.modulation != "16qam":
            raise ValueError("only 16qam modulation is supported")

    def pulse_spec(self) -> PulseShapeSpec:
        return PulseShapeSpec(rolloff=self.rolloff, filter_span=self.filter_span, sps=self.sps)


@dataclass(frozen=True)
class EqualizerConfig:
    mode: str = "co_simplified"
    k: int = 10
    n_input: int = 2
    n_hidden: int = 16
    block_length: int = 30000
    train_symbols: int = 20_000
    test_symbols: int = 200_000
    learning_rate: float = 1e-3
    batch_size: int = 256
    max_epochs: int = 200
    patience: int = 10
    val_fraction: float = 0.1

    def spec(self, mode: str | None = None) -> EqualizerSpec:
        return EqualizerSpec(mode=mode or self.mode, k=self.k, n_input=self.n_input,
                             n_hidden=self.n_hidden, block_length=self.block_length)

    def training(self, seed: int) -> TrainingConfig:
        return TrainingConfig(train_symbols=self.train_symbols, test_symbols=self.test_symbols,
                              seed=seed, learning_rate=self.learning_rate,
                              batch_size=self.batch_size, max_epochs=self.max_epochs,
                              patience=self.patience, val_fraction=self.val_fraction)


@dataclass(frozen=True)
class CompensationConfig:
    kind: str = "cdc"
    steps_per_span: int = 1
    oversampling: int = 2
    fft_size: int = 4096

    def __post_init__(self):
        if self.kind not in ("cdc", "dbp"):
            raise ValueError("compensation kind must be 'cdc' or 'dbp'")

    def dbp_spec(self, steps_per_span: int | None = None) -> DbpSpec:
        return DbpSpec(steps_per_span=steps_per_span or self.steps_per_span,
                       oversampling=self.oversampling, fft_size=self.fft_size)


@dataclass(frozen=True)
class SweepConfig:
    variable: str = "launch_power"
    values: tuple = (-2.0, -1.0, 0.0, 1.0, 2.0, 3.0, 4.0)

    def __post_init__(self):
        if self.variable not in SWEEP_VARIABLES:
            raise ValueError(f"sweep variable must be one of {SWEEP_VARIABLES}")
        if not self.values:
            raise ValueError("sweep values must be nonempty")
        object.__setattr__(self, "values", tuple(float(v) for v in self.values))


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int = 1234
    output_dir: str = "runs"
    workers: int = 1
    link: LinkConfig = field(default_factory=LinkConfig)
    signal: SignalConfig = field(default_factory=SignalConfig)
    equalizer: EqualizerConfig = field(default_factory=EqualizerConfig)
    compensation: CompensationConfig = field(default_factory=CompensationConfig)
    sweep: SweepConfig = field(default_factory=SweepConfig)

    def to_dict(self) -> dict:
        return asdict(self)

    def with_launch_power(self, p_dbm: float) -> "ExperimentConfig":
        return replace(self, link=replace(self.link, launch_power_dbm=float(p_dbm)))

    def with_distance(self, km: float) -> "ExperimentConfig":
        n = round(km / self.link.span_km)
        if abs(n * self.link.span_km - km) > 1e-9 or n < 1:
            raise ValueError(f"distance {km} km is not a whole number of {self.link.span_km} km spans")
        return replace(self, link=replace(self.link, n_spans=n))

    def with_tap_length(self, l_t: float) -> "ExperimentConfig":
        l_t = int(l_t)
        if l_t % 2 != 1 or l_t < 1:
            raise ValueError("tap length L_T must be an odd positive integer")
        return replace(self, equalizer=replace(self.equalizer, k=(l_t - 1) // 2))


_SECTION_TYPES = {
    "link": LinkConfig,
    "signal": SignalConfig,
    "equalizer": EqualizerConfig,
    "compensation": CompensationConfig,
    "sweep": SweepConfig,
}
_TOP_SCALARS = ("seed", "output_dir", "workers")


def _build_section(cls, data: dict, where: str):
    allowed = set(cls.__dataclass_fields__)
    unknown = set(data) - allowed
    if unknown:
        raise ValueError(f"unknown keys in {where}: {sorted(unknown)}")
    if "values" in data and isinstance(data["values"], list):
        data = {**data, "values": tuple(data["values"])}
    return cls(**data)


def desk_scale_config() -> ExperimentConfig:
    """The built-in single-channel 32 GBd, 10 x 80 km reference configuration."""
    return ExperimentConfig()


def load_config(path) -> ExperimentConfig:
    with open(path) as fh:
        raw = yaml.safe_load(fh)
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ValueError("config file must hold a mapping at the top level")
    unknown = set(raw) - set(_SECTION_TYPES) - set(_TOP_SCALARS)
    if unknown:
        raise ValueError(f"unknown top-level config keys: {sorted(unknown)}")
    kwargs = {}
    for key in _TOP_SCALARS:
        if key in raw:
            kwargs[key] = raw[key]
    for name, cls in _SECTION_TYPES.items():
        if name in raw:
            section = raw[name]
            if not isinstance(section, dict):
                raise ValueError(f"config section {name!r} must be a mapping")
            kwargs[name] = _build_section(cls, section, f"section {name!r}")
    return ExperimentConfig(**kwargs)


def dump_config(config: ExperimentConfig, path) -> None:
    with open(path, "w") as fh:
        yaml.safe_dump(config.to_dict(), fh, sort_keys=True)
