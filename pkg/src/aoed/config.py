"""Run configuration: defaults, YAML files, and key=value overrides.

Every tunable of the pipeline lives here with a default chosen so that
``aoed design`` runs a realistic problem with no flags at all.  Config
files are YAML with one section per pipeline stage; overrides use dotted
paths (``surrogate.rank=80``) and parse values as YAML literals.
"""

import dataclasses
from dataclasses import dataclass, field

import yaml

from .mesh import DEFAULT_HOLES


@dataclass(slots=True)
class MeshConfig:
    resolution: int = 33
    holes: list = field(default_factory=lambda: [list(h) for h in DEFAULT_HOLES])
    file: str = None


@dataclass(slots=True)
class PriorConfig:
    alpha: float = 8.0e-3
    beta: float = 1.0e-2


@dataclass(slots=True)
class TransportConfig:
    kappa: float = 1.0e-3
    t_final: float = 4.0
    n_steps: int = 64
    velocity: str = "analytic"  # analytic | zero | path to a velocity file
    velocity_scale: float = 1.0
    velocity_cutoff: float = 0.08
    allow_low_kappa: bool = False


@dataclass(slots=True)
class ObservationConfig:
    sensor_file: str = None
    sensor_spacing: float = 0.0818
    sensor_margin: float = 0.05
    sensor_clearance: float = 0.02
    n_times: int = 19
    time_start: float = 1.0
    time_end: float = 4.0
    noise_sigma: float = 1.0


@dataclass(slots=True)
class WhiteningConfig:
    mode: str = "auto"
    degree: int = 10
    dense_cap: int = 2000


@dataclass(slots=True)
class SurrogateConfig:
    rank: int = 60
    oversampling: int = 10
    power_iters: int = 1
    seed: int = 2024
    residual_tol: float = 1.0e-3


@dataclass(slots=True)
class EstimatorConfig:
    n_vectors: int = 100
    seed: int = 93


@dataclass(slots=True)
class PenaltyConfig:
    kind: str = "smoothed_l0"  # or l1
    gamma: float = 0.05
    eps_steps: int = 10
    binary_tol: float = 1.0e-3
    l1_threshold: float = 4.0e-3


@dataclass(slots=True)
class OptimizerConfig:
    max_iter: int = 150
    grad_reduction: float = 1.0e4
    memory: int = 10
    mode: str = "projected"  # or log_barrier


@dataclass(slots=True)
class SpectrumConfig:
    rank: int = 200
    oversampling: int = 10
    power_iters: int = 1


@dataclass(slots=True)
class CompareConfig:
    n_random: int = 20
    seed: int = 7


@dataclass(slots=True)
class TraceStudyConfig:
    n_vectors: list = field(default_factory=lambda: [1, 5, 10, 20, 100])
    repetitions: int = 30
    seed: int = 11


@dataclass(slots=True)
class RankStudyConfig:
    ranks: list = field(default_factory=lambda: [10, 15, 20, 30, 40, 60, 80])
    gamma: float = 50.0


@dataclass(slots=True)
class OutputConfig:
    directory: str = "aoed-output"
    plots: bool = True


@dataclass(slots=True)
class OEDConfig:
    mesh: MeshConfig = field(default_factory=MeshConfig)
    prior: PriorConfig = field(default_factory=PriorConfig)
    transport: TransportConfig = field(default_factory=TransportConfig)
    observation: ObservationConfig = field(default_factory=ObservationConfig)
    whitening: WhiteningConfig = field(default_factory=WhiteningConfig)
    surrogate: SurrogateConfig = field(default_factory=SurrogateConfig)
    estimator: EstimatorConfig = field(default_factory=EstimatorConfig)
    penalty: PenaltyConfig = field(default_factory=PenaltyConfig)
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    spectrum: SpectrumConfig = field(default_factory=SpectrumConfig)
    compare: CompareConfig = field(default_factory=CompareConfig)
    trace_study: TraceStudyConfig = field(default_factory=TraceStudyConfig)
    rank_study: RankStudyConfig = field(default_factory=RankStudyConfig)
    output: OutputConfig = field(default_factory=OutputConfig)

    def validate(self):
        if self.prior.alpha <= 0 or self.prior.beta <= 0:
            raise ValueError("prior.alpha and prior.beta must be positive")
        if self.transport.t_final <= 0 or self.transport.n_steps < 1:
            raise ValueError("transport.t_final and transport.n_steps invalid")
        if not (
            0 <= self.observation.time_start < self.observation.time_end
            and self.observation.time_end <= self.transport.t_final * (1 + 1e-12)
        ):
            raise ValueError(
                "observation window must satisfy "
                "0 <= time_start < time_end <= transport.t_final"
            )
        if self.observation.n_times < 1:
            raise ValueError("observation.n_times must be at least 1")
        if self.surrogate.rank < 1 or self.surrogate.oversampling < 0:
            raise ValueError("surrogate.rank/oversampling invalid")
        if self.estimator.n_vectors < 1:
            raise ValueError("estimator.n_vectors must be at least 1")
        if self.penalty.kind not in ("l1", "smoothed_l0"):
            raise ValueError(f"unknown penalty.kind {self.penalty.kind!r}")
        if self.penalty.gamma < 0:
            raise ValueError("penalty.gamma must be nonnegative")
        if self.optimizer.mode not in ("projected", "log_barrier"):
            raise ValueError(f"unknown optimizer.mode {self.optimizer.mode!r}")
        return self

    def to_dict(self):
        return dataclasses.asdict(self)


def _apply_section(obj, data, prefix):
    for key, value in data.items():
        if not hasattr(obj, key):
            raise KeyError(f"unknown config key {prefix}{key}")
        current = getattr(obj, key)
        if dataclasses.is_dataclass(current):
            if not isinstance(value, dict):
                raise ValueError(f"config section {prefix}{key} must be a mapping")
            _apply_section(current, value, prefix=f"{prefix}{key}.")
        else:
            setattr(obj, key, value)


def load_config(path=None, overrides=()):
    """Build an OEDConfig from defaults, an optional file, then overrides.

    Parameters
    ----------
    path : str or None
        YAML file with nested sections mirroring the dataclass layout.
    overrides : iterable of str
        ``section.key=value`` entries; values are parsed as YAML literals
        so numbers, booleans and lists work as expected.
    """
    cfg = OEDConfig()
    if path is not None:
        with open(path, "r", encoding="utf-8") as f:
            data = yaml.safe_load(f) or {}
        if not isinstance(data, dict):
            raise ValueError(f"config file {path} must contain a mapping")
        _apply_section(cfg, data, prefix="")
    for item in overrides:
        if "=" not in item:
            raise ValueError(f"override {item!r} must look like section.key=value")
        dotted, raw = item.split("=", 1)
        value = yaml.safe_load(raw)
        target = cfg
        parts = dotted.strip().split(".")
        for part in parts[:-1]:
            if not hasattr(target, part):
                raise KeyError(f"unknown config section {part!r} in {item!r}")
            target = getattr(target, part)
        if not hasattr(target, parts[-1]):
            raise KeyError(f"unknown config key {dotted!r}")
        setattr(target, parts[-1], value)
    return cfg.validate()
