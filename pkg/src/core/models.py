from dataclasses import dataclass, field
from typing import List, Dict, Optional, Any, Tuple, TypedDict

from src.core.config import AppConfig
from src.core.errors import ConfigError, SweepError

OPTIMIZERS = ("adam", "sgd", "als")
MODELS = ("linear", "tt", "tr")
SWEEP_VARIABLES = ("R", "I", "O", "d")
SWEEP_LAYERS = ("tr", "tt", "dense")
PASSES = ("forward", "backward")


@dataclass
class FitConfig:
    optimizer: str = AppConfig.FIT_OPTIMIZER
    learning_rate: float = AppConfig.FIT_LR
    beta1: float = AppConfig.FIT_BETAS[0]
    beta2: float = AppConfig.FIT_BETAS[1]
    epsilon: float = AppConfig.FIT_EPSILON
    epochs: int = AppConfig.FIT_EPOCHS
    batch_size: int = 0  # 0: full batch
    seed: int = 0
    init_variance: float = 1.0

    def validate(self) -> "FitConfig":
        if self.optimizer not in OPTIMIZERS:
            raise ConfigError(f"fit.optimizer must be one of {OPTIMIZERS}, got '{self.optimizer}'", "fit.optimizer")
        if not self.learning_rate > 0:
            raise ConfigError(f"fit.learning_rate must be > 0, got {self.learning_rate}", "fit.learning_rate")
        if self.epochs < 1:
            raise ConfigError(f"fit.epochs must be >= 1, got {self.epochs}", "fit.epochs")
        if self.batch_size < 0:
            raise ConfigError(f"fit.batch_size must be >= 0, got {self.batch_size}", "fit.batch_size")
        return self


@dataclass
class SyntheticConfig:
    input_dims: Tuple[int, ...] = AppConfig.SYNTH_DIMS
    output_dims: Tuple[int, ...] = AppConfig.SYNTH_DIMS
    n_samples: int = AppConfig.SYNTH_SAMPLES
    input_variance: float = AppConfig.SYNTH_INPUT_VARIANCE
    noise_sigmas: List[float] = field(default_factory=lambda: [0.01, 0.05, 0.1, 0.2, 0.3])
    gen_rank: int = AppConfig.SYNTH_GEN_RANK
    generator: str = "ring"  # ring | matrix
    fit_ranks: Dict[str, int] = field(default_factory=lambda: {"tr": 3, "tt": 3})
    models: List[str] = field(default_factory=lambda: list(MODELS))
    seeds: List[int] = field(default_factory=lambda: list(range(10)))
    record_timing: bool = True
    heatmaps: bool = True

    @property
    def dim_in(self) -> int:
        return _prod(self.input_dims)

    @property
    def dim_out(self) -> int:
        return _prod(self.output_dims)

    def validate(self) -> "SyntheticConfig":
        if any(s < 0 for s in self.noise_sigmas):
            raise ConfigError(f"synthetic.noise_sigmas must be >= 0, got {self.noise_sigmas}", "synthetic.noise_sigmas")
        if self.gen_rank < 1:
            raise ConfigError(f"synthetic.gen_rank must be >= 1, got {self.gen_rank}", "synthetic.gen_rank")
        if self.generator not in ("ring", "matrix"):
            raise ConfigError(f"synthetic.generator must be 'ring' or 'matrix', got '{self.generator}'", "synthetic.generator")
        for m in self.models:
            if m not in MODELS:
                raise ConfigError(f"synthetic.models: unknown model '{m}'", "synthetic.models")
        for m, r in self.fit_ranks.items():
            if m not in ("tr", "tt"):
                raise ConfigError(f"synthetic.fit_ranks: unknown model '{m}'", f"synthetic.fit_ranks.{m}")
            if r < 1:
                raise ConfigError(f"synthetic.fit_ranks.{m} must be >= 1", f"synthetic.fit_ranks.{m}")
        if self.n_samples < 1:
            raise ConfigError("synthetic.n_samples must be >= 1", "synthetic.n_samples")
        return self


@dataclass
class SweepSpec:
    variable: str = "R"
    values: List[int] = field(default_factory=lambda: [2, 4, 8, 16])
    layer: str = "tr"
    passes: List[str] = field(default_factory=lambda: list(PASSES))
    rank: int = 4
    input_dims: Tuple[int, ...] = (2, 2, 2)
    output_dims: Tuple[int, ...] = (2, 2, 2, 2, 2)
    core_dim: int = 2
    batch: int = 1

    def validate(self) -> "SweepSpec":
        if self.variable not in SWEEP_VARIABLES:
            raise ConfigError(f"sweep.variable must be one of {SWEEP_VARIABLES}, got '{self.variable}'", "sweep.variable")
        if self.layer not in SWEEP_LAYERS:
            raise ConfigError(f"sweep.layer must be one of {SWEEP_LAYERS}, got '{self.layer}'", "sweep.layer")
        for p in self.passes:
            if p not in PASSES:
                raise ConfigError(f"sweep.passes: unknown pass '{p}'", "sweep.passes")
        if len(self.values) < 4:
            raise SweepError(f"a sweep needs >= 4 points for slope fitting, got {len(self.values)}")
        if any(b <= a for a, b in zip(self.values, self.values[1:])):
            raise SweepError(f"sweep values must be strictly increasing, got {list(self.values)}")
        if any(v < 1 for v in self.values):
            raise SweepError(f"sweep values must be >= 1, got {list(self.values)}")
        return self


@dataclass
class LayerPlan:
    name: str
    input_dims: Tuple[int, ...]
    output_dims: Tuple[int, ...]
    ranks: Tuple[int, ...]
    note: str = ""


@dataclass
class ToyTrainConfig:
    n_classes: int = 5
    steps: int = 6
    input_dims: Tuple[int, ...] = (8, 8, 8)
    hidden_dims: Tuple[int, ...] = (4, 4)
    rank: int = 3
    n_train: int = 400
    n_test: int = 200
    noise: float = 1.0
    epochs: int = 30
    batch_size: int = 20
    learning_rate: float = 1e-2
    forget_bias: float = AppConfig.FORGET_BIAS
    seed: int = 0


@dataclass
class GradCheckConfig:
    eps: float = AppConfig.GRAD_EPS
    tol: float = AppConfig.GRAD_TOL
    lstm_tol: float = 1e-4
    instances: int = 20
    seed: int = 0


@dataclass
class FlopReport:
    multiply_adds: int = 0
    peak_intermediate_scalars: int = 0

    def add(self, madds: int, result_volume: int) -> None:
        self.multiply_adds += int(madds)
        self.peak_intermediate_scalars = max(self.peak_intermediate_scalars, int(result_volume))

    def merged(self, other: "FlopReport") -> "FlopReport":
        return FlopReport(self.multiply_adds + other.multiply_adds,
                          max(self.peak_intermediate_scalars, other.peak_intermediate_scalars))


# CSV rows

class RecoveryRow(TypedDict):
    model: str
    sigma: float
    seed: int
    rmse: Any
    params: int
    epochs: int
    wall_ms: int


class SweepRow(TypedDict):
    variable: str
    value: Any
    multiply_adds: Any
    peak_scalars: Any


class LossRow(TypedDict):
    epoch: int
    loss: float
    wall_ms: float


def _prod(xs: Any) -> int:
    out = 1
    for x in xs:
        out *= int(x)
    return out