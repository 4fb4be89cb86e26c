import os
from typing import Optional, Tuple

from dotenv import load_dotenv

load_dotenv()


class AppConfig:
    """Centralized defaults for the ringlayer experiments."""

    VERSION: str = "0.3.0"

    # Environment overrides
    DEFAULT_SEED: int = int(os.getenv("TRNN_SEED", "0"))
    DEFAULT_JOBS: int = int(os.getenv("TRNN_JOBS", str(os.cpu_count() or 1)))
    OUTPUT_DIR: str = os.getenv("TRNN_OUT", "results")

    # Synthetic experiment (81 = 3^4 on each side)
    SYNTH_DIMS: Tuple[int, ...] = (3, 3, 3, 3)
    SYNTH_SAMPLES: int = 3200
    SYNTH_INPUT_VARIANCE: float = 0.5
    SYNTH_GEN_RANK: int = 3

    # Fitting (Adam, full batch)
    FIT_OPTIMIZER: str = "adam"
    FIT_LR: float = 1e-2
    FIT_BETAS: Tuple[float, float] = (0.9, 0.999)
    FIT_EPSILON: float = 1e-8
    FIT_EPOCHS: int = 2000

    # Gradient check
    GRAD_EPS: float = 1e-5
    GRAD_TOL: float = 1e-5
    GRAD_EPS_RANGE: Tuple[float, float] = (1e-7, 1e-3)

    # Recurrent cells
    FORGET_BIAS: float = 1.0

    # Divergence guard for the fitters
    LOSS_CEILING: float = 1e12

    @classmethod
    def ensure_dirs(cls, out_dir: Optional[str] = None) -> str:
        """Ensures the output directory exists."""
        d = out_dir or cls.OUTPUT_DIR
        os.makedirs(d, exist_ok=True)
        return d

    @classmethod
    def resolve_seed(cls, flag_value: Optional[int]) -> int:
        """Flag wins, then TRNN_SEED, then 0."""
        if flag_value is not None: return int(flag_value)
        return int(os.getenv("TRNN_SEED", str(cls.DEFAULT_SEED)))

    @classmethod
    def resolve_jobs(cls, flag_value: Optional[int]) -> int:
        if flag_value is not None: return max(1, int(flag_value))
        return max(1, cls.DEFAULT_JOBS)
