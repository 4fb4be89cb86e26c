import os
import json
from dataclasses import fields
from typing import List, Dict, Optional, Any, Callable

from src.core.errors import ConfigError
from src.core.models import FitConfig, SyntheticConfig, SweepSpec, ToyTrainConfig, GradCheckConfig


class ExperimentConfig:
    """All command-specific parameter sets, loaded from one JSON file."""

    SECTIONS: Dict[str, type] = {
        "synthetic": SyntheticConfig,
        "fit": FitConfig,
        "sweep": SweepSpec,
        "toytrain": ToyTrainConfig,
        "gradcheck": GradCheckConfig,
    }

    def __init__(self):
        self.synthetic: SyntheticConfig = SyntheticConfig()
        self.fit: FitConfig = FitConfig()
        self.sweep: SweepSpec = SweepSpec()
        self.toytrain: ToyTrainConfig = ToyTrainConfig()
        self.gradcheck: GradCheckConfig = GradCheckConfig()
        self.layer: Dict[str, Any] = {}

    @classmethod
    def load(cls, path: Optional[str]) -> "ExperimentConfig":
        cfg = cls()
        if not path: return cfg
        if not os.path.exists(path):
            raise ConfigError(f"config file not found: {path}")
        try:
            with open(path, "r", encoding="utf-8") as f:
                doc = json.load(f)
        except json.JSONDecodeError as e:
            raise ConfigError(f"config file {path} is not valid JSON: {e}")
        return cfg.apply(doc)

    def apply(self, doc: Dict[str, Any]) -> "ExperimentConfig":
        if not isinstance(doc, dict):
            raise ConfigError("config root must be a JSON object")
        for section, values in doc.items():
            if section == "layer":
                self.layer = _check_layer(values)
                continue
            if section not in self.SECTIONS:
                raise ConfigError(f"unknown config key '{section}'", section)
            if not isinstance(values, dict):
                raise ConfigError(f"config section '{section}' must be an object", section)
            setattr(self, section, _merge(getattr(self, section), values, section))
        return self

    @classmethod
    def describe(cls) -> str:
        """Schema with defaults, for --help."""
        lines = []
        for name, dc in cls.SECTIONS.items():
            inst = dc()
            lines.append(f"  {name}: " + ", ".join(f"{f.name}={getattr(inst, f.name)!r}" for f in fields(inst)))
        lines.append("  layer: input_dims, output_dims, ranks")
        return "\n".join(lines)


def _as_int(val: Any) -> int:
    if isinstance(val, bool) or not isinstance(val, (int, float)):
        raise TypeError(f"expected an integer, got {val!r}")
    if isinstance(val, float) and not val.is_integer():
        raise ValueError(f"expected an integer, got {val!r}")
    return int(val)


def _as_float(val: Any) -> float:
    if isinstance(val, bool) or not isinstance(val, (int, float)):
        raise TypeError(f"expected a number, got {val!r}")
    return float(val)


def _as_str(val: Any) -> str:
    if not isinstance(val, str):
        raise TypeError(f"expected a string, got {val!r}")
    return val


def _as_list(val: Any) -> List[Any]:
    if not isinstance(val, list):
        raise TypeError(f"expected a list, got {val!r}")
    return val


def _caster(sample: Any) -> Callable[[Any], Any]:
    if isinstance(sample, bool): return lambda v: v
    if isinstance(sample, int): return _as_int
    if isinstance(sample, float): return _as_float
    if isinstance(sample, str): return _as_str
    return lambda v: v


def _cast(default: Any, val: Any) -> Any:
    if isinstance(default, bool):
        if not isinstance(val, bool):
            raise TypeError(f"expected true/false, got {val!r}")
        return val
    if isinstance(default, (int, float, str)):
        return _caster(default)(val)
    if isinstance(default, tuple):
        return tuple(_as_int(v) for v in _as_list(val))
    if isinstance(default, list):
        item = _caster(default[0]) if default else (lambda v: v)
        return [item(v) for v in _as_list(val)]
    if isinstance(default, dict):
        if not isinstance(val, dict):
            raise TypeError(f"expected an object, got {val!r}")
        return {str(k): _as_int(v) for k, v in val.items()}
    return val


def _merge(current: Any, values: Dict[str, Any], section: str) -> Any:
    known = {f.name for f in fields(current)}
    for key, val in values.items():
        dotted = f"{section}.{key}"
        if key not in known:
            raise ConfigError(f"unknown config key '{dotted}'", dotted)
        try:
            val = _cast(getattr(current, key), val)
        except (TypeError, ValueError) as e:
            raise ConfigError(f"config key '{dotted}': {e}", dotted)
        setattr(current, key, val)
    return current


def _check_layer(values: Any) -> Dict[str, Any]:
    if not isinstance(values, dict):
        raise ConfigError("config section 'layer' must be an object", "layer")
    allowed = ("input_dims", "output_dims", "ranks")
    out = {}
    for key, val in values.items():
        dotted = f"layer.{key}"
        if key not in allowed:
            raise ConfigError(f"unknown config key '{dotted}'", dotted)
        try:
            out[key] = [_as_int(v) for v in _as_list(val)]
        except (TypeError, ValueError) as e:
            raise ConfigError(f"config key '{dotted}': {e}", dotted)
    return out
