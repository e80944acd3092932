"""
Experiment Configuration
Defaults, flat KEY=value config files and command-line overrides for the
experiment runner, with method-specific validation and a stable config hash
"""

import hashlib
import json
import logging
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Any, Dict, Optional, Tuple, Union

from dotenv import dotenv_values

from gp_models.dirichlet_transform import DEFAULT_ALPHA_GRID
from gp_models.errors import ConfigError

logger = logging.getLogger(__name__)

METHODS = ("gpd", "gpr", "gpr_platt", "laplace_gpc")
INDUCING_SELECTIONS = ("kmeans", "uniform")

# Fields that do not change numerical results
_UNHASHED = ("out", "jobs")


@dataclass
class ExperimentConfig:
    """Protocol knobs for one experiment invocation"""

    dataset: str = "synth:sinusoid:500"
    method: str = "gpd"
    inducing: Optional[int] = None
    alpha_eps: Union[float, str] = "auto"
    replicates: int = 10
    mc_samples: int = 1000
    bins: int = 10
    seed: int = 0
    out: str = "results"
    test_fraction: float = 0.3
    calibration_fraction: float = 0.2
    restarts: int = 3
    quantile: float = 0.95
    jobs: int = 1
    inducing_selection: str = "kmeans"
    label_column: str = "last"
    alpha_grid: Tuple[float, ...] = DEFAULT_ALPHA_GRID
    m_list: Tuple[int, ...] = (10, 50, 200)
    sizes: Tuple[int, ...] = (20, 50, 100, 500)
    f_p: str = "sinusoid"

    def validate(self) -> "ExperimentConfig":
        """Checks that need no data; raises ConfigError"""
        if self.method not in METHODS:
            raise ConfigError(f"Unknown method '{self.method}' (choose from {', '.join(METHODS)})")
        if self.alpha_eps != "auto":
            if self.method != "gpd":
                raise ConfigError(f"alpha_eps applies to gpd only, not {self.method}")
            if not 0.0 < float(self.alpha_eps) < 1.0:
                raise ConfigError("alpha_eps must lie in (0, 1)")
        if self.inducing is not None:
            if self.inducing < 1:
                raise ConfigError("inducing must be a positive integer or 'exact'")
            if self.method == "laplace_gpc":
                raise ConfigError("laplace_gpc has no inducing-point variant")
        for name in ("replicates", "mc_samples", "bins", "restarts", "jobs"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if not 0.0 < self.test_fraction < 1.0:
            raise ConfigError("test_fraction must lie in (0, 1)")
        if not 0.0 <= self.calibration_fraction < 1.0:
            raise ConfigError("calibration_fraction must lie in [0, 1)")
        if self.method == "gpr_platt" and self.calibration_fraction == 0.0:
            raise ConfigError("gpr_platt needs calibration_fraction > 0")
        if not 0.5 < self.quantile < 1.0:
            raise ConfigError("quantile must lie in (0.5, 1)")
        if self.inducing_selection not in INDUCING_SELECTIONS:
            raise ConfigError(f"inducing_selection must be one of {INDUCING_SELECTIONS}")
        if not self.alpha_grid or any(not 0.0 < a < 1.0 for a in self.alpha_grid):
            raise ConfigError("alpha_grid needs values in (0, 1)")
        if not self.m_list or any(m < 1 for m in self.m_list):
            raise ConfigError("m_list needs positive integers")
        if not self.sizes or any(n < 2 for n in self.sizes):
            raise ConfigError("sizes needs integers >= 2")
        return self

    def validate_for_dataset(self, num_classes: int):
        """Checks that depend on the loaded data, run before any fitting"""
        if num_classes < 2:
            raise ConfigError(f"Dataset '{self.dataset}' has fewer than two classes")
        if self.method == "laplace_gpc" and num_classes != 2:
            raise ConfigError(f"laplace_gpc needs a binary dataset, '{self.dataset}' has {num_classes} classes")

    def to_dict(self) -> Dict[str, Any]:
        info = asdict(self)
        for key in ("alpha_grid", "m_list", "sizes"):
            info[key] = list(info[key])
        return info

    def config_hash(self) -> str:
        """First 16 hex digits of the SHA-256 of the result-relevant fields"""
        info = {k: v for k, v in self.to_dict().items() if k not in _UNHASHED}
        payload = json.dumps(info, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()[:16]


def normalize_key(key: str) -> str:
    return key.strip().lower().replace("-", "_")


def _parse_list(text: Any, cast) -> tuple:
    if isinstance(text, (list, tuple)):
        return tuple(cast(v) for v in text)
    return tuple(cast(v) for v in str(text).split(",") if v.strip())


def _parse_inducing(value: Any) -> Optional[int]:
    if value is None or str(value).strip().lower() in ("", "exact", "none"):
        return None
    return int(value)


def _parse_alpha(value: Any) -> Union[float, str]:
    if str(value).strip().lower() == "auto":
        return "auto"
    return float(value)


_PARSERS = {
    "inducing": _parse_inducing,
    "alpha_eps": _parse_alpha,
    "alpha_grid": lambda v: _parse_list(v, float),
    "m_list": lambda v: _parse_list(v, int),
    "sizes": lambda v: _parse_list(v, int),
}


def _coerce(name: str, value: Any, default: Any) -> Any:
    if name in _PARSERS:
        return _PARSERS[name](value)
    if isinstance(default, bool):
        return str(value).strip().lower() in ("1", "true", "yes")
    if isinstance(default, int):
        return int(value)
    if isinstance(default, float):
        return float(value)
    return str(value).strip()


def load_config(config_file: Optional[Union[str, Path]] = None,
                overrides: Optional[Dict[str, Any]] = None) -> ExperimentConfig:
    """
    Build a validated ExperimentConfig

    Args:
        config_file: Optional flat KEY=value file; keys are case-insensitive
            and '-' is treated as '_'
        overrides: Values from command-line flags; None entries are ignored

    Raises:
        ConfigError: unknown key, unparsable value or failed validation
    """
    defaults = ExperimentConfig()
    known = {f.name for f in fields(ExperimentConfig)}
    values: Dict[str, Any] = {}

    if config_file is not None:
        path = Path(config_file)
        if not path.exists():
            raise ConfigError(f"Config file does not exist: {path}")
        for key, value in dotenv_values(path).items():
            if value is None:
                continue
            values[normalize_key(key)] = value
        logger.info(f"Loaded {len(values)} settings from {path}")

    for key, value in (overrides or {}).items():
        if value is not None:
            values[normalize_key(key)] = value

    unknown = sorted(set(values) - known)
    if unknown:
        raise ConfigError(f"Unknown config keys: {', '.join(unknown)}")

    parsed = {}
    for name, value in values.items():
        try:
            parsed[name] = _coerce(name, value, getattr(defaults, name))
        except (TypeError, ValueError):
            raise ConfigError(f"Invalid value for {name}: {value!r}")
    return ExperimentConfig(**parsed).validate()
