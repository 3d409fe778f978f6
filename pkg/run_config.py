"""
Run configuration: experiment name, validated parameters and output directory.

Values are layered: schema defaults, then the experiment's section of
config.ini, then an optional key = value file, then command-line flags.
"""

import configparser
import logging
import os
from dataclasses import dataclass, field
from typing import Any, Dict, List, Mapping, Optional

from experiments import Experiment, create_experiment_registry

logger = logging.getLogger(__name__)

DEFAULT_OUTPUT_DIR = "results"
DEFAULT_KEYS = ("seed", "threads", "quadrature_order")


def unknown_experiment(name: str, valid: List[str]) -> ValueError:
    prefix_len = min(len(name), 3)
    if prefix_len > 0:
        close_matches = [k for k in valid if k.startswith(name.lower()[:prefix_len])]
        if close_matches:
            return ValueError(f"Unknown experiment '{name}'. Did you mean '{close_matches[0]}'? "
                              f"Valid experiments: {', '.join(valid)}")
    return ValueError(f"Unknown experiment '{name}'. Valid experiments: {', '.join(valid)}")


def _coerce_scalar(name: str, kind: str, value: Any) -> Any:
    if kind == "integer":
        if isinstance(value, bool):
            raise ValueError(f"Parameter '{name}' must be an integer, got {value!r}")
        if isinstance(value, int):
            return value
        text = str(value).strip()
        try:
            return int(text)
        except ValueError:
            pass
        try:
            as_float = float(text)
        except ValueError:
            raise ValueError(f"Parameter '{name}' must be an integer, got {value!r}")
        if not as_float.is_integer():
            raise ValueError(f"Parameter '{name}' must be an integer, got {value!r}")
        return int(as_float)
    if kind == "number":
        try:
            return float(value)
        except (TypeError, ValueError):
            raise ValueError(f"Parameter '{name}' must be a number, got {value!r}")
    if kind == "boolean":
        if isinstance(value, bool):
            return value
        text = str(value).strip().lower()
        if text in ("1", "true", "yes", "on"):
            return True
        if text in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"Parameter '{name}' must be true or false, got {value!r}")
    return str(value)


def _check_range(name: str, spec: Mapping[str, Any], value: Any) -> None:
    if "enum" in spec and value not in spec["enum"]:
        raise ValueError(f"Parameter '{name}' must be one of {', '.join(map(str, spec['enum']))}, "
                         f"got {value!r}")
    if spec.get("type") not in ("integer", "number"):
        return
    if value != value:
        raise ValueError(f"Parameter '{name}' must not be NaN")
    if "minimum" in spec and value < spec["minimum"]:
        raise ValueError(f"Parameter '{name}' must be >= {spec['minimum']}, got {value}")
    if "maximum" in spec and value > spec["maximum"]:
        raise ValueError(f"Parameter '{name}' must be <= {spec['maximum']}, got {value}")
    if "exclusiveMinimum" in spec and value <= spec["exclusiveMinimum"]:
        raise ValueError(f"Parameter '{name}' must be > {spec['exclusiveMinimum']}, got {value}")
    if "exclusiveMaximum" in spec and value >= spec["exclusiveMaximum"]:
        raise ValueError(f"Parameter '{name}' must be < {spec['exclusiveMaximum']}, got {value}")


def coerce_parameter(name: str, spec: Mapping[str, Any], value: Any) -> Any:
    """
    Convert a raw value (string from a file or flag, or a native value) and check its range.

    Raises:
        ValueError: Naming the parameter when the value has the wrong type or range
    """
    if spec.get("type") == "array":
        items = spec.get("items", {})
        raw = value if isinstance(value, (list, tuple)) else [v for v in str(value).split(",") if v.strip()]
        if not raw:
            raise ValueError(f"Parameter '{name}' needs at least one value")
        return [coerce_parameter(name, items, v) for v in raw]
    converted = _coerce_scalar(name, spec.get("type", "string"), value)
    _check_range(name, spec, converted)
    return converted


def read_overrides_file(path: str) -> Dict[str, str]:
    """
    Read a plain key = value file; a leading section header is optional.

    Raises:
        FileNotFoundError: If the file doesn't exist
        ValueError: If the file cannot be parsed
    """
    if not os.path.isfile(path):
        raise FileNotFoundError(f"Config file not found: {path}")
    with open(path, "r", encoding="utf-8") as f:
        text = f.read()
    parser = configparser.ConfigParser()
    try:
        if text.lstrip().startswith("["):
            parser.read_string(text)
        else:
            parser.read_string("[run]\n" + text)
    except configparser.Error as e:
        raise ValueError(f"Cannot parse config file {path}: {e}")
    values: Dict[str, str] = dict(parser.defaults())
    for section in parser.sections():
        values.update({k: v for k, v in parser.items(section) if k not in parser.defaults()})
    return {key.replace("-", "_"): value for key, value in values.items()}


@dataclass
class RunConfig:
    experiment: str
    parameters: Dict[str, Any]
    output_dir: str = DEFAULT_OUTPUT_DIR
    sources: Dict[str, str] = field(default_factory=dict)

    @property
    def seed(self) -> int:
        return int(self.parameters["seed"])

    @property
    def threads(self) -> int:
        return int(self.parameters["threads"])

    @classmethod
    def from_sources(cls, config: Optional[configparser.ConfigParser], experiment: str,
                     overrides: Optional[Mapping[str, Any]] = None, config_file: Optional[str] = None,
                     output_dir: Optional[str] = None,
                     registry: Optional[Dict[str, Experiment]] = None) -> "RunConfig":
        """
        Build a validated run configuration.

        Args:
            config: Parsed config.ini (DEFAULT plus one section per experiment)
            experiment: Experiment name
            overrides: Command-line values; None entries are ignored
            config_file: Optional key = value file applied before the overrides
            output_dir: Output directory flag, overriding config.ini

        Raises:
            ValueError: For unknown experiments, unknown parameters or out-of-range values
        """
        registry = registry or create_experiment_registry()
        if experiment not in registry:
            raise unknown_experiment(experiment, list(registry))
        properties = registry[experiment].parameters["properties"]
        values: Dict[str, Any] = registry[experiment].defaults()
        sources = {key: "default" for key in values}

        if config is not None:
            defaults = config.defaults()
            for key in DEFAULT_KEYS:
                if key in properties and key in defaults:
                    values[key], sources[key] = defaults[key], "config.ini"
            if config.has_section(experiment):
                for key, value in config.items(experiment):
                    if key in defaults and defaults[key] == value:
                        continue
                    name = key.replace("-", "_")
                    if name not in properties:
                        logger.warning(f"Ignoring unknown key '{key}' in [{experiment}] of config.ini")
                        continue
                    values[name], sources[name] = value, "config.ini"

        if config_file:
            for key, value in read_overrides_file(config_file).items():
                if key == "out" or key == "output_dir":
                    output_dir = output_dir or value
                    continue
                if key not in properties:
                    raise ValueError(f"Unknown parameter '{key}' in {config_file} for '{experiment}'. "
                                     f"Valid parameters: {', '.join(properties)}")
                values[key], sources[key] = value, config_file

        for key, value in (overrides or {}).items():
            if value is None:
                continue
            if key not in properties:
                raise ValueError(f"Unknown parameter '{key}' for '{experiment}'")
            values[key], sources[key] = value, "flag"

        parameters = {key: coerce_parameter(key, properties[key], value) for key, value in values.items()}
        if output_dir is None:
            base = config.defaults().get("output_dir", DEFAULT_OUTPUT_DIR) if config is not None else DEFAULT_OUTPUT_DIR
            output_dir = os.path.join(base, experiment)
        logger.debug(f"Run config for {experiment}: {parameters} -> {output_dir}")
        return cls(experiment, parameters, output_dir, sources)
