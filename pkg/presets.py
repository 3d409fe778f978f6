"""
Named laminates and null Lagrangians loaded from presets.yaml.

Missing or malformed files never abort a run: the loader logs a warning and
the registry stays empty, so experiments fall back to their built-in inputs.
"""

import logging
from pathlib import Path
from typing import Any, Dict, List, Optional

import numpy as np
import yaml

from nulllag import (FormField, LVectorField, NullLagrangianSpec, bump_field, clamp_form,
                     constant_form, make_null_lagrangian, sine_form)
from youngmeasure import AtomicYoungMeasure, laminate

logger = logging.getLogger(__name__)

DEFAULT_PRESETS_PATH = Path(__file__).with_name("presets.yaml")
FORM_KINDS = ("clamp", "constant", "sine")


def _suggest(name: str, valid: List[str], what: str) -> ValueError:
    prefix_len = min(len(name), 3)
    if prefix_len > 0:
        close_matches = [k for k in valid if k.lower().startswith(name.lower()[:prefix_len])]
        if close_matches:
            return ValueError(f"Unknown {what} '{name}'. Did you mean '{close_matches[0]}'? "
                              f"Valid options: {', '.join(valid)}")
    return ValueError(f"Unknown {what} '{name}'. Valid options: {', '.join(valid)}")


class LaminatePreset:
    """Two gradients and a weight."""

    def __init__(self, name: str, config: Dict[str, Any]):
        self.name = name
        self.first = np.asarray(config["first"], dtype=float)
        self.second = np.asarray(config["second"], dtype=float)
        self.weight = float(config.get("weight", 0.5))
        expected = config.get("expected_residual")
        self.expected_residual = None if expected is None else float(expected)
        self.description = config.get("description", "")
        if self.first.ndim != 2 or self.first.shape != self.second.shape:
            raise ValueError(f"Laminate '{name}' needs two matrices of the same shape")
        if not 0.0 < self.weight < 1.0:
            raise ValueError(f"Laminate '{name}' weight must lie in (0, 1), got {self.weight}")

    def build(self, base, rule=None) -> AtomicYoungMeasure:
        return laminate(self.first, self.second, self.weight, base, rule)


class NullLagrangianPreset:
    """A form chi and a bump field U on the unit square."""

    def __init__(self, name: str, config: Dict[str, Any]):
        self.name = name
        self.degree = int(config["degree"])
        self.form_config = dict(config["form"])
        self.field_config = dict(config["field"])
        self.target_dim = int(config.get("target_dim", 2))
        self.source_dim = int(config.get("source_dim", 2))
        self.description = config.get("description", "")
        kind = self.form_config.get("kind")
        if kind not in FORM_KINDS:
            raise ValueError(f"Null Lagrangian '{name}' has unknown form kind '{kind}'")
        if self.field_config.get("kind", "bump") != "bump":
            raise ValueError(f"Null Lagrangian '{name}' field must be a bump field")

    def _form(self) -> FormField:
        cfg = self.form_config
        p = self.degree - 1
        if cfg["kind"] == "clamp":
            return clamp_form(self.target_dim, int(cfg["coordinate"]), cfg.get("subset", ()),
                              name=f"{self.name}:chi")
        if cfg["kind"] == "constant":
            if p != 0:
                raise ValueError(f"Null Lagrangian '{self.name}': constant chi requires degree 1")
            return constant_form(self.target_dim, cfg["value"], name=f"{self.name}:chi")
        return sine_form(self.target_dim, p, cfg["amplitudes"], cfg["frequencies"], cfg["phases"],
                         name=f"{self.name}:chi")

    def _field(self) -> LVectorField:
        cfg = self.field_config
        return bump_field(self.source_dim, self.degree, cfg["center"], float(cfg["radius"]),
                          cfg.get("coefficients"), cfg.get("slopes"), name=f"{self.name}:U")

    def build(self) -> NullLagrangianSpec:
        return make_null_lagrangian(self.degree, self._form(), self._field())


class PresetRegistry:
    """Laminate and null-Lagrangian presets keyed by name."""

    def __init__(self, config_path: Optional[str] = None):
        self.config_path = Path(config_path) if config_path else DEFAULT_PRESETS_PATH
        self.laminates: Dict[str, LaminatePreset] = {}
        self.null_lagrangians: Dict[str, NullLagrangianPreset] = {}

    def load(self) -> "PresetRegistry":
        """Load presets from YAML, skipping invalid entries with a warning."""
        if not self.config_path.exists():
            logger.warning(f"Preset file not found: {self.config_path}")
            return self

        try:
            with open(self.config_path, "r", encoding="utf-8") as f:
                data = yaml.safe_load(f)
        except yaml.YAMLError as e:
            logger.error(f"Error parsing preset file {self.config_path}: {e}")
            return self

        if not isinstance(data, dict):
            logger.error("Preset file must contain a mapping")
            return self

        self.laminates = self._section(data, "laminates", LaminatePreset)
        self.null_lagrangians = self._section(data, "null_lagrangians", NullLagrangianPreset)
        logger.info(f"Loaded {len(self.laminates)} laminate and "
                    f"{len(self.null_lagrangians)} null Lagrangian presets")
        return self

    def _section(self, data: Dict[str, Any], key: str, cls) -> Dict[str, Any]:
        section = data.get(key)
        if section is None:
            logger.warning(f"No {key} defined in {self.config_path}")
            return {}
        if not isinstance(section, dict):
            logger.error(f"Preset section '{key}' must be a mapping")
            return {}
        entries = {}
        for name, config in section.items():
            if not isinstance(config, dict):
                logger.warning(f"Skipping invalid {key} preset '{name}'")
                continue
            try:
                entries[str(name)] = cls(str(name), config)
            except (KeyError, TypeError, ValueError) as e:
                logger.warning(f"Skipping invalid {key} preset '{name}': {e}")
        return entries

    def laminate(self, name: str) -> LaminatePreset:
        if name not in self.laminates:
            raise _suggest(name, list(self.laminates), "laminate")
        return self.laminates[name]

    def null_lagrangian(self, name: str) -> NullLagrangianPreset:
        if name not in self.null_lagrangians:
            raise _suggest(name, list(self.null_lagrangians), "null Lagrangian")
        return self.null_lagrangians[name]
