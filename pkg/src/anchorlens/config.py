"""Run configuration: a single JSON document with the analysis defaults.

Layout (every section optional except the pyramid)::

    {
      "image":   {"width": 300, "height": 300},
      "levels":  [{"grid_w": 19, "grid_h": 19, "stride_x": 16, "stride_y": 16,
                   "templates": [[60, 60], [81.5, 81.5]]}],
      "mmd":     {"gamma_min": 0.5, "gamma_ratio": 0.9, "gamma_max": 0.6},
      "soft":    {"alpha": 0.1, "beta": 0.001},
      "probe":   {"switch_window": 5, "families": ["scaling", "shift-x"]},
      "assign":  {"strategy": "ssd"}
    }

``image`` and ``levels`` may instead live in a separate file referenced by
``"pyramid": "relative/path.json"``.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Any, Optional

from anchorlens.anchors import PyramidConfig, PyramidLevel
from anchorlens.assignment import PRESETS, SoftThresholdParams
from anchorlens.geometry import ImageExtent
from anchorlens.mmd import MmdThresholds
from anchorlens.probe import WarpFamily

DEFAULT_FAMILIES = (WarpFamily.SCALING, WarpFamily.SHIFT_X)


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    pyramid: PyramidConfig
    mmd: MmdThresholds = MmdThresholds()
    soft: SoftThresholdParams = SoftThresholdParams()
    switch_window: int = 5
    families: tuple[WarpFamily, ...] = DEFAULT_FAMILIES
    strategy: str = "ssd"
    source: Optional[str] = field(default=None, compare=False)

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(to_document(self), sort_keys=True).encode()).hexdigest()[:12]

    def with_overrides(self, **overrides: Any) -> "RunConfig":
        """Apply CLI threshold overrides (``None`` values are ignored)."""
        mmd_keys = {k: v for k, v in overrides.items() if k in ("gamma_min", "gamma_ratio", "gamma_max") and v is not None}
        soft_keys = {k: v for k, v in overrides.items() if k in ("alpha", "beta") and v is not None}
        cfg = self
        try:
            if mmd_keys:
                cfg = replace(cfg, mmd=replace(cfg.mmd, **mmd_keys))
            if soft_keys:
                cfg = replace(cfg, soft=replace(cfg.soft, **soft_keys))
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        if overrides.get("switch_window") is not None:
            if overrides["switch_window"] < 0:
                raise ConfigError("switch_window: must be >= 0")
            cfg = replace(cfg, switch_window=int(overrides["switch_window"]))
        if overrides.get("strategy") is not None:
            _check_strategy(overrides["strategy"], "strategy")
            cfg = replace(cfg, strategy=overrides["strategy"])
        return cfg


def _check_strategy(name, where):
    if name not in PRESETS:
        raise ConfigError(f"{where}: unknown strategy preset {name!r}; choose from {', '.join(PRESETS)}")


def _section(doc: dict, key: str) -> dict:
    value = doc.get(key, {})
    if not isinstance(value, dict):
        raise ConfigError(f"{key}: expected an object")
    return value


def _number(section: dict, key: str, where: str, default):
    value = section.get(key, default)
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{where}.{key}: expected a number, got {value!r}")
    return value


def parse_pyramid(doc: dict, where: str = "") -> PyramidConfig:
    prefix = f"{where}." if where else ""
    image = _section(doc, "image")
    try:
        extent = ImageExtent(_number(image, "width", f"{prefix}image", None), _number(image, "height", f"{prefix}image", None))
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(f"{prefix}image: {exc}") from None
    raw_levels = doc.get("levels")
    if not isinstance(raw_levels, list) or not raw_levels:
        raise ConfigError(f"{prefix}levels: expected a non-empty list")
    levels = []
    for k, raw in enumerate(raw_levels):
        lw = f"{prefix}levels[{k}]"
        if not isinstance(raw, dict):
            raise ConfigError(f"{lw}: expected an object")
        templates = raw.get("templates")
        if not isinstance(templates, list) or not all(
            isinstance(t, (list, tuple)) and len(t) == 2 and all(isinstance(v, (int, float)) for v in t) for t in templates
        ):
            raise ConfigError(f"{lw}.templates: expected a list of [width, height] pairs")
        levels.append(
            PyramidLevel(
                _number(raw, "grid_w", lw, None),
                _number(raw, "grid_h", lw, None),
                _number(raw, "stride_x", lw, None),
                _number(raw, "stride_y", lw, None),
                tuple(tuple(t) for t in templates),
            )
        )
    config = PyramidConfig(tuple(levels), extent)
    try:
        config.validate()
    except ValueError as exc:
        raise ConfigError(f"{prefix}{exc}") from None
    return config


def parse_config(doc: dict, base_dir: Optional[Path] = None, source: Optional[str] = None) -> RunConfig:
    if not isinstance(doc, dict):
        raise ConfigError("config: expected a JSON object")
    if isinstance(doc.get("pyramid"), str):
        path = Path(doc["pyramid"])
        if not path.is_absolute() and base_dir is not None:
            path = base_dir / path
        try:
            pyramid_doc = json.loads(path.read_text(encoding="utf-8"))
        except OSError as exc:
            raise ConfigError(f"pyramid: cannot read {path}: {exc.strerror}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"pyramid: {path} is not valid JSON: {exc}") from None
        pyramid = parse_pyramid(pyramid_doc, "pyramid")
    elif isinstance(doc.get("pyramid"), dict):
        pyramid = parse_pyramid(doc["pyramid"], "pyramid")
    else:
        pyramid = parse_pyramid(doc)

    mmd_doc, soft_doc, probe_doc, assign_doc = (_section(doc, k) for k in ("mmd", "soft", "probe", "assign"))
    try:
        mmd = MmdThresholds(
            _number(mmd_doc, "gamma_min", "mmd", 0.5),
            _number(mmd_doc, "gamma_ratio", "mmd", 0.9),
            _number(mmd_doc, "gamma_max", "mmd", 0.6),
        )
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(f"mmd: {exc}") from None
    try:
        soft = SoftThresholdParams(_number(soft_doc, "alpha", "soft", 0.1), _number(soft_doc, "beta", "soft", 0.001))
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(f"soft: {exc}") from None
    window = probe_doc.get("switch_window", 5)
    if isinstance(window, bool) or not isinstance(window, int) or window < 0:
        raise ConfigError(f"probe.switch_window: expected a non-negative integer, got {window!r}")
    families = probe_doc.get("families", [f.value for f in DEFAULT_FAMILIES])
    if not isinstance(families, list) or not families:
        raise ConfigError("probe.families: expected a non-empty list")
    try:
        parsed_families = tuple(WarpFamily.parse(f) for f in families)
    except ValueError as exc:
        raise ConfigError(f"probe.families: {exc}") from None
    strategy = assign_doc.get("strategy", "ssd")
    _check_strategy(strategy, "assign.strategy")
    return RunConfig(pyramid, mmd, soft, window, parsed_families, strategy, source)


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from None
    return parse_config(doc, path.parent, str(path))


def default_config() -> RunConfig:
    """The bundled SSD-300-like pyramid with the analysis defaults."""
    text = resources.files("anchorlens.data").joinpath("ssd300_like.json").read_text(encoding="utf-8")
    return parse_config(json.loads(text), source="ssd300_like.json")


def pyramid_document(pyramid: PyramidConfig) -> dict:
    return {
        "image": {"width": pyramid.extent.width, "height": pyramid.extent.height},
        "levels": [
            {
                "grid_w": lv.grid_w,
                "grid_h": lv.grid_h,
                "stride_x": lv.stride_x,
                "stride_y": lv.stride_y,
                "templates": [list(t) for t in lv.templates],
            }
            for lv in pyramid.levels
        ],
    }


def to_document(cfg: RunConfig) -> dict:
    doc = pyramid_document(cfg.pyramid)
    doc["mmd"] = {"gamma_min": cfg.mmd.gamma_min, "gamma_ratio": cfg.mmd.gamma_ratio, "gamma_max": cfg.mmd.gamma_max}
    doc["soft"] = {"alpha": cfg.soft.alpha, "beta": cfg.soft.beta}
    doc["probe"] = {"switch_window": cfg.switch_window, "families": [f.value for f in cfg.families]}
    doc["assign"] = {"strategy": cfg.strategy}
    return doc
