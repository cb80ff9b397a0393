"""Workflow configuration: a strict JSON document validated by hand.

Top-level keys::

    io                  {input_dir, output_dir, seg_pattern?, volume_pattern?}
    orientation         three axis codes, default "PLS"
    crop_addon          int or [int, int, int], default 0
    workers             int >= 1 or null (logical cores)
    target_eva_config   task -> settings (see features.body)
    extraction_params   path to a pyradiomics-style YAML, optional
    robustness          {enabled, task, anatomy, target_param, target_range,
                         n_components, do_ttest, plot_result, save_stats_path}
    control_images      {enabled, plane}

Relative paths are resolved against the directory of the config file,
except ``robustness.save_stats_path`` which is relative to the output
directory.
"""
from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping, Optional

from .features.body import ConfigError, validate_target_eva_config
from .features.voxel import ExtractionParams
from .imageio import validate_axcodes

__all__ = ["ConfigError", "RobustnessSettings", "ControlImageSettings", "WorkflowConfig",
           "parse_workflow_config", "load_workflow_config"]

_TOP_KEYS = {"io", "orientation", "crop_addon", "workers", "target_eva_config", "extraction_params",
             "robustness", "control_images"}
_IO_KEYS = {"input_dir", "output_dir", "seg_pattern", "volume_pattern"}
_ROBUSTNESS_KEYS = {"enabled", "task", "anatomy", "target_param", "target_range", "n_components",
                    "do_ttest", "plot_result", "save_stats_path"}
_CONTROL_KEYS = {"enabled", "plane"}
_PLANES = ("coronal", "sagittal", "transverse", "auto")


@dataclass(frozen=True)
class RobustnessSettings:
    enabled: bool = False
    task: str = "total"
    anatomy: str = ""
    target_param: str = "kernel_radius"
    target_range: tuple = ()
    n_components: int = 2
    do_ttest: bool = False
    plot_result: bool = False
    save_stats_path: str = "stats/robustness.csv"


@dataclass(frozen=True)
class ControlImageSettings:
    enabled: bool = True
    plane: str = "auto"


@dataclass(frozen=True)
class WorkflowConfig:
    input_dir: Path
    output_dir: Path
    target_eva_config: dict
    seg_pattern: str = "{id}_seg_{task}.nii.gz"
    volume_pattern: str = "{id}.nii.gz"
    orientation: tuple = ("P", "L", "S")
    crop_addon: Any = 0
    workers: Optional[int] = None
    extraction_params: Optional[ExtractionParams] = None
    robustness: RobustnessSettings = field(default_factory=RobustnessSettings)
    control_images: ControlImageSettings = field(default_factory=ControlImageSettings)

    @property
    def n_workers(self) -> int:
        return self.workers or os.cpu_count() or 1

    @property
    def tasks(self) -> list[str]:
        tasks = list(self.target_eva_config)
        if self.robustness.enabled and self.robustness.task not in tasks:
            tasks.append(self.robustness.task)
        return tasks


def _expect(value, kind, path, allow_none=False):
    if value is None and allow_none:
        return value
    ok = isinstance(value, kind) and not (kind is not bool and isinstance(value, bool))
    if not ok:
        names = kind.__name__ if isinstance(kind, type) else "/".join(k.__name__ for k in kind)
        raise ConfigError(f"{path}: expected {names}, got {type(value).__name__}")
    return value


def _unknown(doc: Mapping, allowed: set, path: str):
    extra = sorted(set(doc) - allowed)
    if extra:
        raise ConfigError(f"{path}.{extra[0]}: unsupported key")


def _check_pattern(pattern: str, needed: tuple, path: str) -> str:
    for token in needed:
        if "{" + token + "}" not in pattern:
            raise ConfigError(f"{path}: pattern must contain {{{token}}}")
    return pattern


def parse_workflow_config(doc: Mapping, base_dir=".") -> WorkflowConfig:
    base = Path(base_dir)
    _expect(doc, dict, "config")
    _unknown(doc, _TOP_KEYS, "config")
    for key in ("io", "target_eva_config"):
        if key not in doc:
            raise ConfigError(f"config.{key}: required key missing")

    io = _expect(doc["io"], dict, "config.io")
    _unknown(io, _IO_KEYS, "config.io")
    for key in ("input_dir", "output_dir"):
        if key not in io:
            raise ConfigError(f"config.io.{key}: required key missing")
        _expect(io[key], str, f"config.io.{key}")
    seg_pattern = _check_pattern(_expect(io.get("seg_pattern", "{id}_seg_{task}.nii.gz"), str,
                                         "config.io.seg_pattern"), ("id", "task"), "config.io.seg_pattern")
    volume_pattern = _check_pattern(_expect(io.get("volume_pattern", "{id}.nii.gz"), str,
                                            "config.io.volume_pattern"), ("id",), "config.io.volume_pattern")

    orient = _expect(doc.get("orientation", "PLS"), (str, list), "config.orientation")
    try:
        orientation = validate_axcodes(list(orient))
    except ValueError as exc:
        raise ConfigError(f"config.orientation: {exc}") from exc

    crop_addon = doc.get("crop_addon", 0)
    if isinstance(crop_addon, list):
        if len(crop_addon) != 3 or not all(isinstance(c, int) and not isinstance(c, bool) and c >= 0
                                           for c in crop_addon):
            raise ConfigError("config.crop_addon: expected three non-negative integers")
        crop_addon = tuple(crop_addon)
    elif not (isinstance(crop_addon, int) and not isinstance(crop_addon, bool) and crop_addon >= 0):
        raise ConfigError("config.crop_addon: expected a non-negative integer")

    workers = _expect(doc.get("workers"), int, "config.workers", allow_none=True)
    if workers is not None and workers < 1:
        raise ConfigError("config.workers: must be >= 1")

    target = validate_target_eva_config(_expect(doc["target_eva_config"], dict, "config.target_eva_config"),
                                        "config.target_eva_config")

    params = None
    if doc.get("extraction_params") is not None:
        p = base / _expect(doc["extraction_params"], str, "config.extraction_params")
        if not p.is_file():
            raise ConfigError(f"config.extraction_params: file {p} not found")
        try:
            params = ExtractionParams.from_yaml(p)
        except ValueError as exc:
            raise ConfigError(f"config.extraction_params: {exc}") from exc

    rob = _expect(doc.get("robustness", {}), dict, "config.robustness")
    _unknown(rob, _ROBUSTNESS_KEYS, "config.robustness")
    types = {"enabled": bool, "task": str, "anatomy": str, "target_param": str, "target_range": list,
             "n_components": int, "do_ttest": bool, "plot_result": bool, "save_stats_path": str}
    for key, value in rob.items():
        _expect(value, types[key], f"config.robustness.{key}")
    robustness = RobustnessSettings(**{k: tuple(v) if k == "target_range" else v for k, v in rob.items()})
    if robustness.enabled:
        if not robustness.target_range:
            raise ConfigError("config.robustness.target_range: must be non-empty when robustness is enabled")
        if len(robustness.target_range) < 2:
            raise ConfigError("config.robustness.target_range: needs at least two conditions")
        if robustness.target_param not in ExtractionParams.__dataclass_fields__:
            raise ConfigError(f"config.robustness.target_param: unknown parameter {robustness.target_param!r}")
        if not robustness.anatomy:
            raise ConfigError("config.robustness.anatomy: required when robustness is enabled")
        if not 1 <= robustness.n_components <= len(robustness.target_range):
            raise ConfigError("config.robustness.n_components: must lie in [1, len(target_range)]")

    ctl = _expect(doc.get("control_images", {}), dict, "config.control_images")
    _unknown(ctl, _CONTROL_KEYS, "config.control_images")
    control = ControlImageSettings(
        enabled=_expect(ctl.get("enabled", True), bool, "config.control_images.enabled"),
        plane=_expect(ctl.get("plane", "auto"), str, "config.control_images.plane"),
    )
    if control.plane not in _PLANES:
        raise ConfigError(f"config.control_images.plane: expected one of {_PLANES}")

    return WorkflowConfig(
        input_dir=(base / io["input_dir"]).resolve(),
        output_dir=(base / io["output_dir"]).resolve(),
        target_eva_config=target,
        seg_pattern=seg_pattern,
        volume_pattern=volume_pattern,
        orientation=orientation,
        crop_addon=crop_addon,
        workers=workers,
        extraction_params=params,
        robustness=robustness,
        control_images=control,
    )


def load_workflow_config(path) -> WorkflowConfig:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"workflow config {path} not found")
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config: invalid JSON ({exc})") from exc
    return parse_workflow_config(doc, path.parent)
