"""Body component and body composition metrics over segmented anatomies."""
from __future__ import annotations

import copy
from dataclasses import dataclass, field
from typing import Mapping, Optional

import numpy as np

from ..imageio import DEFAULT_ORIENTATION, VolumeGrid, require_orientation
from ..registry import available_class_maps, is_muscle
from ..standardizer import (
    DatasetTag,
    ProsthesisResult,
    VolumeBounds,
    add_tag_to_data,
    bounds_from_masks,
    detect_hip_prosthesis,
    masks_for_anatomy,
)

__all__ = [
    "DEFAULT_HU_RANGES",
    "SUPPORTED_CONFIG_KEYS",
    "REFERENCE_TASK",
    "ConfigError",
    "BodyComponentResult",
    "validate_target_eva_config",
    "split_muscle_by_hu",
    "enforce_fat_range",
    "central_plane_index",
    "body_component_analysis",
]

# the fat row reads [-190, 30]; [-190, -30] is the usual literature value
DEFAULT_HU_RANGES = {
    "normal_muscle": (30.0, 150.0),
    "fat": (-190.0, 30.0),
    "low_attenuation_muscle": (-29.0, 29.0),
}

SUPPORTED_CONFIG_KEYS = {
    "selectedObjs": list,
    "refObj": str,
    "refObjUB": str,
    "refObjLB": str,
    "coarse": bool,
    "excludeProsthesisSamples": bool,
    "enforceMuscleRange": bool,
    "enforceFatRange": bool,
    "dict_hu_range": dict,
}

REFERENCE_TASK = "total"


class ConfigError(ValueError):
    """Invalid configuration; the message names the offending key path."""


def _check_hu_ranges(ranges: Mapping, path: str) -> dict[str, tuple[float, float]]:
    out = dict(DEFAULT_HU_RANGES)
    for kind, bounds in ranges.items():
        if kind not in DEFAULT_HU_RANGES:
            raise ConfigError(f"{path}.{kind}: unknown tissue kind (expected one of {sorted(DEFAULT_HU_RANGES)})")
        if (not isinstance(bounds, (list, tuple)) or len(bounds) != 2
                or not all(isinstance(b, (int, float)) and not isinstance(b, bool) for b in bounds)):
            raise ConfigError(f"{path}.{kind}: expected [low, high]")
        low, high = float(bounds[0]), float(bounds[1])
        if not low < high:
            raise ConfigError(f"{path}.{kind}: low {low} must be below high {high}")
        out[kind] = (low, high)
    (a0, a1), (b0, b1) = out["normal_muscle"], out["low_attenuation_muscle"]
    if a0 <= b1 and b0 <= a1:
        raise ConfigError(f"{path}: normal and low attenuation muscle ranges overlap")
    return out


def validate_target_eva_config(config: Mapping, path: str = "target_eva_config") -> dict:
    """Check a task -> settings mapping and return a normalized deep copy.

    ``dict_hu_range`` is completed with the defaults; a task may carry either
    ``refObj`` or the ``refObjUB``/``refObjLB`` pair, and only one task may
    define reference objects.
    """
    if not isinstance(config, Mapping):
        raise ConfigError(f"{path}: expected a mapping")
    out = {}
    ref_tasks = []
    known_tasks = {task for task, _ in available_class_maps()}
    for task, settings in config.items():
        where = f"{path}.{task}"
        if task not in known_tasks:
            raise ConfigError(f"{where}: unknown task (expected one of {sorted(known_tasks)})")
        if not isinstance(settings, Mapping):
            raise ConfigError(f"{where}: expected a mapping")
        for key, value in settings.items():
            if key not in SUPPORTED_CONFIG_KEYS:
                raise ConfigError(f"{where}.{key}: unsupported key")
            want = SUPPORTED_CONFIG_KEYS[key]
            if not isinstance(value, want) or (want is not bool and isinstance(value, bool)):
                raise ConfigError(f"{where}.{key}: expected {want.__name__}, got {type(value).__name__}")
        if "selectedObjs" in settings and not all(isinstance(s, str) for s in settings["selectedObjs"]):
            raise ConfigError(f"{where}.selectedObjs: expected a list of strings")
        has_ub, has_lb = "refObjUB" in settings, "refObjLB" in settings
        if "refObj" in settings and (has_ub or has_lb):
            raise ConfigError(f"{where}: refObj and refObjUB/refObjLB are mutually exclusive")
        if has_ub != has_lb:
            raise ConfigError(f"{where}: refObjUB and refObjLB must be given together")
        if "refObj" in settings or has_ub:
            ref_tasks.append(task)
        norm = copy.deepcopy(dict(settings))
        norm["dict_hu_range"] = _check_hu_ranges(settings.get("dict_hu_range", {}), f"{where}.dict_hu_range")
        out[task] = norm
    if len(ref_tasks) > 1:
        raise ConfigError(f"{path}: reference objects defined in more than one task: {ref_tasks}")
    return out


def _in_range(hu, bounds):
    return (hu >= bounds[0]) & (hu <= bounds[1])


def split_muscle_by_hu(muscle_mask, hu, ranges: Optional[Mapping] = None) -> dict[str, np.ndarray]:
    """Partition muscle voxels into normal, low attenuation and IMAT masks.

    Ranges are inclusive. Low attenuation is checked first, then normal
    attenuation, then fat; voxels outside every range stay unassigned.
    """
    r = _check_hu_ranges(ranges or {}, "dict_hu_range")
    hu = np.asarray(getattr(hu, "data", hu))
    m = np.asarray(muscle_mask, dtype=bool)
    low = m & _in_range(hu, r["low_attenuation_muscle"])
    normal = m & ~low & _in_range(hu, r["normal_muscle"])
    imat = m & ~low & ~normal & _in_range(hu, r["fat"])
    return {"normal": normal, "low_attenuation": low, "imat": imat}


def enforce_fat_range(fat_mask, hu, ranges: Optional[Mapping] = None) -> np.ndarray:
    r = _check_hu_ranges(ranges or {}, "dict_hu_range")
    hu = np.asarray(getattr(hu, "data", hu))
    return np.asarray(fat_mask, dtype=bool) & _in_range(hu, r["fat"])


def central_plane_index(mask, method: str = "midpoint") -> int:
    """Axial index of a mask's central plane.

    ``midpoint`` is floor((z_min + z_max) / 2); ``max_area`` is the slice with
    the largest cross-section (lowest index on ties).
    """
    m = np.asarray(mask, dtype=bool)
    counts = m.sum(axis=(0, 1))
    zs = np.flatnonzero(counts)
    if len(zs) == 0:
        raise ValueError("empty reference mask has no central plane")
    if method == "midpoint":
        return int((zs[0] + zs[-1]) // 2)
    if method == "max_area":
        return int(np.argmax(counts))
    raise ValueError(f"unknown central plane method {method!r}")


def _stats(values: np.ndarray) -> dict:
    if values.size == 0:
        return {"mean_hu": None, "median_hu": None, "std_hu": None}
    v = values.astype(np.float64)
    return {"mean_hu": float(v.mean()), "median_hu": float(np.median(v)), "std_hu": float(v.std())}


def _metrics_3d(mask, hu, voxel_volume):
    n = int(mask.sum())
    return {"voxels": n, "volume_cm3": n * voxel_volume / 1000.0, **_stats(hu[mask])}


def _metrics_2d(mask2d, hu2d, pixel_area):
    n = int(mask2d.sum())
    return {"pixels": n, "area_cm2": n * pixel_area / 100.0, **_stats(hu2d[mask2d])}


@dataclass
class BodyComponentResult:
    status: str
    mode: str
    metrics: dict = field(default_factory=dict)
    bounds: Optional[VolumeBounds] = None
    central_plane: Optional[int] = None
    reasons: list = field(default_factory=list)
    prosthesis: Optional[ProsthesisResult] = None

    def to_dict(self) -> dict:
        return {
            "status": self.status,
            "mode": self.mode,
            "bounds": None if self.bounds is None else self.bounds.as_dict(),
            "central_plane": self.central_plane,
            "reasons": list(self.reasons),
            "prosthesis_detected": None if self.prosthesis is None else self.prosthesis.detected,
            "metrics": self.metrics,
        }


def _reference_task(config):
    for task, s in config.items():
        if "refObj" in s or "refObjUB" in s:
            return task
    return None


def _union(parts, shape):
    out = np.zeros(shape, dtype=bool)
    for p in parts:
        out |= np.asarray(p, dtype=bool)
    return out


def body_component_analysis(vol: VolumeGrid, masks: Mapping[str, Mapping[str, np.ndarray]], config: Mapping, *,
                            bounds: Optional[VolumeBounds] = None,
                            prosthesis: Optional[ProsthesisResult] = None,
                            dataset_tag: Optional[DatasetTag] = None, data_id: str = "",
                            crop_addon=0, central_plane: str = "midpoint") -> BodyComponentResult:
    """Volume or cross-section metrics for the selected anatomies of each task.

    ``masks`` maps task name -> anatomy name -> boolean mask. With
    ``refObjUB``/``refObjLB`` metrics cover z in [lower, upper]; with
    ``refObj`` they are taken on the reference object's central plane;
    otherwise the whole volume is used.
    """
    require_orientation(vol, DEFAULT_ORIENTATION)
    cfg = validate_target_eva_config(config)
    hu = vol.data
    shape = vol.shape
    ref_task = _reference_task(cfg)
    ref = cfg.get(ref_task, {})
    mode = "3d" if "refObjUB" in ref else "2d" if "refObj" in ref else "whole"
    result = BodyComponentResult(status="completed", mode=mode)

    if mode == "3d":
        if bounds is None:
            bounds = bounds_from_masks(masks.get(ref_task, {}), ref, crop_addon, dataset_tag, data_id)
        elif bounds.valid and bounds.lower > bounds.upper:
            raise ValueError("lower bound lies above upper bound")
        result.bounds = bounds
        if not bounds.valid:
            result.status = "skipped"
            result.reasons = bounds.error_codes()
            for code in result.reasons:
                add_tag_to_data(dataset_tag, code, data_id, "Error")
            return result
        z_lo, z_hi = bounds.lower, bounds.upper
    elif mode == "2d":
        parts = masks_for_anatomy(ref["refObj"], masks.get(ref_task, {}))
        ref_mask = _union(parts, shape)
        if not ref_mask.any():
            result.status = "skipped"
            result.reasons = ["refObjMissing"]
            add_tag_to_data(dataset_tag, "refObjMissing", data_id, "Error")
            return result
        result.central_plane = central_plane_index(ref_mask, central_plane)

    if ref.get("excludeProsthesisSamples", False):
        if prosthesis is None and result.bounds is not None:
            prosthesis = detect_hip_prosthesis(vol, result.bounds.lower, dataset_tag, data_id)
        result.prosthesis = prosthesis
        if prosthesis is not None and prosthesis.detected:
            add_tag_to_data(dataset_tag, "prosthesisDetected", data_id, "Warning")
            result.status = "skipped"
            result.reasons = ["prosthesisDetected"]
            return result

    zone = np.zeros(shape, dtype=bool)
    if mode == "3d":
        zone[:, :, z_lo:z_hi + 1] = True
    else:
        zone[:] = True
    voxel_volume = vol.voxel_volume
    pixel_area = float(vol.spacing[0] * vol.spacing[1])

    def measure(mask):
        if mode == "2d":
            z = result.central_plane
            return _metrics_2d(mask[:, :, z], hu[:, :, z], pixel_area)
        return _metrics_3d(mask & zone, hu, voxel_volume)

    for task, settings in cfg.items():
        task_masks = masks.get(task, {})
        ranges = settings["dict_hu_range"]
        out = {}
        for name in settings.get("selectedObjs", []):
            mask = _union(masks_for_anatomy(name, task_masks), shape)
            if settings.get("enforceFatRange", False) and "fat" in name:
                mask = enforce_fat_range(mask, hu, ranges)
            out[name] = measure(mask)
            if settings.get("enforceMuscleRange", False) and is_muscle(name):
                for part, sub in split_muscle_by_hu(mask, hu, ranges).items():
                    out[f"{name}:{part}"] = measure(sub)
        if out:
            result.metrics[task] = out
    return result

