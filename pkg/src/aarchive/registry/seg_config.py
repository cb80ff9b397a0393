"""Version-dependent segmentation task settings.

Keys carrying a ``_v1``/``_v2`` suffix are resolved against the requested
model version. The trainer string ``"default"`` stands for the base trainer of
each version.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Union

from .class_maps import V1_REDIRECTS, UnknownTaskError

__all__ = ["SegConfig", "SEGMENTATION_SETTINGS", "DEFAULT_TRAINERS", "get_seg_config_by_task_name"]

DEFAULT_TRAINERS = {1: "nnUNetTrainerV2", 2: "nnUNetTrainer"}

SEGMENTATION_SETTINGS: dict[str, dict[str, dict]] = {
    "total": {
        "fine": {
            "task_id_v1": [251, 252, 253, 254, 255],
            "task_id_v2": [291, 292, 293, 294, 295],
            "task_name": "total",
            "trainer_v1": "nnUNetTrainerV2_ep4000_nomirror",
            "trainer_v2": "nnUNetTrainerNoMirroring",
            "voxel_size": 1.5,
            "crop": None,
        },
        "coarse": {
            "task_id_v1": 256,
            "task_id_v2": 297,
            "task_name": "total",
            "trainer_v1": "nnUNetTrainerV2_ep8000_nomirror",
            "trainer_v2": "nnUNetTrainer_4000epochs_NoMirroring",
            "voxel_size": 3.0,
            "crop": None,
        },
    },
    "body": {
        "fine": {
            "task_id_v1": 269,
            "task_id_v2": 299,
            "task_name": "body",
            "trainer": "default",
            "voxel_size": 1.5,
            "crop": None,
        },
        "coarse": {
            "task_id_v1": 270,
            "task_id_v2": 300,
            "task_name": "body",
            "trainer": "default",
            "voxel_size": 3.0,
            "crop": None,
        },
    },
    "appendicular_bones": {
        "fine": {
            "task_id_v2": 304,
            "task_name": "appendicular_bones",
            "trainer_v2": "nnUNetTrainerNoMirroring",
            "voxel_size": 1.5,
            "crop": None,
        },
    },
    "tissue_types": {
        "fine": {
            "task_id_v2": 481,
            "task_name": "tissue_types",
            "trainer_v2": "nnUNetTrainer",
            "voxel_size": 1.5,
            "crop": None,
        },
    },
    "bone_tissue_test": {
        "fine": {
            "task_id_v1": 278,
            "task_name": "bone_tissue_test",
            "trainer_v1": "nnUNetTrainerV2_ep4000_nomirror",
            "voxel_size": 1.5,
            "crop_v1": "body",
        },
    },
}


@dataclass(frozen=True)
class SegConfig:
    task_name: str
    task_id: Union[int, list]
    trainer: str
    voxel_size: float
    crop: Optional[str]
    resolution: str
    version: int

    def __post_init__(self):
        if self.voxel_size not in (1.5, 3.0):
            raise ValueError(f"unsupported voxel size {self.voxel_size} mm")
        if self.resolution not in ("coarse", "fine"):
            raise ValueError(f"resolution must be 'coarse' or 'fine', got {self.resolution!r}")


def _pick(entry: dict, key: str, version: int):
    vkey = f"{key}_v{version}"
    if vkey in entry:
        return entry[vkey]
    return entry.get(key)


def get_seg_config_by_task_name(task: str, resolution: str = "fine", version: int = 2) -> SegConfig:
    version = int(version)
    if version not in (1, 2):
        raise UnknownTaskError(f"unsupported model version {version}")
    if version == 1:
        task = V1_REDIRECTS.get(task, task)
    if task not in SEGMENTATION_SETTINGS:
        raise UnknownTaskError(f"unknown segmentation task {task!r}")
    per_res = SEGMENTATION_SETTINGS[task]
    if resolution not in per_res:
        raise ValueError(f"task {task!r} has no {resolution!r} model; available: {sorted(per_res)}")
    entry = per_res[resolution]
    task_id = _pick(entry, "task_id", version)
    if task_id is None:
        raise UnknownTaskError(f"task {task!r} has no model weights for version {version}")
    trainer = _pick(entry, "trainer", version)
    if trainer is None or trainer == "default":
        trainer = DEFAULT_TRAINERS[version]
    return SegConfig(
        task_name=entry["task_name"],
        task_id=list(task_id) if isinstance(task_id, (list, tuple)) else int(task_id),
        trainer=trainer,
        voxel_size=float(entry["voxel_size"]),
        crop=_pick(entry, "crop", version),
        resolution=resolution,
        version=version,
    )
