"""Synthetic CT phantoms with matching label maps for demos and tests.

Volumes are built directly in PLS+ orientation at 2 mm isotropic spacing:
axis 0 runs anterior to posterior, axis 1 right to left, axis 2 inferior to
superior. Each phantom has a trunk with subcutaneous fat, a muscle ring and
torso fat, two legs with femurs, two arms with humeri, hips, an L1 vertebra,
a liver and paraspinal muscles.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .imageio import LabelVolume, VolumeGrid, write_volume
from .registry import load_class_map

__all__ = ["PHANTOM_SHAPE", "PHANTOM_SPACING", "Phantom", "make_phantom", "write_demo_dataset",
           "DEMO_TARGET_EVA_CONFIG", "DEMO_EXTRACTION_YAML"]

PHANTOM_SHAPE = (40, 48, 80)
PHANTOM_SPACING = 2.0

HU_AIR, HU_SOFT, HU_FAT, HU_TORSO_FAT = -1000, 35, -100, -90
HU_MUSCLE, HU_LOW_MUSCLE, HU_IMAT = 45, 10, -60
HU_LIVER, HU_BONE, HU_IMPLANT = 60, 700, 3000

DEMO_TARGET_EVA_CONFIG = {
    "total": {
        "refObjUB": "vertebrae_L1",
        "refObjLB": "pelvic",
        "excludeProsthesisSamples": True,
        "selectedObjs": ["liver", "autochthon"],
    },
    "tissue_types": {
        "selectedObjs": ["subcutaneous_fat", "torso_fat", "skeletal_muscle"],
        "enforceMuscleRange": True,
    },
}

DEMO_EXTRACTION_YAML = """\
imageType:
  Original: {}
featureClass:
  firstorder:
setting:
  binWidth: 25
  force2D: false
  label: 1
voxelSetting:
  kernelRadius: 2
  maskedKernel: true
  initValue: 0
  voxelBatch: 10000
"""


def pls_affine(spacing: float = PHANTOM_SPACING) -> np.ndarray:
    """Affine for a PLS+ grid in RAS+ world coordinates."""
    aff = np.zeros((4, 4))
    aff[1, 0] = -spacing
    aff[0, 1] = -spacing
    aff[2, 2] = spacing
    aff[3, 3] = 1.0
    aff[:3, 3] = (40.0, 30.0, -80.0)
    return aff


@dataclass
class Phantom:
    data_id: str
    image: VolumeGrid
    segmentations: dict[str, LabelVolume]


def _grid(shape):
    return np.meshgrid(*(np.arange(s) for s in shape), indexing="ij")


def make_phantom(data_id: str = "p001", seed: int = 0, prosthesis: bool = False, shift: int = 0) -> Phantom:
    """One phantom; ``shift`` moves the L1 vertebra and liver up by that many slices."""
    shape = PHANTOM_SHAPE
    a, r, z = _grid(shape)
    total = np.zeros(shape, np.int16)
    body = np.zeros(shape, np.int16)
    tissue = np.zeros(shape, np.int16)
    hu = np.full(shape, HU_AIR, np.float64)

    def ellipse(ca, cr, sa, sr):
        return ((a - ca) / sa) ** 2 + ((r - cr) / sr) ** 2

    def disk(ca, cr, rad):
        return (a - ca) ** 2 + (r - cr) ** 2 <= rad ** 2

    trunk_e = ellipse(20, 24, 14, 14)
    trunk = (trunk_e <= 1) & (z >= 18)
    legs = [(disk(20, 16, 6) & (z < 18)), (disk(20, 32, 6) & (z < 18))]
    arms = [(disk(20, 5, 3) & (z >= 40) & (z <= 70)), (disk(20, 43, 3) & (z >= 40) & (z <= 70))]
    body[trunk] = 1
    for m in legs + arms:
        body[m] = 2
    hu[body > 0] = HU_SOFT

    # tissue rings, outermost first
    subcut = trunk & (ellipse(20, 24, 12, 12) > 1)
    muscle = trunk & ~subcut & (ellipse(20, 24, 10, 10) > 1)
    torso_fat = trunk & (ellipse(22, 24, 4, 6) <= 1) & (z >= 32) & (z <= 44)
    tissue[subcut] = 1
    tissue[torso_fat] = 2
    tissue[muscle] = 3
    hu[subcut] = HU_FAT
    hu[torso_fat] = HU_TORSO_FAT
    hu[muscle] = HU_MUSCLE
    hu[muscle & ((a + r + z) % 7 == 0)] = HU_LOW_MUSCLE
    hu[muscle & ((a + 2 * r + z) % 11 == 0)] = HU_IMAT

    cmap = load_class_map("total")

    def put(name, mask, value):
        total[mask] = cmap.label_of(name)
        hu[mask] = value

    put("liver", (a - 14) ** 2 + (r - 16) ** 2 + (z - 48 - shift) ** 2 <= 36, HU_LIVER)
    put("autochthon_right", (a >= 27) & (a <= 31) & (r >= 17) & (r <= 21) & (z >= 35) & (z <= 52), HU_MUSCLE)
    put("autochthon_left", (a >= 27) & (a <= 31) & (r >= 27) & (r <= 31) & (z >= 35) & (z <= 52), HU_MUSCLE)
    put("hip_right", (a >= 16) & (a <= 24) & (r >= 15) & (r <= 20) & (z >= 20) & (z <= 30), HU_BONE)
    put("hip_left", (a >= 16) & (a <= 24) & (r >= 28) & (r <= 33) & (z >= 20) & (z <= 30), HU_BONE)
    put("vertebrae_L1", (a >= 26) & (a <= 30) & (r >= 22) & (r <= 26) & (z >= 55 + shift) & (z <= 60 + shift),
        HU_BONE)
    put("femur_right", disk(20, 16, 2) & (z >= 2) & (z <= 19), HU_BONE)
    put("femur_left", disk(20, 32, 2) & (z >= 2) & (z <= 19), HU_BONE)
    put("humerus_right", disk(20, 5, 1.5) & (z >= 45) & (z <= 65), HU_BONE)
    put("humerus_left", disk(20, 43, 1.5) & (z >= 45) & (z <= 65), HU_BONE)
    if prosthesis:
        hu[(a >= 18) & (a <= 22) & (r >= 31) & (r <= 35) & (z >= 8) & (z <= 44)] = HU_IMPLANT

    rng = np.random.default_rng(seed)
    hu = np.rint(hu + rng.normal(0.0, 8.0, shape)).astype(np.int16)
    aff = pls_affine()
    return Phantom(
        data_id,
        VolumeGrid(hu, aff),
        {
            "total": LabelVolume(total, aff, class_map_name="total"),
            "body": LabelVolume(body, aff, class_map_name="body"),
            "tissue_types": LabelVolume(tissue, aff, class_map_name="tissue_types"),
        },
    )


DEMO_PHANTOMS = (("p001", 1, False, 0), ("p002", 2, False, 2), ("p003", 3, True, 0))


def write_demo_dataset(root, workers: int = 1) -> Path:
    """Write three phantoms, the extraction YAML and a workflow config; return the config path.

    ``p003`` carries a hip implant and is excluded by the config.
    """
    root = Path(root)
    inputs = root / "inputs"
    inputs.mkdir(parents=True, exist_ok=True)
    for data_id, seed, implant, shift in DEMO_PHANTOMS:
        ph = make_phantom(data_id, seed, implant, shift)
        write_volume(ph.image, inputs / f"{data_id}.nii.gz")
        for task, lab in ph.segmentations.items():
            write_volume(lab, inputs / f"{data_id}_seg_{task}.nii.gz")
    (root / "exampleVoxel.yaml").write_text(DEMO_EXTRACTION_YAML, encoding="utf-8")
    config = {
        "io": {"input_dir": "inputs", "output_dir": "output",
               "seg_pattern": "{id}_seg_{task}.nii.gz"},
        "orientation": "PLS",
        "crop_addon": 0,
        "workers": workers,
        "target_eva_config": DEMO_TARGET_EVA_CONFIG,
        "extraction_params": "exampleVoxel.yaml",
        "robustness": {
            "enabled": True,
            "task": "total",
            "anatomy": "liver",
            "target_param": "kernel_radius",
            "target_range": [1, 2, 3, 4],
            "n_components": 2,
            "do_ttest": False,
            "plot_result": False,
            "save_stats_path": "stats/robustness.csv",
        },
        "control_images": {"enabled": True, "plane": "auto"},
    }
    path = root / "workflow.json"
    path.write_text(json.dumps(config, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path
