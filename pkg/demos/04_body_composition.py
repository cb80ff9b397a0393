"""
Body composition between L1 and the pelvis
==========================================

Volumes of subcutaneous fat, torso fat and skeletal muscle inside the
standardized range, with implant cases excluded.
"""

import json

from aarchive.features import body_component_analysis
from aarchive.phantoms import make_phantom
from aarchive.registry import load_class_map
from aarchive.standardizer import DatasetTag, define_volume_bounds_by_anatomies, detect_hip_prosthesis

target_eva_config = {
    "total": {"refObjUB": "vertebrae_L1", "refObjLB": "pelvic", "excludeProsthesisSamples": True},
    "tissue_types": {"selectedObjs": ["subcutaneous_fat", "torso_fat", "skeletal_muscle"],
                     "enforceMuscleRange": False},
}


def named(labels, task):
    cm = load_class_map(task)
    return {name: labels.data == lab for lab, name in cm.merged().items() if (labels.data == lab).any()}


tag = DatasetTag()
for data_id, seed, implant in (("p001", 1, False), ("p002", 2, False), ("p003", 3, True)):
    ph = make_phantom(data_id, seed, implant)
    masks = {t: named(ph.segmentations[t], t) for t in ("total", "tissue_types")}
    b = define_volume_bounds_by_anatomies(ph.segmentations["total"], target_eva_config["total"])
    pros = detect_hip_prosthesis(ph.image, b.lower, tag, data_id)
    res = body_component_analysis(ph.image, masks, target_eva_config, bounds=b, prosthesis=pros,
                                  dataset_tag=tag, data_id=data_id)
    print(data_id, res.status, res.reasons)
    for name, m in res.metrics.get("tissue_types", {}).items():
        print(f"  {name:18} {m['volume_cm3']:9.1f} cm3  mean {m['mean_hu']:7.1f} HU")

# muscle split into low-density, normal and intermuscular fat
target_eva_config["tissue_types"]["enforceMuscleRange"] = True
ph = make_phantom("p001", seed=1)
masks = {t: named(ph.segmentations[t], t) for t in ("total", "tissue_types")}
b = define_volume_bounds_by_anatomies(ph.segmentations["total"], target_eva_config["total"])
res = body_component_analysis(ph.image, masks, target_eva_config, bounds=b)
print(json.dumps({k: round(v["volume_cm3"], 1) for k, v in res.metrics["tissue_types"].items()}, indent=1))
print(tag.to_json())
