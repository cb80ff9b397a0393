"""
Volume bounds, implants and extremities
=======================================

Bounds come from the top of L1 and the bottom of the hip bones. Scans where
either is cropped or missing get tagged, and so do scans with a hip implant.
"""

from _common import out_dir
from aarchive.imageio import LabelVolume
from aarchive.phantoms import make_phantom
from aarchive.registry import load_class_map
from aarchive.standardizer import DatasetTag, define_volume_bounds_by_anatomies, detect_hip_prosthesis, \
    separate_arms_and_legs
from aarchive.visualizer import ControlImageSpec, render_control_image

TOTAL = load_class_map("total")
ref = {"refObjUB": "vertebrae_L1", "refObjLB": "pelvic"}
tag = DatasetTag()
root = out_dir("standardize")

for data_id, seed, implant in (("p001", 1, False), ("p003", 3, True)):
    ph = make_phantom(data_id, seed, implant)
    b = define_volume_bounds_by_anatomies(ph.segmentations["total"], ref, dataset_tag=tag, data_id=data_id)
    pros = detect_hip_prosthesis(ph.image, b.lower, dataset_tag=tag, data_id=data_id)
    bones = [ph.segmentations["total"].data == TOTAL.label_of(n) for n in ("humerus_left", "humerus_right")]
    arms = separate_arms_and_legs(ph.segmentations["body"], bones, b)
    print(f"{data_id}: z in [{b.lower}, {b.upper}], implant={pros.detected}, "
          f"arms={len(arms.arm_masks)} legs={len(arms.leg_masks)} trunk cropped={arms.trunk_cropped}")
    png = render_control_image(ph.image, ControlImageSpec(bounds=b, prosthesis=pros, arms=arms),
                               root / f"{data_id}_overview.png")
    print("  control image:", png)

# a scan that starts inside the pelvis: the hip bones touch the bottom slice (-1)
ph = make_phantom("p004", seed=4)
short = LabelVolume(ph.segmentations["total"].data[:, :, 25:], ph.image.affine, "total")
b = define_volume_bounds_by_anatomies(short, ref, dataset_tag=tag, data_id="p004")
print("p004 bounds:", b.upper, b.lower)

# no hip labels at all (-2)
no_hip = ph.segmentations["total"].data.copy()
for name in ("hip_left", "hip_right"):
    no_hip[no_hip == TOTAL.label_of(name)] = 0
b = define_volume_bounds_by_anatomies(LabelVolume(no_hip, ph.image.affine, "total"), ref, dataset_tag=tag,
                                      data_id="p005")
print("p005 bounds:", b.upper, b.lower)
print(tag.to_json())
