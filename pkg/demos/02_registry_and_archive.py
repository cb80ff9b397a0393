"""
Anatomy names, groups and the mask archive
==========================================

Label maps are split into named sparse masks and packed with the anatomy
graph, so a later query can ask for "pelvic" or "cardiovascular" instead
of label integers.
"""

from _common import out_dir
from aarchive.archive import pack_archive, query_masks, record_from_label_volume, unpack_archive
from aarchive.phantoms import make_phantom
from aarchive.registry import default_graph, expand_selection, get_seg_config_by_task_name, load_class_map, \
    normalize_anatomy_name

g = default_graph()
for alias in ("pelvic", "spinal erectors", "right femur"):
    print(f"{alias!r:20} -> {normalize_anatomy_name(alias)}")
print("femur expands to", expand_selection(g, "femur"))
print("kidney right ->", expand_selection(g, "kidney right"))

cfg = get_seg_config_by_task_name("total", "fine", 2)
print("total/fine on v2:", cfg.task_id, cfg.voxel_size, "mm")
print("tissue_types on v1 runs as", get_seg_config_by_task_name("tissue_types", "fine", 1).task_name)

root = out_dir("archive")
ph = make_phantom("p001", seed=1)
rec = record_from_label_volume(ph.segmentations["total"], load_class_map("total"), gray=ph.image, data_id="p001")
pack_archive(rec, root / "p001.aarc")
size = (root / "p001.aarc").stat().st_size
print(f"{len(rec.masks)} masks packed into {size} bytes")

back = unpack_archive(root / "p001.aarc")
print("round trip equal:", back == rec)
for name, m in query_masks(back, "pelvic").items():
    print(f"  {name}: {m.n} voxels")
