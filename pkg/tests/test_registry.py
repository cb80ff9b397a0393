import warnings

import networkx as nx
import pytest

from aarchive.registry import (
    ANATOMY_GROUPS,
    BASE_GROUPS,
    ROOT,
    TOP_CATEGORIES,
    AnatomyGraph,
    ClassMap,
    UnknownAnatomyWarning,
    UnknownTaskError,
    available_class_maps,
    build_anatomy_graph,
    default_graph,
    expand_selection,
    get_seg_config_by_task_name,
    is_muscle,
    load_class_map,
    normalize_anatomy_name,
)


# --- segmentation settings ---------------------------------------------------

def test_total_fine_v2():
    cfg = get_seg_config_by_task_name("total", "fine", 2)
    assert cfg.task_id == [291, 292, 293, 294, 295]
    assert cfg.voxel_size == 1.5
    assert cfg.crop is None
    assert cfg.trainer == "nnUNetTrainerNoMirroring"


def test_total_fine_v1():
    cfg = get_seg_config_by_task_name("total", "fine", 1)
    assert cfg.task_id == [251, 252, 253, 254, 255]
    assert cfg.trainer == "nnUNetTrainerV2_ep4000_nomirror"


@pytest.mark.parametrize("version", [1, 2])
def test_total_coarse_is_3mm(version):
    assert get_seg_config_by_task_name("total", "coarse", version).voxel_size == 3.0


@pytest.mark.parametrize("version,expected", [(1, "nnUNetTrainerV2"), (2, "nnUNetTrainer")])
def test_default_trainer_expands_per_version(version, expected):
    assert get_seg_config_by_task_name("body", "fine", version).trainer == expected


def test_v1_redirect_in_seg_config():
    cfg = get_seg_config_by_task_name("tissue_types", "fine", 1)
    assert cfg.task_name == "bone_tissue_test"
    assert cfg.crop == "body"


def test_seg_config_errors():
    with pytest.raises(UnknownTaskError):
        get_seg_config_by_task_name("nonexistent")
    with pytest.raises(ValueError):
        get_seg_config_by_task_name("tissue_types", "coarse", 2)
    with pytest.raises(UnknownTaskError):
        get_seg_config_by_task_name("total", "fine", 3)


def test_no_6mm_models():
    from aarchive.registry import SEGMENTATION_SETTINGS

    for per_res in SEGMENTATION_SETTINGS.values():
        for entry in per_res.values():
            assert entry["voxel_size"] in (1.5, 3.0)


# --- class maps -----------------------------------------------------------------

def test_appendicular_v1_redirects():
    assert load_class_map("appendicular_bones", 1).task_name == "bone_tissue_test"
    assert load_class_map("tissue_types", 1) == load_class_map("bone_tissue_test", 1)


def test_auxiliary_appended_by_default():
    cm = load_class_map("appendicular_bones", 2, append_auxiliary=True)
    assert "humerus" in cm.names()
    bare = load_class_map("appendicular_bones", 2, append_auxiliary=False)
    assert "humerus" not in bare.names()
    assert set(bare.names()) < set(cm.names())


def test_class_map_invariants_on_bundled_files():
    for task, version in available_class_maps():
        cm = load_class_map(task, version)
        labels = list(cm.merged())
        assert all(k > 0 for k in labels)
        assert len(set(cm.names())) == len(cm.names())


def test_class_map_rejects_duplicates():
    with pytest.raises(ValueError):
        ClassMap("x", 2, {1: "a", 2: "a"})
    with pytest.raises(ValueError):
        ClassMap("x", 2, {1: "a"}, {1: "b"})
    with pytest.raises(ValueError):
        ClassMap("x", 2, {0: "a"})


def test_unknown_class_map():
    with pytest.raises(UnknownTaskError):
        load_class_map("nope", 2)
    with pytest.raises(UnknownTaskError):
        load_class_map("appendicular_bones", 3)


def test_every_class_map_name_is_in_graph():
    g = default_graph()
    for task, version in available_class_maps():
        for name in load_class_map(task, version).names():
            assert name in g, (task, version, name)


# --- names ------------------------------------------------------------------------

@pytest.mark.parametrize("alias,canonical", [
    ("pelvic", "hip"),
    ("spinal erectors", "autochthon"),
    ("liver", "liver"),
    ("Vertebrae L1", "vertebrae_L1"),
    ("vertebrae_l1", "vertebrae_L1"),
    ("pelvic left", "hip_left"),
    ("right femur", "femur_right"),
])
def test_normalize(alias, canonical):
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        assert normalize_anatomy_name(alias) == canonical


def test_normalize_idempotent_on_graph_nodes():
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        for n in default_graph().nodes:
            assert normalize_anatomy_name(n) == n


def test_unknown_name_passes_through_with_warning():
    with pytest.warns(UnknownAnatomyWarning):
        assert normalize_anatomy_name("flux capacitor") == "flux capacitor"


def test_muscle_keywords():
    assert is_muscle("iliopsoas_left")
    assert is_muscle("gluteus_maximus_right")
    assert is_muscle("skeletal_muscle")
    assert is_muscle("autochthon_left")  # through the "erector" aliases
    assert not is_muscle("liver")


# --- graph ------------------------------------------------------------------------

def test_graph_categories_and_groups():
    g = default_graph()
    for c in TOP_CATEGORIES:
        assert g.hierarchy.has_edge(ROOT, c)
    for name in ("cardiovascular", "musculoskeletal", "gastrointestinal", "digestive") + BASE_GROUPS:
        assert name in g.groups


def test_hierarchy_acyclic():
    assert nx.is_directed_acyclic_graph(default_graph().hierarchy)


def test_cycle_rejected():
    with pytest.raises(ValueError, match="cycle"):
        build_anatomy_graph({"a": {"b": ["a"]}}, {}, require_categories=False)


def test_unresolvable_group_member():
    with pytest.raises(KeyError):
        build_anatomy_graph({"bone": ["femur"], "lung": None, "soft_tissue": None}, {"g": ["spleen"]})


def test_parallel_edges_for_double_membership():
    g = default_graph()
    # pancreas belongs to digestive_accessory, endocrine and parenchyma
    edges = g.graph.get_edge_data("soft_tissue", "pancreas")
    tags = sorted(d["tag"] for d in edges.values() if d["kind"] == "group")
    assert {"digestive_accessory", "endocrine", "parenchyma"} <= set(tags)
    assert len(tags) == len(set(tags))
    assert sum(1 for d in edges.values() if d["kind"] == "hierarchy") == 1


@pytest.mark.parametrize("selector,expected", [
    ("femur", ["femur_left", "femur_right"]),
    ("femur left", ["femur_left"]),
    ("left femur", ["femur_left"]),
    ("liver", ["liver"]),
    ("pelvic", ["hip_left", "hip_right"]),
    ("femur_right", ["femur_right"]),
])
def test_expand_selection(selector, expected):
    assert expand_selection(default_graph(), selector) == expected


def test_side_filter_on_group():
    leaves = expand_selection(default_graph(), "kidney right")
    assert leaves == ["kidney_right"]


def test_group_equals_union_of_members():
    g = default_graph()
    for group in ANATOMY_GROUPS:
        union = set()
        for member in g.groups[group]:
            union.update(expand_selection(g, member))
        assert expand_selection(g, group) == sorted(union)


def test_expand_unknown():
    with pytest.raises(KeyError):
        expand_selection(default_graph(), "flux capacitor")


def test_expand_deterministic_and_sorted():
    g = default_graph()
    a = expand_selection(g, "cardiovascular")
    assert a == sorted(a) == expand_selection(build_anatomy_graph(), "cardiovascular")
    assert expand_selection(g, ["liver", "femur left", "liver"]) == ["femur_left", "liver"]


def test_graph_dict_round_trip():
    g = default_graph()
    assert AnatomyGraph.from_dict(g.to_dict()) == g


def test_for_masks_leaves_and_ancestor_clash():
    g = default_graph()
    sub = g.for_masks(["liver", "humerus", "femur_left"])
    assert sub.leaves == {"liver", "humerus", "femur_left"}
    with pytest.raises(ValueError):
        g.for_masks(["femur", "femur_left"])


def test_top_category():
    g = default_graph()
    assert g.top_category("femur_left") == "bone"
    assert g.top_category("lung_upper_lobe_left") == "lung"
    assert g.top_category("liver") == "soft_tissue"
