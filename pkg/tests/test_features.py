import csv
import math

import numpy as np
import pytest

from oracles import doane_width, first_order_brute, voxel_features_brute

from aarchive.features import (
    DEFAULT_HU_RANGES,
    FIRST_ORDER_FEATURES,
    ConfigError,
    ExtractionParams,
    FeatureMapStack,
    body_component_analysis,
    build_feature_stack,
    central_plane_index,
    condition_subsets,
    enforce_fat_range,
    export_feature_csv,
    extract_voxel_features,
    first_order_features,
    mask_bounding_box,
    optimal_hist_bin_width,
    reconstruct_global_feature_map,
    round_bin_width,
    sap_pool,
    sap_pool_vectors,
    split_muscle_by_hu,
    standardize,
    validate_target_eva_config,
)
from aarchive.imageio import VolumeGrid, reorient_volume
from aarchive.phantoms import DEMO_EXTRACTION_YAML, DEMO_TARGET_EVA_CONFIG, pls_affine
from aarchive.registry import load_class_map
from aarchive.standardizer import DatasetTag

TOTAL = load_class_map("total")
TISSUE = load_class_map("tissue_types")


# --- bin width ----------------------------------------------------------------------

@pytest.mark.parametrize("raw,expected", [(2.3, 2), (16.8, 20), (0.4, 2), (7.4, 5), (7.5, 10), (44.9, 40),
                                          (45.0, 40), (300, 50)])
def test_round_bin_width(raw, expected):
    assert round_bin_width(raw) == expected


def test_doane_against_formula(rng):
    for n, dist in [(1000, rng.normal(40, 12, 1000)), (500, rng.gamma(2.0, 30.0, 500)), (50, rng.uniform(0, 9, 50))]:
        assert optimal_hist_bin_width(dist) == round_bin_width(doane_width(dist))


def test_doane_custom_targets(rng):
    x = rng.normal(0, 100, 400)
    assert optimal_hist_bin_width(x, (1, 1000)) in (1, 1000)


def test_bin_width_errors():
    with pytest.raises(ValueError):
        optimal_hist_bin_width([1, 2])
    with pytest.raises(ValueError):
        optimal_hist_bin_width([3, 3, 3, 3])
    with pytest.raises(ValueError):
        optimal_hist_bin_width([1, 2, np.nan])
    with pytest.raises(ValueError):
        round_bin_width(0)


# --- first order features --------------------------------------------------------------

def test_first_order_rows_against_brute(rng):
    rows = [rng.normal(50, 30, 27), rng.integers(-100, 100, 125).astype(float), np.array([5.0, 5.0, 5.0, 7.0])]
    width = 25
    block = np.full((len(rows), 125), np.nan)
    for i, r in enumerate(rows):
        block[i, :len(r)] = r
    got = first_order_features(block, width)
    assert list(got) == list(FIRST_ORDER_FEATURES) and len(FIRST_ORDER_FEATURES) == 17
    for i, r in enumerate(rows):
        ref = first_order_brute(r, width)
        for f in FIRST_ORDER_FEATURES:
            assert math.isclose(got[f][i], ref[f], rel_tol=1e-9, abs_tol=1e-9), (f, i)


def test_total_energy_not_emitted():
    assert "TotalEnergy" not in FIRST_ORDER_FEATURES


@pytest.mark.parametrize("radius,masked", [(1, True), (2, True), (1, False)])
def test_voxel_features_match_brute_force(rng, radius, masked):
    shape = (12, 13, 14)
    img = rng.normal(40, 40, shape).round()
    mask = np.zeros(shape, bool)
    mask[2:9, 3:10, 4:10] = rng.random((7, 7, 6)) < 0.7
    params = ExtractionParams(bin_width=25, kernel_radius=radius, masked_kernel=masked)
    maps = extract_voxel_features(img, mask, params)[1]
    ref = voxel_features_brute(img, mask, radius, 25, masked)
    idx = [tuple(c) for c in maps.coords]
    for f in FIRST_ORDER_FEATURES:
        got = maps.features[f]
        want = np.array([ref[f][i] for i in idx])
        if f == "Entropy":
            assert np.max(np.abs(got - want)) < 1e-9
        else:
            err = np.abs(got - want) / np.maximum(np.abs(want), 1e-12)
            assert np.all((err < 1e-6) | (np.abs(got - want) < 1e-9)), f


def test_phantom_16_cubed_mean_r2(phantom):
    img = phantom.image.data[10:26, 10:26, 40:56].astype(float)
    lab = phantom.segmentations["total"].data[10:26, 10:26, 40:56] == TOTAL.label_of("liver")
    assert 16 ** 3 == img.size and lab.sum() > 50
    params = ExtractionParams(bin_width=25, kernel_radius=2)
    maps = extract_voxel_features(img, lab, params)[1]
    for (x, y, z), m in zip(maps.coords, maps.features["Mean"]):
        nb = img[max(x - 2, 0):x + 3, max(y - 2, 0):y + 3, max(z - 2, 0):z + 3]
        nm = lab[max(x - 2, 0):x + 3, max(y - 2, 0):y + 3, max(z - 2, 0):z + 3]
        want = nb[nm].mean()
        assert abs(m - want) / abs(want) < 1e-6


def test_constant_voi():
    img = np.full((8, 8, 8), 42.0)
    mask = np.zeros(img.shape, bool)
    mask[2:6, 2:6, 2:6] = True
    f = extract_voxel_features(img, mask, ExtractionParams(kernel_radius=1))[1].features
    assert np.all(f["Entropy"] == 0) and np.all(f["Variance"] == 0) and np.all(f["Uniformity"] == 1)
    assert np.all(f["Skewness"] == 0) and np.all(f["Kurtosis"] == 0)


def test_voxel_batch_does_not_change_results(rng):
    img = rng.normal(0, 50, (10, 10, 10))
    mask = rng.random(img.shape) < 0.5
    out = [extract_voxel_features(img, mask, ExtractionParams(kernel_radius=2, voxel_batch=b))[1] for b in (1, 7, 10000)]
    for other in out[1:]:
        for f in FIRST_ORDER_FEATURES:
            assert out[0].features[f].tobytes() == other.features[f].tobytes()


def test_labels_and_preset_bin_widths(rng):
    img = rng.normal(0, 60, (9, 9, 9))
    lab = np.zeros(img.shape, np.int16)
    lab[1:4] = 1
    lab[5:8] = 3
    res = extract_voxel_features(img, lab, ExtractionParams(), selected_labels=[1, 3], preset_bin_widths=[5, 40])
    assert sorted(res) == [1, 3]
    assert res[1].params.bin_width == 5 and res[3].params.bin_width == 40
    solo = extract_voxel_features(img, lab == 3, ExtractionParams(bin_width=40))[1]
    assert np.array_equal(solo.features["Entropy"], res[3].features["Entropy"])
    dense = res[1].to_dense("Mean")
    assert dense.shape == img.shape and np.all(dense[lab != 1] == 0)


def test_extraction_errors(rng):
    img = rng.normal(size=(5, 5, 5))
    lab = np.zeros((5, 5, 5), np.int16)
    lab[2, 2, 2] = 1
    with pytest.raises(ValueError):
        extract_voxel_features(img, lab, ExtractionParams(), selected_labels=[2])
    with pytest.raises(ValueError):
        extract_voxel_features(img, lab, ExtractionParams(), selected_labels=[1], preset_bin_widths=[1, 2])
    with pytest.raises(ValueError):
        extract_voxel_features(img, lab, ExtractionParams(), selected_labels=[1], preset_bin_widths=[0])
    with pytest.raises(ValueError):
        extract_voxel_features(img, lab[:4], ExtractionParams())
    with pytest.raises(ValueError):
        ExtractionParams(bin_width=0)
    with pytest.raises(ValueError):
        ExtractionParams(kernel_radius=0)


def test_example_yaml_accepted(tmp_path):
    p = tmp_path / "exampleVoxel.yaml"
    p.write_text(DEMO_EXTRACTION_YAML)
    params = ExtractionParams.from_yaml(p)
    assert params == ExtractionParams(bin_width=25, kernel_radius=2, masked_kernel=True, init_value=0, voxel_batch=10000)


def test_nan_init_value_replaced():
    assert ExtractionParams(init_value=float("nan")).init_value == 0.0
    doc = {"voxelSetting": {"initValue": "nan"}}
    assert ExtractionParams.from_mapping(doc).init_value == 0.0


def test_unsupported_feature_class():
    with pytest.raises(ValueError):
        ExtractionParams.from_mapping({"featureClass": {"glcm": None}})
    with pytest.raises(ValueError):
        ExtractionParams.from_mapping({"imageType": {"Wavelet": {}}})


# --- feature stacks ------------------------------------------------------------------------

def test_build_feature_stack(rng, tmp_path):
    img = rng.normal(0, 50, (8, 8, 8))
    mask = np.zeros(img.shape, bool)
    mask[2:6, 2:6, 2:6] = True
    stack = build_feature_stack(img, mask, "kernel_radius", [1, 2, 3])
    assert stack.condition_ids == ["kernel_radius=1", "kernel_radius=2", "kernel_radius=3"]
    assert stack.matrix("Mean").shape == (64, 3)
    export_feature_csv(stack, tmp_path / "f.csv")
    rows = list(csv.reader(open(tmp_path / "f.csv")))
    assert rows[0] == ["x", "y", "z", *FIRST_ORDER_FEATURES, "condition"]
    assert len(rows) == 1 + 64 * 3
    assert float(rows[1][3 + FIRST_ORDER_FEATURES.index("Mean")]) == stack.vector("kernel_radius=1", "Mean")[0]
    with pytest.raises(ValueError):
        build_feature_stack(img, mask, "nope", [1])


def test_feature_stack_needs_two_voxels():
    with pytest.raises(ValueError):
        FeatureMapStack({"a": {"Mean": np.ones(1)}}, [[0, 0, 0]], (2, 2, 2))
    with pytest.raises(ValueError):
        FeatureMapStack({"a": {"Mean": np.ones(3)}}, [[0, 0, 0], [1, 1, 1]], (2, 2, 2))


# --- global map reconstruction -----------------------------------------------------------------

def test_reconstruct_index_arithmetic():
    origin, extent, ks, full = (3, 4, 5), (6, 7, 8), 2, (20, 20, 20)
    cropped = np.ones(tuple(e + 2 * ks for e in extent))
    out = reconstruct_global_feature_map(cropped, (origin, extent), ks, full)
    nz = np.argwhere(out != 0)
    assert nz.min(axis=0).tolist() == [3, 4, 5]
    assert nz.max(axis=0).tolist() == [8, 10, 12]
    assert len(nz) == 6 * 7 * 8


def test_reconstruct_identity_and_zero(rng):
    f = rng.normal(size=(4, 5, 6))
    assert np.array_equal(reconstruct_global_feature_map(f, ((0, 0, 0), (4, 5, 6)), 0, (4, 5, 6)), f)
    z = reconstruct_global_feature_map(np.zeros((8, 9, 10)), ((1, 1, 1), (4, 5, 6)), 2, (10, 10, 10))
    assert not z.any()


def test_reconstruct_from_mask_bbox(rng):
    mask = np.zeros((15, 15, 15), bool)
    mask[3:9, 4:11, 5:13] = True
    origin, extent = mask_bounding_box(mask)
    assert (origin, extent) == ((3, 4, 5), (6, 7, 8))
    with pytest.raises(ValueError):
        reconstruct_global_feature_map(np.ones((6, 7, 8)), (origin, extent), 2, mask.shape)
    with pytest.raises(ValueError):
        mask_bounding_box(np.zeros((2, 2, 2)))


# --- SAP ------------------------------------------------------------------------------------

def _stack(rng, n=50, conds=4):
    base = rng.normal(size=n)
    c = {f"c{i}": {"Mean": base + rng.normal(0, 0.3, n) * (i + 1)} for i in range(conds)}
    return FeatureMapStack(c, np.argwhere(np.ones((n, 1, 1), bool)), (n, 1, 1))


def test_sap_identical_conditions(rng):
    x = rng.gamma(2.0, 3.0, 80)
    pooled = sap_pool_vectors([x, x.copy(), x.copy()])
    assert np.max(np.abs(pooled - standardize(x))) < 1e-9


def test_sap_k1(rng):
    stack = _stack(rng)
    res = sap_pool(stack, "Mean", ["c2"])
    assert res.k == 1
    assert np.max(np.abs(res.pooled - standardize(stack.vector("c2", "Mean")))) < 1e-9


def test_sap_affine_invariance(rng):
    vs = [rng.normal(size=40) for _ in range(3)]
    ref = sap_pool_vectors(vs)
    for i in range(3):
        for a, b in [(0.01, 5.0), (7.0, -300.0), (1e4, 1e3)]:
            moved = list(vs)
            moved[i] = a * vs[i] + b
            assert np.max(np.abs(sap_pool_vectors(moved) - ref)) < 1e-9


def test_sap_log_base_invariance(rng):
    vs = [rng.normal(size=30) for _ in range(3)]
    n = 30
    # literal computation with base-10 logarithm and explicit scalar re-standardization
    z = [(v / math.log10(n) - (v / math.log10(n)).mean()) / (v / math.log10(n)).std() for v in vs]
    cat = np.concatenate(z)
    by_hand = sum((zi - cat.mean()) / cat.std() for zi in z) / len(z)
    assert np.max(np.abs(sap_pool_vectors(vs) - by_hand)) < 1e-9


def test_sap_lengths_and_errors(rng):
    stack = _stack(rng)
    for k in range(1, 5):
        for s in condition_subsets(stack.condition_ids, k):
            assert sap_pool(stack, "Mean", s).pooled.shape == (50,)
    assert len(condition_subsets(stack.condition_ids, 2)) == 6
    with pytest.raises(ValueError):
        condition_subsets(stack.condition_ids, 5)
    with pytest.raises(ValueError):
        sap_pool_vectors([np.ones(10), rng.normal(size=10)])
    with pytest.raises(ValueError):
        sap_pool_vectors([np.ones(1)])
    with pytest.raises(KeyError):
        sap_pool(stack, "Mean", ["c9"])


# --- body composition --------------------------------------------------------------------------

def _grid(shape=(30, 30, 30)):
    return np.zeros(shape, np.int16)


def test_volume_of_1000_voxels():
    hu = _grid()
    mask = np.zeros(hu.shape, bool)
    mask[5:15, 5:15, 5:15] = True
    vol = VolumeGrid(np.where(mask, 60, -1000).astype(np.int16), pls_affine(2.0))
    res = body_component_analysis(vol, {"total": {"liver": mask}}, {"total": {"selectedObjs": ["liver"]}})
    m = res.metrics["total"]["liver"]
    assert res.mode == "whole" and m["voxels"] == 1000 and m["volume_cm3"] == pytest.approx(8.0)
    assert m["mean_hu"] == 60


def test_central_plane_2d():
    mask = np.zeros((30, 30, 30), bool)
    mask[10:14, 10:13, 10:21] = True
    assert central_plane_index(mask) == 15
    mask2 = mask.copy()
    mask2[5:20, 5:20, 12] = True
    assert central_plane_index(mask2, "max_area") == 12
    vol = VolumeGrid(np.where(mask2, 50, 0).astype(np.int16), pls_affine(2.0))
    res = body_component_analysis(vol, {"total": {"vertebrae_L3": mask}},
                                  {"total": {"refObj": "vertebrae_L3", "selectedObjs": ["vertebrae_L3"]}})
    assert res.mode == "2d" and res.central_plane == 15
    m = res.metrics["total"]["vertebrae_L3"]
    assert m["pixels"] == 12 and m["area_cm2"] == pytest.approx(12 * 4 / 100)
    with pytest.raises(ValueError):
        central_plane_index(np.zeros((3, 3, 3)))


def test_split_muscle_table_values():
    hu = np.array([100, 0, -100, 30, 29, -29, -30, 150, 151, -190, -191, 31]).reshape(1, 1, -1)
    m = np.ones(hu.shape, bool)
    parts = split_muscle_by_hu(m, hu)
    flat = {k: v.ravel().tolist() for k, v in parts.items()}
    which = []
    for i in range(hu.size):
        hits = [k for k in flat if flat[k][i]]
        assert len(hits) <= 1
        which.append(hits[0] if hits else None)
    assert which == ["normal", "low_attenuation", "imat", "normal", "low_attenuation", "low_attenuation",
                     "imat", "normal", None, "imat", None, "normal"]


def test_split_disjoint_and_contained(rng):
    hu = rng.integers(-300, 300, (10, 10, 10))
    m = rng.random(hu.shape) < 0.6
    parts = split_muscle_by_hu(m, hu)
    total = np.zeros(hu.shape, int)
    for p in parts.values():
        assert not (p & ~m).any()
        total += p
    assert total.max() <= 1


def test_overlapping_muscle_ranges_rejected():
    with pytest.raises(ConfigError):
        split_muscle_by_hu(np.ones((1, 1, 1), bool), np.zeros((1, 1, 1)), {"low_attenuation_muscle": [-29, 40]})


def test_enforce_fat_range():
    hu = np.array([-400, -100, 0, 31]).reshape(1, 1, 4)
    m = np.ones(hu.shape, bool)
    assert enforce_fat_range(m, hu).ravel().tolist() == [False, True, True, False]
    inside = np.array([False, True, True, False]).reshape(1, 1, 4)
    assert np.array_equal(enforce_fat_range(inside, hu), inside)
    assert not enforce_fat_range(np.zeros(hu.shape, bool), hu).any()
    assert DEFAULT_HU_RANGES["fat"] == (-190.0, 30.0)


def _phantom_masks(ph):
    masks = {}
    for task in ("total", "tissue_types"):
        cm = load_class_map(task)
        data = ph.segmentations[task].data
        masks[task] = {cm.entries[v]: data == v for v in np.unique(data) if v}
    return masks


def test_bounded_3d_composition(phantom):
    cfg = {"total": {"refObjUB": "vertebrae_L1", "refObjLB": "pelvic"},
           "tissue_types": {"selectedObjs": ["subcutaneous_fat", "torso_fat", "skeletal_muscle"]}}
    res = body_component_analysis(phantom.image, _phantom_masks(phantom), cfg)
    assert res.status == "completed" and res.mode == "3d"
    assert (res.bounds.upper, res.bounds.lower) == (60, 20)
    data = phantom.segmentations["tissue_types"].data
    for name in ("subcutaneous_fat", "torso_fat", "skeletal_muscle"):
        want = int((data[:, :, 20:61] == TISSUE.label_of(name)).sum())
        m = res.metrics["tissue_types"][name]
        assert m["voxels"] == want and m["volume_cm3"] == pytest.approx(want * 8 / 1000)


def test_composition_reorientation_invariant(phantom):
    masks = _phantom_masks(phantom)
    cfg = {"tissue_types": {"selectedObjs": ["skeletal_muscle"]}}
    ref = body_component_analysis(phantom.image, masks, cfg).metrics
    # express image and mask in RAS, then bring them back
    ras_img = reorient_volume(phantom.image, "RAS")
    ras_mask = reorient_volume(VolumeGrid(masks["tissue_types"]["skeletal_muscle"].astype(np.uint8),
                                          phantom.image.affine), "RAS")
    assert ras_img.shape != phantom.image.shape
    back_img = reorient_volume(ras_img, "PLS")
    back_mask = reorient_volume(ras_mask, "PLS").data.astype(bool)
    got = body_component_analysis(back_img, {"tissue_types": {"skeletal_muscle": back_mask}}, cfg).metrics
    assert got == ref
    assert got["tissue_types"]["skeletal_muscle"]["voxels"] == int(ras_mask.data.sum())


def test_muscle_and_fat_enforcement(phantom):
    res = body_component_analysis(phantom.image, _phantom_masks(phantom), DEMO_TARGET_EVA_CONFIG)
    t = res.metrics["tissue_types"]
    parts = sum(t[f"skeletal_muscle:{p}"]["voxels"] for p in ("normal", "low_attenuation", "imat"))
    assert parts <= t["skeletal_muscle"]["voxels"]
    assert t["skeletal_muscle:low_attenuation"]["voxels"] > 0 and t["skeletal_muscle:imat"]["voxels"] > 0
    assert "liver" in res.metrics["total"]


def test_prosthesis_sample_skipped(implant_phantom):
    tag = DatasetTag()
    res = body_component_analysis(implant_phantom.image, _phantom_masks(implant_phantom), DEMO_TARGET_EVA_CONFIG,
                                  dataset_tag=tag, data_id="p003")
    assert res.status == "skipped" and res.reasons == ["prosthesisDetected"]
    assert tag == {"prosthesisDetected": {"Warning": ["p003"]}}
    assert res.metrics == {}


def test_invalid_bounds_skip_and_tag(phantom):
    masks = _phantom_masks(phantom)
    del masks["total"]["hip_left"], masks["total"]["hip_right"]
    tag = DatasetTag()
    res = body_component_analysis(phantom.image, masks, DEMO_TARGET_EVA_CONFIG, dataset_tag=tag, data_id="q")
    assert res.status == "skipped" and res.reasons == ["refObjLBMissing"]
    assert tag == {"refObjLBMissing": {"Error": ["q"]}}


# --- config validation --------------------------------------------------------------------------

def test_demo_config_valid():
    out = validate_target_eva_config(DEMO_TARGET_EVA_CONFIG)
    assert out["total"]["dict_hu_range"] == DEFAULT_HU_RANGES


@pytest.mark.parametrize("cfg,needle", [
    ({"total": {"refObjXX": "liver"}}, "total.refObjXX"),
    ({"total": {"refObj": "liver", "refObjUB": "a", "refObjLB": "b"}}, "mutually exclusive"),
    ({"total": {"refObjUB": "liver"}}, "together"),
    ({"nonsense": {}}, "unknown task"),
    ({"total": {"selectedObjs": "liver"}}, "selectedObjs"),
    ({"total": {"coarse": 1}}, "coarse"),
    ({"total": {"refObj": "liver"}, "tissue_types": {"refObj": "skeletal_muscle"}}, "more than one task"),
    ({"total": {"dict_hu_range": {"fat": [10, -10]}}}, "fat"),
    ({"total": {"dict_hu_range": {"bone": [1, 2]}}}, "bone"),
])
def test_config_errors(cfg, needle):
    with pytest.raises(ConfigError, match=needle):
        validate_target_eva_config(cfg)
