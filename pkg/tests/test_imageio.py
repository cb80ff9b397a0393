import itertools

import nibabel as nib
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from aarchive.imageio import (
    DEFAULT_ORIENTATION,
    LabelVolume,
    MalformedVolumeError,
    UnsupportedDatatypeError,
    VolumeGrid,
    orientation_from_affine,
    read_label_volume,
    read_volume,
    reorient_volume,
    require_orientation,
    validate_axcodes,
    write_volume,
)
from oracles import world_of

ALL_AXCODES = [
    tuple(pair[f] for pair, f in zip(perm, flips))
    for perm in itertools.permutations((("L", "R"), ("P", "A"), ("I", "S")))
    for flips in itertools.product((0, 1), repeat=3)
]


def random_affine(rng):
    """Axis-permuted, flipped, anisotropic affine with a small oblique tilt."""
    perm = np.eye(3)[rng.permutation(3)]
    flips = np.diag(rng.choice([-1.0, 1.0], 3))
    tilt = np.linalg.qr(np.eye(3) + 0.05 * rng.normal(size=(3, 3)))[0]
    tilt *= np.sign(np.diag(tilt))
    aff = np.eye(4)
    aff[:3, :3] = tilt @ perm @ flips @ np.diag(rng.uniform(0.5, 3.0, 3))
    aff[:3, 3] = rng.uniform(-200, 200, 3)
    return aff


def test_there_are_48_axcode_triples():
    assert len(set(ALL_AXCODES)) == 48


def test_validate_axcodes_accepts_strings_and_rejects_duplicates():
    assert validate_axcodes("pls+") == ("P", "L", "S")
    with pytest.raises(ValueError):
        validate_axcodes("PAS")
    with pytest.raises(ValueError):
        validate_axcodes("XYZ")
    with pytest.raises(ValueError):
        validate_axcodes("PL")


def test_orientation_of_identity_is_ras():
    assert orientation_from_affine(np.eye(4)) == ("R", "A", "S")


@pytest.mark.parametrize("target", ALL_AXCODES)
def test_reorient_round_trip_and_world_coordinates(target, rng):
    data = rng.integers(-1000, 2000, size=(5, 6, 7)).astype(np.int16)
    vol = VolumeGrid(data, random_affine(rng))
    out = reorient_volume(vol, target)
    assert out.axcodes == target
    back = reorient_volume(out, vol.axcodes)
    assert np.array_equal(back.data, vol.data)
    extent = float(np.max(np.abs(vol.affine[:3, :3]) @ np.array(vol.shape)))
    assert np.max(np.abs(back.affine - vol.affine)) < 1e-9 * extent
    inv = np.linalg.inv(vol.affine)
    for ijk in itertools.product(*(range(s) for s in out.shape)):
        old = inv[:3, :3] @ world_of(out.affine, ijk) + inv[:3, 3]
        old_idx = tuple(np.rint(old).astype(int))
        assert np.max(np.abs(old - old_idx)) < 1e-9 * extent
        assert out.data[ijk] == vol.data[old_idx]


def test_reorient_is_noop_for_matching_orientation(phantom):
    assert reorient_volume(phantom.image) is phantom.image


def test_reorient_keeps_label_subclass_and_class_map(phantom):
    lab = phantom.segmentations["total"]
    out = reorient_volume(lab, "RAS")
    assert isinstance(out, LabelVolume)
    assert out.class_map_name == "total"
    assert np.array_equal(np.unique(out.data), np.unique(lab.data))


def test_require_orientation(phantom):
    require_orientation(phantom.image, DEFAULT_ORIENTATION)
    with pytest.raises(ValueError, match="reorient"):
        require_orientation(reorient_volume(phantom.image, "RAS"))


@settings(max_examples=30, deadline=None)
@given(st.sampled_from(ALL_AXCODES), st.integers(0, 2**32 - 1))
def test_reorient_preserves_voxel_volume_and_sum(target, seed):
    rng = np.random.default_rng(seed)
    vol = VolumeGrid(rng.normal(size=(3, 4, 5)), random_affine(rng))
    out = reorient_volume(vol, target)
    assert out.voxel_volume == pytest.approx(vol.voxel_volume, rel=1e-12)
    assert out.data.sum() == pytest.approx(vol.data.sum(), rel=1e-12)


def test_volume_grid_validation():
    with pytest.raises(ValueError):
        VolumeGrid(np.zeros((2, 2)), np.eye(4))
    with pytest.raises(ValueError):
        VolumeGrid(np.zeros((2, 2, 2)), np.eye(3))
    singular = np.eye(4)
    singular[2, 2] = 0
    with pytest.raises(ValueError):
        VolumeGrid(np.zeros((2, 2, 2)), singular)


def test_label_volume_validation():
    with pytest.raises(ValueError):
        LabelVolume(np.full((2, 2, 2), -1), np.eye(4))
    with pytest.raises(ValueError):
        LabelVolume(np.full((2, 2, 2), 0.5), np.eye(4))
    assert LabelVolume(np.full((2, 2, 2), 3.0), np.eye(4)).data.dtype.kind == "i"


def test_spacing_and_voxel_volume():
    aff = np.diag([2.0, 0.5, 3.0, 1.0])
    vol = VolumeGrid(np.zeros((2, 2, 2)), aff)
    assert np.allclose(vol.spacing, [2.0, 0.5, 3.0])
    assert vol.voxel_volume == pytest.approx(3.0)


@pytest.mark.parametrize("suffix", [".nii", ".nii.gz"])
def test_write_read_round_trip(tmp_path, rng, suffix):
    data = rng.integers(-1024, 3000, size=(4, 5, 6)).astype(np.int16)
    vol = VolumeGrid(data, random_affine(rng))
    p = tmp_path / f"v{suffix}"
    write_volume(vol, p)
    back = read_volume(p)
    assert back.data.dtype == np.int16
    assert np.array_equal(back.data, data)
    # NIfTI headers store the affine in float32
    assert np.allclose(back.affine, vol.affine, atol=1e-4)


def test_label_round_trip_keeps_class_map_name(tmp_path, phantom):
    p = tmp_path / "seg.nii.gz"
    write_volume(phantom.segmentations["body"], p)
    lab = read_label_volume(p, "body")
    assert lab.class_map_name == "body"
    assert np.array_equal(lab.data, phantom.segmentations["body"].data)


def test_read_errors(tmp_path):
    with pytest.raises(FileNotFoundError):
        read_volume(tmp_path / "missing.nii.gz")
    bad = tmp_path / "bad.nii.gz"
    bad.write_bytes(b"not a nifti file")
    with pytest.raises(MalformedVolumeError):
        read_volume(bad)
    four_d = tmp_path / "4d.nii"
    nib.save(nib.Nifti1Image(np.zeros((2, 2, 2, 2), np.int16), np.eye(4)), str(four_d))
    with pytest.raises(MalformedVolumeError):
        read_volume(four_d)
    rgb = tmp_path / "rgb.nii"
    arr = np.zeros((2, 2, 2), dtype=[("R", "u1"), ("G", "u1"), ("B", "u1")])
    nib.save(nib.Nifti1Image(arr, np.eye(4)), str(rgb))
    with pytest.raises(UnsupportedDatatypeError):
        read_volume(rgb)


def test_write_errors(tmp_path):
    vol = VolumeGrid(np.array([[[np.nan]]]), np.eye(4))
    with pytest.raises(ValueError):
        write_volume(vol, tmp_path / "nan.nii")
    with pytest.raises(PermissionError):
        write_volume(VolumeGrid(np.zeros((1, 1, 1)), np.eye(4)), tmp_path / "no" / "such" / "dir.nii")
