"""Volume input/output and orientation handling.

Volumes are carried around as :class:`VolumeGrid` objects, a plain pairing of
a 3D array with the 4x4 voxel-to-world affine. The working orientation of the
whole package is PLS+ (x toward posterior, y toward the patient's left, z
toward superior). Reorientation never resamples, it only permutes and flips
axes, so voxel values are preserved exactly.
"""
from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import nibabel as nib
import numpy as np
from nibabel import orientations as nio

__all__ = [
    "DEFAULT_ORIENTATION",
    "VolumeGrid",
    "LabelVolume",
    "VolumeIOError",
    "MalformedVolumeError",
    "UnsupportedDatatypeError",
    "read_volume",
    "read_label_volume",
    "write_volume",
    "orientation_from_affine",
    "validate_axcodes",
    "reorient_volume",
    "require_orientation",
]

DEFAULT_ORIENTATION: tuple[str, str, str] = ("P", "L", "S")

_AXIS_PAIRS = (("L", "R"), ("P", "A"), ("I", "S"))
_SUPPORTED_KINDS = "biuf"


class VolumeIOError(Exception):
    """Base class for volume reading/writing failures."""


class MalformedVolumeError(VolumeIOError):
    """The file exists but is not a readable NIfTI-1 image."""


class UnsupportedDatatypeError(VolumeIOError):
    """The voxel datatype cannot be represented as a real scalar field."""


@dataclass(eq=False)
class VolumeGrid:
    """A 3D scalar field with its voxel-index to world-mm affine."""

    data: np.ndarray
    affine: np.ndarray

    def __post_init__(self):
        self.data = np.asarray(self.data)
        self.affine = np.asarray(self.affine, dtype=np.float64)
        if self.data.ndim != 3:
            raise ValueError(f"expected a 3D array, got shape {self.data.shape}")
        if self.affine.shape != (4, 4):
            raise ValueError(f"affine must be 4x4, got {self.affine.shape}")
        if abs(np.linalg.det(self.affine[:3, :3])) < 1e-12:
            raise ValueError("affine has a singular 3x3 block")

    @property
    def spacing(self) -> np.ndarray:
        return np.linalg.norm(self.affine[:3, :3], axis=0)

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.data.shape

    @property
    def voxel_volume(self) -> float:
        """Volume of one voxel in mm^3."""
        return float(np.prod(self.spacing))

    @property
    def axcodes(self) -> tuple[str, str, str]:
        return orientation_from_affine(self.affine)


@dataclass(eq=False)
class LabelVolume(VolumeGrid):
    """Integer label map; 0 is background, other values index ``class_map_name``."""

    class_map_name: str = ""

    def __post_init__(self):
        super().__post_init__()
        if self.data.dtype.kind not in "iub":
            if not np.all(np.equal(np.mod(self.data, 1), 0)):
                raise ValueError("label volume contains non-integer values")
            self.data = self.data.astype(np.int32)
        if self.data.size and self.data.min() < 0:
            raise ValueError("label volume contains negative labels")

    @property
    def labels(self) -> np.ndarray:
        return self.data


def _load_nifti(path):
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"no such volume: {path}")
    try:
        img = nib.Nifti1Image.from_filename(str(path))
    except Exception as exc:  # nibabel raises a zoo of exception types
        raise MalformedVolumeError(f"{path}: {exc}") from exc
    dtype = img.get_data_dtype()
    if dtype.kind not in _SUPPORTED_KINDS or dtype.fields is not None:
        raise UnsupportedDatatypeError(f"{path}: unsupported datatype {dtype}")
    if len(img.shape) != 3:
        raise MalformedVolumeError(f"{path}: expected a 3D image, got shape {img.shape}")
    return img


def read_volume(path) -> VolumeGrid:
    """Read a NIfTI-1 file (``.nii`` or ``.nii.gz``).

    The sform affine is used when its code is set, otherwise the qform.
    Scale slope/intercept are applied; unscaled integer data keep their dtype.
    """
    img = _load_nifti(path)
    try:
        data = np.asanyarray(img.dataobj)
    except Exception as exc:
        raise MalformedVolumeError(f"{path}: {exc}") from exc
    return VolumeGrid(np.asarray(data), img.affine.copy())


def read_label_volume(path, class_map_name: str = "") -> LabelVolume:
    vol = read_volume(path)
    return LabelVolume(vol.data, vol.affine, class_map_name=class_map_name)


def write_volume(vol: VolumeGrid, path) -> None:
    """Write ``vol`` as little-endian NIfTI-1; ``.gz`` suffix selects compression."""
    data = np.asarray(vol.data)
    if data.dtype.kind == "b":
        data = data.astype(np.uint8)
    if data.dtype.kind == "f" and not np.all(np.isfinite(data)):
        raise ValueError("cannot write non-finite voxel data")
    data = data.astype(data.dtype.newbyteorder("<"), copy=False)
    img = nib.Nifti1Image(data, vol.affine)
    img.header.set_data_dtype(data.dtype)
    img.set_sform(vol.affine, code=1)
    img.set_qform(vol.affine, code=1)
    path = Path(path)
    parent = path.parent if str(path.parent) else Path(".")
    if not parent.exists() or not os.access(parent, os.W_OK):
        raise PermissionError(f"cannot write to {path}")
    nib.save(img, str(path))


def validate_axcodes(codes: Sequence[str]) -> tuple[str, str, str]:
    """Normalize and check an axis-code triple such as ``"PLS"`` or ``("R", "A", "S")``."""
    if isinstance(codes, str):
        codes = codes.rstrip("+")
    codes = tuple(str(c).upper() for c in codes)
    if len(codes) != 3:
        raise ValueError(f"need three axis codes, got {codes!r}")
    used = []
    for c in codes:
        pair = [i for i, p in enumerate(_AXIS_PAIRS) if c in p]
        if not pair:
            raise ValueError(f"invalid axis code {c!r}")
        used.append(pair[0])
    if sorted(used) != [0, 1, 2]:
        raise ValueError(f"axis codes {codes!r} do not cover L/R, P/A and I/S exactly once")
    return codes  # type: ignore[return-value]


def orientation_from_affine(affine: np.ndarray) -> tuple[str, str, str]:
    """Anatomical direction toward which each voxel axis increases."""
    affine = np.asarray(affine, dtype=np.float64)
    if abs(np.linalg.det(affine[:3, :3])) < 1e-12:
        raise ValueError("affine has a singular 3x3 block")
    return tuple(nio.ornt2axcodes(nio.io_orientation(affine)))


def reorient_volume(vol: VolumeGrid, target: Sequence[str] = DEFAULT_ORIENTATION) -> VolumeGrid:
    """Permute/flip ``vol`` so that its axes point along ``target``.

    World coordinates of every voxel are preserved. If ``vol`` is already in
    the target orientation it is returned unchanged.
    """
    target = validate_axcodes(target)
    current = nio.io_orientation(vol.affine)
    if tuple(nio.ornt2axcodes(current)) == target:
        return vol
    transform = nio.ornt_transform(current, nio.axcodes2ornt(target))
    data = np.ascontiguousarray(nio.apply_orientation(vol.data, transform))
    affine = vol.affine @ nio.inv_ornt_aff(transform, vol.data.shape)
    return dataclasses.replace(vol, data=data, affine=affine)


def require_orientation(vol: VolumeGrid, target: Sequence[str] = DEFAULT_ORIENTATION) -> None:
    target = validate_axcodes(target)
    if vol.axcodes != target:
        raise ValueError(
            f"volume orientation {''.join(vol.axcodes)} != required {''.join(target)}; "
            "call reorient_volume first"
        )
