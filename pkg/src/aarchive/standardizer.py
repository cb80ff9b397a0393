"""Volume bounds, crop detection, bright-object/prosthesis detection and arm separation.

Everything here expects PLS+ volumes: axis 0 runs anterior to posterior,
axis 1 right to left, axis 2 inferior to superior. Bound failures are
reported as negative z indices (``-1`` cropped, ``-2`` missing) and, when a
ledger is passed, recorded in a :class:`DatasetTag`.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Optional, Sequence, Union

import numpy as np
from scipy import ndimage as ndi
from skimage import measure, morphology, segmentation

from .imageio import DEFAULT_ORIENTATION, LabelVolume, VolumeGrid, require_orientation
from .registry import ClassMap, load_class_map, normalize_anatomy_name, strip_side

__all__ = [
    "CROPPED",
    "MISSING",
    "SIDE_NAMES",
    "FARID_PREFILTER",
    "FARID_DERIVATIVE",
    "DatasetTag",
    "add_tag_to_data",
    "CropReport",
    "VolumeBounds",
    "ProsthesisResult",
    "ArmLegSeparation",
    "AmbiguousAnatomyError",
    "resolve_anatomy_labels",
    "masks_for_anatomy",
    "detect_mask_cropping",
    "bounds_from_masks",
    "define_volume_bounds_by_anatomies",
    "farid_gradient",
    "segment_bright_objects",
    "coronal_mip_above",
    "detect_hip_prosthesis",
    "separate_arms_and_legs",
]

CROPPED = -1
MISSING = -2

# (low end, high end) of each PLS+ axis
SIDE_NAMES = (("anterior", "posterior"), ("right", "left"), ("inferior", "superior"))
# in-plane axes of each MIP projection
_PLANES = {"sagittal": (0, 2), "coronal": (1, 2), "transverse": (0, 1)}

# 5-tap interpolator / first-derivative pair (Farid & Simoncelli, 2004)
FARID_PREFILTER = np.array([0.030320, 0.249724, 0.439911, 0.249724, 0.030320])
FARID_DERIVATIVE = np.array([0.104550, 0.292315, 0.0, -0.292315, -0.104550])


class AmbiguousAnatomyError(ValueError):
    pass


class DatasetTag(dict):
    """Nested ledger ``code -> severity -> [data_id, ...]``."""

    def add(self, code: str, data_id: str, severity: str = "Error") -> bool:
        if self.has(code, data_id):
            return False
        self.setdefault(code, {}).setdefault(severity, []).append(data_id)
        return True

    def has(self, code: str, data_id: str) -> bool:
        return any(data_id in ids for ids in self.get(code, {}).values())

    def codes_for(self, data_id: str) -> list[str]:
        return sorted(c for c in self if self.has(c, data_id))

    def merge(self, other: Mapping) -> None:
        for code, per_sev in other.items():
            for sev, ids in per_sev.items():
                for i in ids:
                    self.add(code, i, sev)

    def to_json(self) -> str:
        return json.dumps(self, indent=2, sort_keys=True)

    def save(self, path) -> None:
        Path(path).write_text(self.to_json() + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> "DatasetTag":
        tag = cls()
        tag.merge(json.loads(Path(path).read_text(encoding="utf-8")))
        return tag


def add_tag_to_data(tag: Optional[DatasetTag], code: str, data_id: str, severity: str = "Error") -> None:
    if tag is None:
        return
    if not isinstance(tag, DatasetTag):
        if tag.get(code) and any(data_id in ids for ids in tag[code].values()):
            return
        tag.setdefault(code, {}).setdefault(severity, []).append(data_id)
        return
    tag.add(code, data_id, severity)


@dataclass
class CropReport:
    planes: dict[str, tuple[str, ...]]

    @property
    def cropped(self) -> bool:
        return any(self.planes.values())

    @property
    def touched_sides(self) -> set[str]:
        return {s for sides in self.planes.values() for s in sides}

    def touched_axes(self) -> set[int]:
        sides = self.touched_sides
        return {ax for ax, names in enumerate(SIDE_NAMES) if sides & set(names)}


def _as_addon(crop_addon) -> np.ndarray:
    if crop_addon is None:
        return np.zeros(3, dtype=int)
    a = np.broadcast_to(np.asarray(crop_addon, dtype=int), (3,))
    if np.any(a < 0):
        raise ValueError("crop_addon must be non-negative")
    return a


def detect_mask_cropping(mask: np.ndarray, crop_addon=0) -> CropReport:
    """Check whether the mask's MIPs reach (or enter the addon band of) the image borders."""
    mask = np.asarray(mask).astype(bool, copy=False)
    if mask.ndim != 3 or min(mask.shape) == 0:
        raise ValueError(f"expected a non-degenerate 3D mask, got shape {mask.shape}")
    addon = _as_addon(crop_addon)
    planes = {}
    for plane, axes in _PLANES.items():
        normal = ({0, 1, 2} - set(axes)).pop()
        mip = mask.max(axis=normal)
        sides = []
        for k, ax in enumerate(axes):
            hit = np.flatnonzero(mip.any(axis=1 - k))
            if hit.size == 0:
                continue
            if hit[0] <= addon[ax]:
                sides.append(SIDE_NAMES[ax][0])
            if hit[-1] >= mask.shape[ax] - 1 - addon[ax]:
                sides.append(SIDE_NAMES[ax][1])
        planes[plane] = tuple(sides)
    return CropReport(planes)


@dataclass
class VolumeBounds:
    upper: int
    lower: int
    upper_name: str = ""
    lower_name: str = ""

    @property
    def valid(self) -> bool:
        return self.upper >= 0 and self.lower >= 0

    def as_dict(self) -> dict:
        return {"refObjUB": {"name": self.upper_name, "z": int(self.upper)},
                "refObjLB": {"name": self.lower_name, "z": int(self.lower)}}

    def error_codes(self) -> list[str]:
        out = []
        for role, z in (("UB", self.upper), ("LB", self.lower)):
            if z == CROPPED:
                out.append(f"refObj{role}Cropped")
            elif z == MISSING:
                out.append(f"refObj{role}Missing")
        return out


def resolve_anatomy_labels(name: str, class_map: ClassMap) -> dict[int, str]:
    """Class-map entries matching ``name`` exactly or as a left/right common string."""
    canonical = normalize_anatomy_name(name)
    merged = class_map.merged()
    exact = {k: v for k, v in merged.items() if v == canonical}
    if exact:
        return exact
    hits = {k: v for k, v in merged.items() if strip_side(v) == canonical and v != canonical}
    if not hits:
        raise KeyError(f"anatomy {name!r} not found in class map {class_map.task_name!r}")
    if len(hits) > 2:
        raise AmbiguousAnatomyError(
            f"common string {name!r} matches more than two anatomies: {sorted(hits.values())}")
    return hits


def masks_for_anatomy(name: str, masks: Mapping[str, np.ndarray]) -> list[np.ndarray]:
    canonical = normalize_anatomy_name(name)
    if canonical in masks:
        return [masks[canonical]]
    hits = [k for k in masks if strip_side(k) == canonical and k != canonical]
    if len(hits) > 2:
        raise AmbiguousAnatomyError(f"common string {name!r} matches more than two anatomies: {sorted(hits)}")
    return [masks[k] for k in sorted(hits)]


def _bound(parts: Sequence[np.ndarray], crop_addon, which: str) -> int:
    if not parts:
        return MISSING
    union = np.logical_or.reduce([np.asarray(p, dtype=bool) for p in parts])
    if not union.any():
        return MISSING
    if detect_mask_cropping(union, crop_addon).cropped:
        return CROPPED
    zs = np.flatnonzero(union.any(axis=(0, 1)))
    return int(zs[-1] if which == "upper" else zs[0])


def bounds_from_masks(masks: Mapping[str, np.ndarray], obj_ref: Mapping[str, str], crop_addon=0,
                      dataset_tag: Optional[DatasetTag] = None, data_id: str = "") -> VolumeBounds:
    """Bounds from named masks (absent names count as missing)."""
    ub, lb = obj_ref["refObjUB"], obj_ref["refObjLB"]
    bounds = VolumeBounds(
        upper=_bound(masks_for_anatomy(ub, masks), crop_addon, "upper"),
        lower=_bound(masks_for_anatomy(lb, masks), crop_addon, "lower"),
        upper_name=ub,
        lower_name=lb,
    )
    if bounds.valid and bounds.lower > bounds.upper:
        raise ValueError(f"lower bound z={bounds.lower} lies above upper bound z={bounds.upper}")
    for code in bounds.error_codes():
        add_tag_to_data(dataset_tag, code, data_id, "Error")
    return bounds


def define_volume_bounds_by_anatomies(labels: LabelVolume, obj_ref: Mapping[str, str], crop_addon=0,
                                      class_map: Optional[ClassMap] = None,
                                      dataset_tag: Optional[DatasetTag] = None,
                                      data_id: str = "") -> VolumeBounds:
    """Upper bound = top z of the ``refObjUB`` mask, lower bound = bottom z of ``refObjLB``.

    A name without side qualifier selects both sides (``"hip"`` covers
    ``hip_left`` and ``hip_right``); more than two matches is an error.
    """
    require_orientation(labels, DEFAULT_ORIENTATION)
    if class_map is None:
        class_map = load_class_map(labels.class_map_name or "total")
    masks = {}
    for role in ("refObjUB", "refObjLB"):
        for value, name in resolve_anatomy_labels(obj_ref[role], class_map).items():
            masks[name] = labels.data == value
    return bounds_from_masks(masks, obj_ref, crop_addon, dataset_tag, data_id)


def farid_gradient(img: np.ndarray) -> np.ndarray:
    """Gradient magnitude from separable 5-tap Farid derivative filters."""
    img = np.asarray(img, dtype=np.float64)
    gx = ndi.correlate1d(ndi.correlate1d(img, FARID_DERIVATIVE, axis=1, mode="reflect"),
                         FARID_PREFILTER, axis=0, mode="reflect")
    gy = ndi.correlate1d(ndi.correlate1d(img, FARID_DERIVATIVE, axis=0, mode="reflect"),
                         FARID_PREFILTER, axis=1, mode="reflect")
    return np.hypot(gx, gy)


def segment_bright_objects(img2d: np.ndarray, threshold: float = 1500.0, footprint_size: int = 3,
                           min_size: int = 4) -> np.ndarray:
    """Label bright objects in a 2D image.

    Farid gradient magnitude serves as the watershed landscape. Object markers
    are the regional maxima of the distance transform inside the thresholded
    bright region; everything away from it is background marker. The
    watershed result is cleaned with a binary opening and closing.
    """
    img = np.asarray(img2d, dtype=np.float64)
    if img.ndim != 2:
        raise ValueError("expected a 2D image")
    if not np.all(np.isfinite(img)):
        raise ValueError("image contains non-finite values")
    grad = farid_gradient(img)
    bright = ndi.binary_fill_holes(img > threshold)
    if not bright.any() or grad.max() == 0:
        return np.zeros(img.shape, dtype=np.int32)
    dist = ndi.distance_transform_edt(np.pad(bright, 1))[1:-1, 1:-1]
    peaks = morphology.h_maxima(dist, 1.0).astype(bool) & bright
    # components too thin for an h-maximum still get one marker
    comp, ncomp = ndi.label(bright)
    for i in np.setdiff1d(np.arange(1, ncomp + 1), np.unique(comp[peaks])):
        region = comp == i
        peaks[np.unravel_index(np.argmax(np.where(region, dist, -1)), dist.shape)] = True
    markers, nmark = ndi.label(peaks)
    background = ~ndi.binary_dilation(bright, iterations=2)
    markers[background] = nmark + 1
    ws = segmentation.watershed(grad, markers)
    ws[ws == nmark + 1] = 0
    fp = np.ones((footprint_size, footprint_size), dtype=bool)
    out = np.zeros(img.shape, dtype=np.int32)
    for lab in range(1, nmark + 1):
        obj = ws == lab
        if not obj.any():
            continue
        # edge padding lets objects continue past the image border (the bound plane is the last row)
        padded = np.pad(obj, footprint_size, mode="edge")
        padded = ndi.binary_closing(ndi.binary_opening(padded, fp), fp)
        obj = padded[footprint_size:-footprint_size, footprint_size:-footprint_size]
        obj &= out == 0
        if obj.sum() >= min_size:
            out[obj] = lab
    out, _, _ = segmentation.relabel_sequential(out)
    return out.astype(np.int32)


def coronal_mip_above(data: np.ndarray, lower_bound: int) -> np.ndarray:
    """Coronal MIP of ``data[:, :, lower_bound:]`` with superior up; the last row is the bound plane."""
    return np.flipud(np.max(data[:, :, lower_bound:], axis=0).T)


@dataclass
class ProsthesisResult:
    detected: bool
    prosthesis_labels: list[int]
    other_implant_labels: list[int]
    label_image: np.ndarray
    lower_bound: int
    areas_mm2: dict[int, float] = field(default_factory=dict)

    @property
    def prosthesis_mask(self) -> np.ndarray:
        return np.isin(self.label_image, self.prosthesis_labels)

    @property
    def bright_mask(self) -> np.ndarray:
        return self.label_image > 0


def detect_hip_prosthesis(vol: VolumeGrid, lower_bound: int, dataset_tag: Optional[DatasetTag] = None,
                          data_id: str = "", threshold: float = 1500.0,
                          min_area_mm2: float = 300.0) -> ProsthesisResult:
    """Find bright objects crossing the lower-bound plane in the coronal MIP.

    Objects touching the bottom row (the bound plane) whose projected area
    reaches ``min_area_mm2`` are prostheses; all other bright objects are
    reported as other implants.
    """
    require_orientation(vol, DEFAULT_ORIENTATION)
    k = vol.shape[2]
    if not 0 <= int(lower_bound) < k:
        raise ValueError(f"lower bound {lower_bound} outside z range [0, {k})")
    img = coronal_mip_above(vol.data, int(lower_bound))
    labels = segment_bright_objects(img, threshold=threshold)
    pixel_area = float(vol.spacing[1] * vol.spacing[2])
    bottom = set(np.unique(labels[-1])) - {0}
    prosthesis, others, areas = [], [], {}
    for lab in range(1, int(labels.max()) + 1):
        area = float((labels == lab).sum()) * pixel_area
        areas[lab] = area
        if lab in bottom and area >= min_area_mm2:
            prosthesis.append(lab)
        else:
            others.append(lab)
    detected = bool(prosthesis)
    if detected:
        add_tag_to_data(dataset_tag, "prosthesisDetected", data_id, "Warning")
    return ProsthesisResult(detected, prosthesis, others, labels, int(lower_bound), areas)


@dataclass
class ArmLegSeparation:
    arm_masks: list[np.ndarray]
    leg_masks: list[np.ndarray]
    trunk_cropped: bool
    trunk_crop: CropReport
    trunk_shape: tuple = ()

    @property
    def arms(self) -> np.ndarray:
        return _union(self.arm_masks, self.trunk_shape)

    @property
    def legs(self) -> np.ndarray:
        return _union(self.leg_masks, self.trunk_shape)


def _union(masks, shape):
    if not masks:
        return np.zeros(shape, dtype=bool)
    return np.logical_or.reduce(masks)


def separate_arms_and_legs(body_labels: Union[LabelVolume, np.ndarray],
                           arm_bones: Union[Sequence[np.ndarray], Mapping[str, np.ndarray]],
                           bounds: VolumeBounds, crop_addon=0) -> ArmLegSeparation:
    """Split the extremities (label 2) into arms and legs using arm-bone overlap.

    Also reports whether the trunk (label 1) between the bounds touches the
    lateral, anterior or posterior image borders.
    """
    if isinstance(body_labels, VolumeGrid):
        require_orientation(body_labels, DEFAULT_ORIENTATION)
        data = body_labels.data
    else:
        data = np.asarray(body_labels)
    if not bounds.valid:
        raise ValueError("arm/leg separation needs valid volume bounds")
    bones = list(arm_bones.values()) if isinstance(arm_bones, Mapping) else list(arm_bones)
    bone_union = _union([np.asarray(b, dtype=bool) for b in bones], data.shape)
    comps = measure.label(data == 2, connectivity=3)
    arms, legs = [], []
    for lab in range(1, int(comps.max()) + 1):
        comp = comps == lab
        (arms if np.any(comp & bone_union) else legs).append(comp)
    trunk = data == 1
    trunk_zone = np.zeros_like(trunk)
    trunk_zone[:, :, bounds.lower:bounds.upper + 1] = trunk[:, :, bounds.lower:bounds.upper + 1]
    if trunk_zone.any():
        report = detect_mask_cropping(trunk_zone, crop_addon)
        report = CropReport({p: tuple(s for s in sides if s not in SIDE_NAMES[2])
                             for p, sides in report.planes.items()})
    else:
        report = CropReport({p: () for p in _PLANES})
    return ArmLegSeparation(arms, legs, report.cropped, report, trunk_shape=data.shape)
