"""Voxel-based first-order radiomic features.

For every voxel of a VOI the features are computed over its Chebyshev
neighbourhood of radius ``kernel_radius`` (optionally restricted to the VOI).
Entropy and uniformity use a fixed bin width anchored at the neighbourhood
minimum; all other features use the raw intensities. Percentiles interpolate
linearly between order statistics.

Total energy is not produced: it is energy times the voxel volume.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from typing import Mapping, Optional, Sequence

import numpy as np
import yaml

__all__ = [
    "FIRST_ORDER_FEATURES",
    "ExtractionParams",
    "VoxelFeatureMaps",
    "FeatureMapStack",
    "first_order_features",
    "neighborhood_offsets",
    "extract_voxel_features",
    "build_feature_stack",
    "mask_bounding_box",
    "reconstruct_global_feature_map",
    "export_feature_csv",
]

FIRST_ORDER_FEATURES = (
    "Energy",
    "Mean",
    "Median",
    "Variance",
    "Skewness",
    "Kurtosis",
    "Entropy",
    "Uniformity",
    "Minimum",
    "Maximum",
    "Range",
    "10Percentile",
    "90Percentile",
    "InterquartileRange",
    "MeanAbsoluteDeviation",
    "RobustMeanAbsoluteDeviation",
    "RootMeanSquared",
)

# caps the gathered (voxels x neighbours) block; results do not depend on it
_MAX_BLOCK_ELEMENTS = 2_000_000


@dataclass(frozen=True)
class ExtractionParams:
    bin_width: float = 25.0
    kernel_radius: int = 1
    masked_kernel: bool = True
    init_value: float = 0.0
    voxel_batch: int = 10000

    def __post_init__(self):
        if not self.bin_width > 0:
            raise ValueError(f"bin_width must be > 0, got {self.bin_width}")
        if int(self.kernel_radius) != self.kernel_radius or self.kernel_radius < 1:
            raise ValueError(f"kernel_radius must be an integer >= 1, got {self.kernel_radius}")
        if self.init_value is None or (isinstance(self.init_value, float) and math.isnan(self.init_value)):
            object.__setattr__(self, "init_value", 0.0)
        if not math.isfinite(self.init_value):
            raise ValueError("init_value must be finite")

    @classmethod
    def from_mapping(cls, doc: Mapping) -> "ExtractionParams":
        """Build from a pyradiomics-style parameter document.

        Only the ``Original`` image type and the ``firstorder`` class are
        supported.
        """
        image_types = doc.get("imageType") or {"Original": {}}
        if set(image_types) - {"Original"}:
            raise ValueError(f"unsupported image types: {sorted(set(image_types) - {'Original'})}")
        classes = doc.get("featureClass") or {"firstorder": None}
        if set(classes) - {"firstorder"}:
            raise ValueError(f"unsupported feature classes: {sorted(set(classes) - {'firstorder'})}")
        setting = doc.get("setting") or {}
        voxel = doc.get("voxelSetting") or {}
        init = voxel.get("initValue", 0)
        if isinstance(init, str) and init.lower() == "nan":
            init = float("nan")
        return cls(
            bin_width=float(setting.get("binWidth", 25)),
            kernel_radius=int(voxel.get("kernelRadius", 1)),
            masked_kernel=bool(voxel.get("maskedKernel", True)),
            init_value=float(init),
            voxel_batch=int(voxel.get("voxelBatch", 10000)),
        )

    @classmethod
    def from_yaml(cls, path) -> "ExtractionParams":
        with open(path, encoding="utf-8") as fh:
            return cls.from_mapping(yaml.safe_load(fh) or {})


def neighborhood_offsets(radius: int) -> np.ndarray:
    r = np.arange(-radius, radius + 1)
    return np.stack(np.meshgrid(r, r, r, indexing="ij"), axis=-1).reshape(-1, 3)


def _percentile(sorted_vals, n, q):
    pos = (q / 100.0) * (n - 1)
    lo = np.floor(pos).astype(np.int64)
    hi = np.minimum(lo + 1, n - 1)
    frac = pos - lo
    rows = np.arange(sorted_vals.shape[0])
    a = sorted_vals[rows, lo]
    b = sorted_vals[rows, hi]
    return a + (b - a) * frac


def _row_sum(a: np.ndarray) -> np.ndarray:
    # fixed left-to-right order, so a row's sum does not depend on how many rows share the block
    a = np.asarray(a, dtype=np.float64)
    acc = np.zeros(a.shape[0])
    for j in range(a.shape[1]):
        acc += a[:, j]
    return acc


def first_order_features(values: np.ndarray, bin_width: float) -> dict[str, np.ndarray]:
    """First-order features of each row of ``values``; NaN entries are ignored.

    Every row must contain at least one finite value.
    """
    vals = np.sort(np.asarray(values, dtype=np.float64), axis=1)
    valid = ~np.isnan(vals)
    n = valid.sum(axis=1)
    if np.any(n == 0):
        raise ValueError("empty neighbourhood")
    rows = np.arange(vals.shape[0])
    x = np.where(valid, vals, 0.0)
    nf = n.astype(np.float64)

    mean = _row_sum(x) / nf
    dev = np.where(valid, vals - mean[:, None], 0.0)
    dev2 = dev * dev
    m2 = _row_sum(dev2) / nf
    m3 = _row_sum(dev2 * dev) / nf
    m4 = _row_sum(dev2 * dev2) / nf
    flat = m2 == 0
    safe_m2 = np.where(flat, 1.0, m2)
    energy = _row_sum(x * x)

    vmin = vals[:, 0]
    vmax = vals[rows, n - 1]
    p10 = _percentile(vals, n, 10)
    p25 = _percentile(vals, n, 25)
    p50 = _percentile(vals, n, 50)
    p75 = _percentile(vals, n, 75)
    p90 = _percentile(vals, n, 90)

    inner = valid & (vals >= p10[:, None]) & (vals <= p90[:, None])
    n_inner = inner.sum(axis=1).astype(np.float64)
    mean_inner = _row_sum(np.where(inner, vals, 0.0)) / n_inner
    rmad = _row_sum(np.where(inner, np.abs(vals - mean_inner[:, None]), 0.0)) / n_inner

    bins = np.where(valid, np.floor((vals - vmin[:, None]) / bin_width), -1.0)
    starts = valid.copy()
    starts[:, 1:] &= bins[:, 1:] != bins[:, :-1]
    run = np.cumsum(starts, axis=1) - 1
    width = vals.shape[1]
    flat_idx = (rows[:, None] * width + run)[valid]
    counts = np.bincount(flat_idx, minlength=vals.shape[0] * width).reshape(vals.shape[0], width)
    p = counts / nf[:, None]
    logp = np.log2(np.where(p > 0, p, 1.0))
    entropy = -_row_sum(p * logp)
    uniformity = _row_sum(p * p)

    return {
        "Energy": energy,
        "Mean": mean,
        "Median": p50,
        "Variance": m2,
        "Skewness": np.where(flat, 0.0, m3 / safe_m2 ** 1.5),
        "Kurtosis": np.where(flat, 0.0, m4 / safe_m2 ** 2),
        "Entropy": entropy + 0.0,
        "Uniformity": uniformity,
        "Minimum": vmin,
        "Maximum": vmax,
        "Range": vmax - vmin,
        "10Percentile": p10,
        "90Percentile": p90,
        "InterquartileRange": p75 - p25,
        "MeanAbsoluteDeviation": _row_sum(np.abs(dev)) / nf,
        "RobustMeanAbsoluteDeviation": rmad,
        "RootMeanSquared": np.sqrt(energy / nf),
    }


@dataclass(eq=False)
class VoxelFeatureMaps:
    """Feature vectors over the voxels of one VOI (rows follow ``coords``)."""

    label: int
    coords: np.ndarray
    shape: tuple
    features: dict[str, np.ndarray]
    params: ExtractionParams

    @property
    def n_voxels(self) -> int:
        return len(self.coords)

    def to_dense(self, feature: str, fill: Optional[float] = None) -> np.ndarray:
        fill = self.params.init_value if fill is None else fill
        out = np.full(self.shape, fill, dtype=np.float64)
        out[tuple(self.coords.T)] = self.features[feature]
        return out


def _extract_one(image, voi, params: ExtractionParams, bin_width: float):
    coords = np.argwhere(voi)
    if len(coords) == 0:
        raise ValueError("empty VOI")
    offsets = neighborhood_offsets(int(params.kernel_radius))
    shape = np.asarray(image.shape)
    batch = params.voxel_batch if params.voxel_batch and params.voxel_batch > 0 else len(coords)
    block = max(1, min(batch, _MAX_BLOCK_ELEMENTS // len(offsets)))
    parts: list[dict] = []
    for start in range(0, len(coords), batch):
        stop = min(start + batch, len(coords))
        for s in range(start, stop, block):
            c = coords[s:min(s + block, stop)]
            idx = c[:, None, :] + offsets[None, :, :]
            inside = np.all((idx >= 0) & (idx < shape), axis=2)
            idx = np.clip(idx, 0, shape - 1)
            where = (idx[..., 0], idx[..., 1], idx[..., 2])
            vals = image[where].astype(np.float64)
            keep = inside & voi[where] if params.masked_kernel else inside
            parts.append(first_order_features(np.where(keep, vals, np.nan), bin_width))
    feats = {k: np.concatenate([p[k] for p in parts]) for k in FIRST_ORDER_FEATURES}
    return coords, feats


def extract_voxel_features(image, mask, params: ExtractionParams,
                           selected_labels: Optional[Sequence[int]] = None,
                           preset_bin_widths: Optional[Sequence[float]] = None) -> dict[int, VoxelFeatureMaps]:
    """Voxel feature maps for each selected label of ``mask``.

    ``preset_bin_widths`` gives one bin width per label; when omitted the
    parameter bin width is used for every label.
    """
    data = np.asarray(getattr(image, "data", image))
    lab = np.asarray(getattr(mask, "data", mask))
    if data.shape != lab.shape or data.ndim != 3:
        raise ValueError(f"image shape {data.shape} and mask shape {lab.shape} must match and be 3D")
    if selected_labels is None:
        selected_labels = [1] if lab.dtype == bool else sorted(int(v) for v in np.unique(lab) if v != 0)
    selected_labels = list(selected_labels)
    if preset_bin_widths is None:
        preset_bin_widths = [params.bin_width] * len(selected_labels)
    preset_bin_widths = list(preset_bin_widths)
    if len(preset_bin_widths) != len(selected_labels):
        raise ValueError("selected_labels and preset_bin_widths must have equal length")
    out = {}
    for label, width in zip(selected_labels, preset_bin_widths):
        if not width > 0:
            raise ValueError(f"bin width must be > 0, got {width}")
        voi = lab.astype(bool) if lab.dtype == bool else lab == label
        if not voi.any():
            raise ValueError(f"label {label} not present in mask")
        p = replace(params, bin_width=float(width))
        coords, feats = _extract_one(data, voi, p, float(width))
        out[int(label)] = VoxelFeatureMaps(int(label), coords, data.shape, feats, p)
    return out


@dataclass(eq=False)
class FeatureMapStack:
    """The same VOI's feature vectors extracted under several conditions."""

    conditions: dict[str, dict[str, np.ndarray]]
    coords: np.ndarray
    shape: tuple
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.coords = np.asarray(self.coords, dtype=np.int64).reshape(-1, 3)
        n = len(self.coords)
        if n < 2:
            raise ValueError("a feature stack needs at least two voxels")
        for cond, feats in self.conditions.items():
            for name, vec in feats.items():
                if np.shape(vec) != (n,):
                    raise ValueError(f"{cond}/{name}: expected length {n}, got {np.shape(vec)}")

    @property
    def n_voxels(self) -> int:
        return len(self.coords)

    @property
    def condition_ids(self) -> list[str]:
        return list(self.conditions)

    @property
    def feature_names(self) -> list[str]:
        first = next(iter(self.conditions.values()), {})
        return [f for f in first if all(f in c for c in self.conditions.values())]

    def vector(self, condition: str, feature: str) -> np.ndarray:
        return np.asarray(self.conditions[condition][feature], dtype=np.float64)

    def matrix(self, feature: str, conditions: Optional[Sequence[str]] = None) -> np.ndarray:
        """Voxels x conditions matrix of one feature."""
        conditions = self.condition_ids if conditions is None else list(conditions)
        return np.column_stack([self.vector(c, feature) for c in conditions])


def build_feature_stack(image, mask, target_param: str, target_range: Sequence,
                        base_params: Optional[ExtractionParams] = None, label: int = 1,
                        bin_width: Optional[float] = None) -> FeatureMapStack:
    """Extract one label's features once per value of ``target_param``."""
    base = ExtractionParams() if base_params is None else base_params
    if target_param not in ExtractionParams.__dataclass_fields__:
        raise ValueError(f"unknown extraction parameter {target_param!r}")
    conditions = {}
    coords = None
    for value in target_range:
        p = replace(base, **{target_param: value})
        widths = None if bin_width is None else [bin_width]
        maps = extract_voxel_features(image, mask, p, [label], widths)[label]
        coords = maps.coords if coords is None else coords
        conditions[f"{target_param}={value}"] = maps.features
    lab = np.asarray(getattr(mask, "data", mask))
    return FeatureMapStack(conditions, coords, lab.shape,
                           meta={"target_param": target_param, "target_range": list(target_range),
                                 "label": label})


def mask_bounding_box(mask) -> tuple[tuple[int, int, int], tuple[int, int, int]]:
    """(origin, extent) of the tight bounding box of a non-empty mask."""
    coords = np.argwhere(np.asarray(mask))
    if len(coords) == 0:
        raise ValueError("empty mask has no bounding box")
    lo = coords.min(axis=0)
    ext = coords.max(axis=0) - lo + 1
    return tuple(int(v) for v in lo), tuple(int(v) for v in ext)


def reconstruct_global_feature_map(fmap_cropped: np.ndarray, mask_bbox, kernel_radius: int,
                                   full_shape) -> np.ndarray:
    """Place a bounding-box feature map (padded by the kernel radius) into a zero volume."""
    origin, extent = mask_bbox
    origin = np.asarray(origin, dtype=int)
    extent = np.asarray(extent, dtype=int)
    ks = int(kernel_radius)
    fmap_cropped = np.asarray(fmap_cropped)
    expected = tuple(int(e) + 2 * ks for e in extent)
    if fmap_cropped.shape != expected:
        raise ValueError(f"cropped map shape {fmap_cropped.shape} != bbox extent + 2*radius {expected}")
    if np.any(origin < 0) or np.any(origin + extent > np.asarray(full_shape)):
        raise ValueError("bounding box exceeds the full volume")
    out = np.zeros(tuple(full_shape), dtype=np.result_type(fmap_cropped.dtype, np.float64))
    inner = tuple(slice(ks, ks + int(e)) for e in extent)
    target = tuple(slice(int(o), int(o) + int(e)) for o, e in zip(origin, extent))
    out[target] = fmap_cropped[inner]
    return out


def export_feature_csv(stack: FeatureMapStack, path, features: Optional[Sequence[str]] = None) -> None:
    """One row per voxel and condition: x, y, z, features..., condition."""
    features = stack.feature_names if features is None else list(features)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["x", "y", "z", *features, "condition"])
        for cond in stack.condition_ids:
            cols = [stack.vector(cond, f) for f in features]
            for i, (x, y, z) in enumerate(stack.coords):
                w.writerow([int(x), int(y), int(z), *(repr(float(c[i])) for c in cols), cond])
