"""CT windowing, MIP control images and voxel-feature overlays.

Images are composed as uint8 RGBA arrays and written with Pillow, so the
same inputs always give the same PNG bytes.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np
from PIL import Image
from skimage import measure

from .imageio import DEFAULT_ORIENTATION, VolumeGrid, require_orientation
from .registry import AnatomyGraph, default_graph, expand_selection
from .standardizer import ArmLegSeparation, ProsthesisResult, VolumeBounds

__all__ = [
    "WindowSetting",
    "DEFAULT_WINDOWS",
    "COLORS",
    "apply_window",
    "select_window_for_anatomy",
    "mip",
    "z_to_row",
    "ControlImageSpec",
    "compose_control_image",
    "render_control_image",
    "render_feature_overlay",
    "save_png",
    "plot_robustness",
]


@dataclass(frozen=True)
class WindowSetting:
    width: float
    level: float

    def __post_init__(self):
        if not self.width > 0:
            raise ValueError(f"window width must be > 0, got {self.width}")

    @property
    def display_min(self) -> float:
        return self.level - self.width / 2

    @property
    def display_max(self) -> float:
        return self.level + self.width / 2


DEFAULT_WINDOWS = {
    "lung": WindowSetting(1500, -600),
    "soft_tissue": WindowSetting(350, 50),
    "bone": WindowSetting(1800, 400),
}

COLORS = {
    "bounds": (255, 0, 0),
    "prosthesis": (255, 255, 0),
    "body_crop": (255, 0, 255),
    "arms": ((255, 255, 0), (255, 0, 255)),
    "central_plane": (0, 255, 0),
}

# projection axis and the two remaining axes (columns, rows before flipping)
_PLANE_AXES = {"sagittal": 1, "coronal": 0, "transverse": 2}


def apply_window(values, w: WindowSetting) -> np.ndarray:
    """Linearly map [level - width/2, level + width/2] to [0, 1], clamping outside."""
    v = np.asarray(values, dtype=np.float64)
    return np.clip((v - w.display_min) / w.width, 0.0, 1.0)


def select_window_for_anatomy(names: Union[str, Sequence[str]], graph: Optional[AnatomyGraph] = None) -> WindowSetting:
    """Window for the top category of the selection; mixed categories get the soft-tissue window."""
    g = default_graph() if graph is None else graph
    leaves = expand_selection(g, names)
    if not leaves:
        raise KeyError(f"cannot resolve anatomy selection {names!r}")
    cats = {g.top_category(leaf) for leaf in leaves}
    if len(cats) == 1:
        return DEFAULT_WINDOWS[cats.pop()]
    return DEFAULT_WINDOWS["soft_tissue"]


def mip(data, plane: str = "coronal") -> np.ndarray:
    """MIP for display: superior at the top for coronal and sagittal planes."""
    if plane not in _PLANE_AXES:
        raise ValueError(f"plane must be one of {sorted(_PLANE_AXES)}")
    proj = np.asarray(data).max(axis=_PLANE_AXES[plane])
    return proj if plane == "transverse" else np.flipud(proj.T)


def z_to_row(z: int, n_slices: int) -> int:
    return n_slices - 1 - int(z)


@dataclass
class ControlImageSpec:
    plane: str = "coronal"
    bounds: Optional[VolumeBounds] = None
    prosthesis: Optional[ProsthesisResult] = None
    body_crop_mask: Optional[np.ndarray] = None
    arms: Optional[ArmLegSeparation] = None
    central_plane: Optional[int] = None
    window: Optional[WindowSetting] = None

    def resolved_plane(self) -> str:
        if self.plane != "auto":
            return self.plane
        # a trunk cut off anteriorly or posteriorly only shows in the sagittal view
        if self.arms is not None and 0 in self.arms.trunk_crop.touched_axes():
            return "sagittal"
        return "coronal"


def _dash(n, on=6, off=4):
    return (np.arange(n) % (on + off)) < on


def _dash_dot(n):
    i = np.arange(n) % 12
    return (i < 6) | (i == 8)


def _hline(rgb, row, color, pattern=None):
    if not 0 <= row < rgb.shape[0]:
        raise ValueError(f"overlay row {row} outside the image")
    cols = np.arange(rgb.shape[1]) if pattern is None else np.flatnonzero(pattern(rgb.shape[1]))
    rgb[row, cols] = color


def _contours(rgb, mask2d, color, pattern):
    for c in measure.find_contours(mask2d.astype(np.float64), 0.5):
        pts = np.rint(c).astype(int)
        pts = pts[pattern(len(pts))]
        rgb[np.clip(pts[:, 0], 0, rgb.shape[0] - 1), np.clip(pts[:, 1], 0, rgb.shape[1] - 1)] = color


def compose_control_image(vol: VolumeGrid, spec: ControlImageSpec) -> np.ndarray:
    """RGBA uint8 control image with the requested overlays."""
    require_orientation(vol, DEFAULT_ORIENTATION)
    plane = spec.resolved_plane()
    img = mip(vol.data, plane).astype(np.float64)
    window = spec.window or DEFAULT_WINDOWS["bone"]
    lo, hi = window.display_min, window.display_max
    bright = None
    if spec.prosthesis is not None and spec.prosthesis.label_image.any() and plane == "coronal":
        bright = np.zeros(img.shape, dtype=bool)
        bright[:spec.prosthesis.label_image.shape[0]] = spec.prosthesis.bright_mask
        rest = img[~bright]
        if rest.size:
            hi = max(float(np.percentile(rest, 99.5)), lo + 1.0)
    gray = np.round(np.clip((img - lo) / (hi - lo), 0, 1) * 255).astype(np.uint8)
    rgb = np.repeat(gray[..., None], 3, axis=2)
    k = vol.shape[2]

    if spec.prosthesis is not None and plane == "coronal":
        pm = np.zeros(img.shape, dtype=bool)
        pm[:spec.prosthesis.label_image.shape[0]] = spec.prosthesis.prosthesis_mask
        rgb[pm] = COLORS["prosthesis"]
    if spec.body_crop_mask is not None:
        _contours(rgb, mip(spec.body_crop_mask, plane), COLORS["body_crop"], _dash_dot)
    if spec.arms is not None:
        for i, arm in enumerate(spec.arms.arm_masks):
            _contours(rgb, mip(arm, plane), COLORS["arms"][i % 2], lambda n: np.ones(n, bool))
    if spec.bounds is not None and spec.bounds.valid and plane != "transverse":
        for z in (spec.bounds.upper, spec.bounds.lower):
            _hline(rgb, z_to_row(z, k), COLORS["bounds"], _dash)
    if spec.central_plane is not None and plane != "transverse":
        _hline(rgb, z_to_row(spec.central_plane, k), COLORS["central_plane"])
    alpha = np.full(gray.shape + (1,), 255, dtype=np.uint8)
    return np.concatenate([rgb, alpha], axis=2)


def save_png(rgba: np.ndarray, path) -> Path:
    path = Path(path)
    if not path.parent.exists():
        raise FileNotFoundError(f"output directory {path.parent} does not exist")
    Image.fromarray(np.ascontiguousarray(rgba, dtype=np.uint8), "RGBA").save(path, format="PNG")
    return path


def render_control_image(vol: VolumeGrid, spec: ControlImageSpec, path) -> Path:
    return save_png(compose_control_image(vol, spec), path)


def render_feature_overlay(fmap, mask, slice_index: int, axis: int = 2) -> np.ndarray:
    """Float RGBA slice: red holds masked values scaled to 1..255 (divided by 255), alpha the mask.

    The scaling uses the masked range of the whole volume; a constant map is
    drawn at 1/255.
    """
    f = np.asarray(fmap, dtype=np.float64)
    m = np.asarray(mask, dtype=bool)
    if f.shape != m.shape:
        raise ValueError(f"feature map shape {f.shape} != mask shape {m.shape}")
    m_slice = np.take(m, slice_index, axis=axis)
    if not m_slice.any():
        raise ValueError(f"mask is empty on slice {slice_index}")
    vals = f[m]
    vmin, vmax = vals.min(), vals.max()
    f_slice = np.take(f, slice_index, axis=axis)
    if vmax > vmin:
        scaled = (f_slice - vmin) / (vmax - vmin) * 254 + 1
    else:
        scaled = np.ones_like(f_slice)
    out = np.zeros(f_slice.shape + (4,))
    out[..., 0] = np.where(m_slice, scaled / 255, 0.0)
    out[..., 3] = m_slice
    return out


def plot_robustness(results, path) -> Path:
    """Box plot of per-feature OCCC values for the mode and the baseline."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    res = results
    feats = list(res.occc)
    fig, ax = plt.subplots(figsize=(max(6, len(feats) * 0.6), 4))
    pos = np.arange(len(feats)) * 3.0
    ax.boxplot([res.baseline[f][np.isfinite(res.baseline[f])] for f in feats], positions=pos, widths=0.8)
    if res.mode != "baseline":
        bp = ax.boxplot([res.occc[f][np.isfinite(res.occc[f])] for f in feats], positions=pos + 1,
                        widths=0.8, patch_artist=True)
        for patch in bp["boxes"]:
            patch.set_hatch("//")
    ax.set_xticks(pos + 0.5, feats, rotation=60, ha="right")
    ax.set_ylabel("OCCC")
    ax.set_title(f"baseline vs {res.mode}")
    fig.tight_layout()
    fig.savefig(path, format="png", metadata={"Software": None})
    plt.close(fig)
    return Path(path)
