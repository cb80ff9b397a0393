"""Sparse mask encoding and the ``.aarc`` archive container.

A mask with J foreground voxels is stored as J x 3 coordinates instead of the
full M x N x K array; the shape is kept alongside so the dense mask can be
rebuilt. Gray values at the coordinates (int16 HU) and the minimum HU of the
source image as fill value allow the masked HU volume to be restored.

Container layout (MessagePack map)::

    {"schema_version": 1,
     "shape": [M, N, K],
     "masks": {name: {"encoding": "coo" | "bitmap", "n": J, "coords": <u32 LE>,
                      "values": <i16 LE>?, "fill_value": int?}},
     "graph": {"nodes": [...], "edges": [[u, v, kind, tag], ...]},
     "image": {"dtype": str, "data": <LE bytes>, "affine": [16 floats]},  # optional
     "meta": {...}}

Voxel feature stacks use a separate document with ``"kind": "feature_stack"``,
u32 coordinates and little-endian float64 vectors per condition and feature.

Masks whose density reaches one third of the volume are stored as packed
bitmaps and listed under ``meta["dense_masks"]``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Optional, Union

import msgpack
import numpy as np

from .features.voxel import FeatureMapStack
from .imageio import LabelVolume, VolumeGrid
from .registry import AnatomyGraph, ClassMap, default_graph

__all__ = [
    "SCHEMA_VERSION",
    "ArchiveError",
    "SparseMask",
    "ArchiveRecord",
    "encode_sparse_mask",
    "decode_sparse_mask",
    "restore_hu_volume",
    "uses_dense_fallback",
    "pack_archive",
    "unpack_archive",
    "packb_archive",
    "unpackb_archive",
    "query_masks",
    "record_from_label_volume",
    "merge_records",
    "packb_feature_stack",
    "unpackb_feature_stack",
    "pack_feature_stack",
    "unpack_feature_stack",
]

SCHEMA_VERSION = 1
_I16 = np.iinfo(np.int16)


class ArchiveError(Exception):
    """Corrupt container or schema mismatch."""


@dataclass(eq=False)
class SparseMask:
    coords: np.ndarray
    shape: tuple
    values: Optional[np.ndarray] = None
    fill_value: Optional[int] = None

    def __post_init__(self):
        self.shape = tuple(int(s) for s in self.shape)
        self.coords = np.asarray(self.coords, dtype=np.int64).reshape(-1, 3)
        if (self.values is None) != (self.fill_value is None):
            raise ValueError("values and fill_value must be given together")
        if self.values is not None:
            self.values = np.asarray(self.values)
            if self.values.shape != (len(self.coords),):
                raise ValueError("values must have one entry per coordinate")

    @property
    def n(self) -> int:
        return len(self.coords)

    @property
    def has_values(self) -> bool:
        return self.values is not None

    def __eq__(self, other):
        if not isinstance(other, SparseMask):
            return NotImplemented
        if self.shape != other.shape or not np.array_equal(self.coords, other.coords):
            return False
        if self.has_values != other.has_values:
            return False
        if self.has_values:
            return self.fill_value == other.fill_value and np.array_equal(self.values, other.values)
        return True


def encode_sparse_mask(binary: np.ndarray, gray: Union[VolumeGrid, np.ndarray, None] = None) -> SparseMask:
    """COO-encode a boolean mask; coordinates come out in C order."""
    binary = np.asarray(binary).astype(bool, copy=False)
    if binary.ndim != 3:
        raise ValueError(f"mask must be 3D, got shape {binary.shape}")
    coords = np.argwhere(binary)
    if gray is None:
        return SparseMask(coords, binary.shape)
    arr = gray.data if isinstance(gray, VolumeGrid) else np.asarray(gray)
    if arr.shape != binary.shape:
        raise ValueError(f"gray shape {arr.shape} != mask shape {binary.shape}")
    values = arr[binary]
    fill = arr.min() if arr.size else 0
    return SparseMask(coords, binary.shape, values=values, fill_value=_hu_scalar(fill))


def _hu_scalar(v):
    v = np.asarray(v).item()
    return int(round(v)) if isinstance(v, float) else int(v)


def _check_coords(m: SparseMask):
    if m.n and (m.coords.min() < 0 or np.any(m.coords.max(axis=0) >= np.asarray(m.shape))):
        raise ValueError("mask coordinates fall outside the mask shape")


def decode_sparse_mask(m: SparseMask) -> np.ndarray:
    _check_coords(m)
    out = np.zeros(m.shape, dtype=bool)
    if m.n:
        out[tuple(m.coords.T)] = True
    return out


def restore_hu_volume(m: SparseMask) -> np.ndarray:
    """Dense array of ``m.shape`` filled with the fill value and the stored HU at the mask."""
    if not m.has_values:
        raise ValueError("mask carries no gray values")
    _check_coords(m)
    dtype = np.result_type(m.values.dtype, np.min_scalar_type(m.fill_value))
    out = np.full(m.shape, m.fill_value, dtype=dtype)
    if m.n:
        out[tuple(m.coords.T)] = m.values
    return out


def uses_dense_fallback(n: int, shape) -> bool:
    return 3 * n >= int(np.prod(shape))


@dataclass(eq=False)
class ArchiveRecord:
    shape: tuple
    masks: dict[str, SparseMask]
    graph: AnatomyGraph
    image: Optional[VolumeGrid] = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.shape = tuple(int(s) for s in self.shape)
        for name, m in self.masks.items():
            if m.shape != self.shape:
                raise ValueError(f"mask {name!r} shape {m.shape} != record shape {self.shape}")
            if name not in self.graph.leaves:
                raise ValueError(f"mask {name!r} is not a leaf of the anatomy graph")
        if self.image is not None and self.image.shape != self.shape:
            raise ValueError("image shape differs from record shape")

    def __eq__(self, other):
        if not isinstance(other, ArchiveRecord):
            return NotImplemented
        if self.shape != other.shape or self.meta != other.meta or self.graph != other.graph:
            return False
        if sorted(self.masks) != sorted(other.masks):
            return False
        if any(self.masks[k] != other.masks[k] for k in self.masks):
            return False
        if (self.image is None) != (other.image is None):
            return False
        if self.image is not None:
            return (self.image.data.dtype == other.image.data.dtype
                    and np.array_equal(self.image.data, other.image.data)
                    and np.array_equal(self.image.affine, other.image.affine))
        return True

    def decode(self, name: str) -> np.ndarray:
        return decode_sparse_mask(self.masks[name])


def record_from_label_volume(labels: LabelVolume, class_map: ClassMap, *,
                             gray: Optional[VolumeGrid] = None, include_image: bool = False,
                             data_id: str = "", graph: Optional[AnatomyGraph] = None,
                             ct_bed_removed: bool = False) -> ArchiveRecord:
    """Split a label map into named sparse masks.

    Masks are keyed by anatomy name, so the result does not depend on which
    integers the label map happened to use.
    """
    graph = default_graph() if graph is None else graph
    lookup = class_map.merged()
    present = [int(v) for v in np.unique(labels.data) if v != 0]
    unknown = [v for v in present if v not in lookup]
    if unknown:
        raise ValueError(f"labels {unknown} not in class map {class_map.task_name!r}")
    masks = {}
    for value in present:
        name = lookup[value]
        masks[name] = encode_sparse_mask(labels.data == value, gray)
    meta = {
        "data_id": data_id,
        "class_map": {"task": class_map.task_name, "version": class_map.version},
        "ct_bed_removed": bool(ct_bed_removed),
    }
    image = None
    if include_image:
        if gray is None:
            raise ValueError("include_image requires the gray volume")
        image = gray
    return ArchiveRecord(labels.shape, dict(sorted(masks.items())), graph.for_masks(masks), image, meta)


def merge_records(records, data_id: str = "", graph: Optional[AnatomyGraph] = None) -> ArchiveRecord:
    """Combine records of several segmentation tasks over the same grid.

    A name stored by two tasks must hold the same mask in both; a conflicting
    duplicate raises ArchiveError.
    """
    records = list(records)
    if not records:
        raise ValueError("no records to merge")
    graph = default_graph() if graph is None else graph
    shape = records[0].shape
    masks: dict[str, SparseMask] = {}
    image = None
    for rec in records:
        if rec.shape != shape:
            raise ValueError(f"record shapes differ: {rec.shape} != {shape}")
        for name, m in rec.masks.items():
            if name in masks and masks[name] != m:
                raise ArchiveError(f"mask {name!r} differs between merged tasks")
            masks[name] = m
        image = image if rec.image is None else rec.image
    meta = {
        "data_id": data_id,
        "class_maps": [r.meta.get("class_map") for r in records],
        "ct_bed_removed": any(r.meta.get("ct_bed_removed", False) for r in records),
    }
    return ArchiveRecord(shape, dict(sorted(masks.items())), graph.for_masks(masks), image, meta)


def _mask_payload(m: SparseMask) -> dict:
    if m.n and m.coords.max() > np.iinfo(np.uint32).max:
        raise ValueError("coordinates exceed u32 range")
    out: dict = {"n": m.n}
    if uses_dense_fallback(m.n, m.shape):
        out["encoding"] = "bitmap"
        out["bitmap"] = np.packbits(decode_sparse_mask(m).ravel()).tobytes()
    else:
        out["encoding"] = "coo"
        out["coords"] = m.coords.astype("<u4").tobytes()
    if m.has_values:
        vals = np.asarray(m.values)
        if vals.size and (vals.min() < _I16.min or vals.max() > _I16.max):
            raise ValueError("gray values exceed int16 range")
        if vals.dtype.kind == "f":
            vals = np.rint(vals)
        out["values"] = vals.astype("<i2").tobytes()
        out["fill_value"] = int(m.fill_value)
    return out


def _mask_from_payload(p: Mapping, shape) -> SparseMask:
    n = int(p["n"])
    if p["encoding"] == "coo":
        coords = np.frombuffer(p["coords"], dtype="<u4").reshape(-1, 3).astype(np.int64)
    elif p["encoding"] == "bitmap":
        size = int(np.prod(shape))
        bits = np.unpackbits(np.frombuffer(p["bitmap"], dtype=np.uint8), count=size)
        coords = np.argwhere(bits.reshape(shape).astype(bool))
    else:
        raise ArchiveError(f"unknown mask encoding {p['encoding']!r}")
    if len(coords) != n:
        raise ArchiveError("mask coordinate count disagrees with header")
    values = fill = None
    if "values" in p:
        values = np.frombuffer(p["values"], dtype="<i2").astype(np.int16)
        fill = int(p["fill_value"])
    return SparseMask(coords, shape, values, fill)


def packb_archive(rec: ArchiveRecord) -> bytes:
    meta = dict(rec.meta)
    dense = sorted(k for k, m in rec.masks.items() if uses_dense_fallback(m.n, m.shape))
    meta["dense_masks"] = dense
    doc = {
        "schema_version": SCHEMA_VERSION,
        "shape": list(rec.shape),
        "masks": {k: _mask_payload(rec.masks[k]) for k in sorted(rec.masks)},
        "graph": rec.graph.to_dict(),
    }
    if rec.image is not None:
        data = np.asarray(rec.image.data)
        le = data.astype(data.dtype.newbyteorder("<"), copy=False)
        doc["image"] = {
            "dtype": le.dtype.str,
            "data": np.ascontiguousarray(le).tobytes(),
            "affine": [float(x) for x in rec.image.affine.ravel()],
        }
    doc["meta"] = meta
    return msgpack.packb(doc, use_bin_type=True)


def unpackb_archive(blob: bytes) -> ArchiveRecord:
    try:
        doc = msgpack.unpackb(blob, raw=False, strict_map_key=False)
    except Exception as exc:
        raise ArchiveError(f"corrupt archive: {exc}") from exc
    if not isinstance(doc, dict) or "schema_version" not in doc:
        raise ArchiveError("corrupt archive: missing schema_version")
    if doc["schema_version"] != SCHEMA_VERSION:
        raise ArchiveError(f"schema version {doc['schema_version']} != supported {SCHEMA_VERSION}")
    try:
        shape = tuple(int(s) for s in doc["shape"])
        masks = {k: _mask_from_payload(p, shape) for k, p in doc["masks"].items()}
        graph = AnatomyGraph.from_dict(doc["graph"])
        image = None
        if doc.get("image") is not None:
            im = doc["image"]
            data = np.frombuffer(im["data"], dtype=np.dtype(im["dtype"])).reshape(shape)
            data = data.astype(data.dtype.newbyteorder("="))
            image = VolumeGrid(data, np.asarray(im["affine"], dtype=np.float64).reshape(4, 4))
        meta = dict(doc["meta"])
    except ArchiveError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise ArchiveError(f"corrupt archive: {exc}") from exc
    meta.pop("dense_masks", None)
    return ArchiveRecord(shape, masks, graph, image, meta)


def pack_archive(rec: ArchiveRecord, path) -> None:
    Path(path).write_bytes(packb_archive(rec))


def unpack_archive(path) -> ArchiveRecord:
    return unpackb_archive(Path(path).read_bytes())


def query_masks(rec: ArchiveRecord, selector) -> dict[str, SparseMask]:
    """Masks stored in ``rec`` that fall under ``selector`` (anatomy, group or side-qualified)."""
    if isinstance(selector, str):
        selectors = [selector]
    else:
        selectors = list(selector)
    names: set = set()
    for s in selectors:
        try:
            names.update(rec.graph.expand(s))
        except KeyError:
            continue
    hits = {n: rec.masks[n] for n in sorted(names) if n in rec.masks}
    if not hits:
        raise KeyError(f"selector {selector!r} matches no stored mask")
    return hits


def packb_feature_stack(stack: FeatureMapStack) -> bytes:
    doc = {
        "schema_version": SCHEMA_VERSION,
        "kind": "feature_stack",
        "shape": [int(s) for s in stack.shape],
        "coords": stack.coords.astype("<u4").tobytes(),
        "conditions": {c: {f: np.asarray(v, dtype="<f8").tobytes() for f, v in feats.items()}
                       for c, feats in stack.conditions.items()},
        "meta": dict(stack.meta),
    }
    return msgpack.packb(doc, use_bin_type=True)


def unpackb_feature_stack(blob: bytes) -> FeatureMapStack:
    try:
        doc = msgpack.unpackb(blob, raw=False, strict_map_key=False)
        if doc.get("kind") != "feature_stack":
            raise ArchiveError("not a feature stack document")
        if doc["schema_version"] != SCHEMA_VERSION:
            raise ArchiveError(f"schema version {doc['schema_version']} != supported {SCHEMA_VERSION}")
        coords = np.frombuffer(doc["coords"], dtype="<u4").reshape(-1, 3).astype(np.int64)
        conditions = {c: {f: np.frombuffer(b, dtype="<f8").astype(np.float64) for f, b in feats.items()}
                      for c, feats in doc["conditions"].items()}
        return FeatureMapStack(conditions, coords, tuple(doc["shape"]), meta=dict(doc["meta"]))
    except ArchiveError:
        raise
    except Exception as exc:
        raise ArchiveError(f"corrupt feature stack: {exc}") from exc


def pack_feature_stack(stack: FeatureMapStack, path) -> None:
    Path(path).write_bytes(packb_feature_stack(stack))


def unpack_feature_stack(path) -> FeatureMapStack:
    return unpackb_feature_stack(Path(path).read_bytes())
