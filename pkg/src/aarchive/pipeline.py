"""Batch pipeline over a directory of CT volumes and their label maps.

Per instance: reorient, compute bounds, check for implants and cropped
trunks, tag or skip, measure body components, optionally extract voxel
features, pack the archive and draw a control image. Instances run in a
process pool; tags and the manifest are merged by the parent process in
sorted ``data_id`` order, so outputs do not depend on scheduling.
"""
from __future__ import annotations

import json
import logging
import re
import time
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .archive import merge_records, pack_archive, pack_feature_stack, record_from_label_volume
from .config import WorkflowConfig
from .features.body import body_component_analysis
from .features.voxel import ExtractionParams, build_feature_stack, export_feature_csv
from .imageio import read_label_volume, read_volume, reorient_volume
from .registry import load_class_map
from .standardizer import (
    DatasetTag,
    add_tag_to_data,
    bounds_from_masks,
    detect_hip_prosthesis,
    masks_for_anatomy,
    separate_arms_and_legs,
)
from .stats import eval_feature_robustness, save_robustness_stats
from .visualizer import ControlImageSpec, plot_robustness, render_control_image

log = logging.getLogger(__name__)

__all__ = ["Instance", "InstanceOutcome", "RunManifest", "PipelineError", "discover_instances",
           "process_instance", "run_pipeline", "export_manifest", "export_dataset_tags", "load_manifest"]

ARM_BONES = ("humerus", "radius", "ulna")


class PipelineError(RuntimeError):
    """A problem that stops the whole run (as opposed to one instance)."""


@dataclass(frozen=True)
class Instance:
    data_id: str
    volume: Path
    segmentations: dict


@dataclass
class InstanceOutcome:
    data_id: str
    status: str
    tags: dict = field(default_factory=dict)
    artifacts: list = field(default_factory=list)
    reasons: list = field(default_factory=list)
    error: Optional[str] = None
    timings: dict = field(default_factory=dict)
    feature_stack: object = None

    def manifest_entry(self) -> dict:
        entry = {"status": self.status, "tags": sorted(self.tags), "artifacts": sorted(self.artifacts),
                 "reasons": list(self.reasons), "timings": self.timings}
        if self.error is not None:
            entry["error"] = self.error
        return entry


class RunManifest(dict):
    """data_id -> {status, tags, artifacts, reasons, timings[, error]}."""

    @property
    def counts(self) -> dict:
        out = {"completed": 0, "skipped": 0, "failed": 0}
        for entry in self.values():
            out[entry["status"]] += 1
        return out

    def exit_code(self) -> int:
        c = self.counts
        if c["failed"]:
            return 1
        return 2 if c["skipped"] else 0

    def without_timings(self) -> dict:
        return {k: {kk: vv for kk, vv in v.items() if kk != "timings"} for k, v in self.items()}


def _pattern_regex(pattern: str) -> re.Pattern:
    rx = re.escape(pattern).replace(r"\{id\}", r"(?P<id>.+?)").replace(r"\{task\}", r"(?P<task>[A-Za-z0-9_]+)")
    return re.compile(f"^{rx}$")


def discover_instances(cfg: WorkflowConfig) -> list[Instance]:
    if not cfg.input_dir.is_dir():
        raise PipelineError(f"input directory {cfg.input_dir} does not exist")
    vol_rx = _pattern_regex(cfg.volume_pattern)
    seg_rx = _pattern_regex(cfg.seg_pattern)
    files = sorted(p.name for p in cfg.input_dir.iterdir() if p.is_file())
    segs: dict[str, dict[str, Path]] = {}
    vols: dict[str, Path] = {}
    for name in files:
        m = seg_rx.match(name)
        if m:
            segs.setdefault(m["id"], {})[m["task"]] = cfg.input_dir / name
            continue
        m = vol_rx.match(name)
        if m:
            vols[m["id"]] = cfg.input_dir / name
    if not vols:
        raise PipelineError(f"no volumes matching {cfg.volume_pattern!r} in {cfg.input_dir}")
    return [Instance(i, vols[i], dict(sorted(segs.get(i, {}).items()))) for i in sorted(vols)]


def _named_masks(labels, class_map) -> dict[str, np.ndarray]:
    lookup = class_map.merged()
    return {lookup[int(v)]: labels.data == v for v in np.unique(labels.data) if v != 0 and int(v) in lookup}


def _reference(cfg: WorkflowConfig):
    for task, s in cfg.target_eva_config.items():
        if "refObjUB" in s or "refObj" in s:
            return task, s
    return None, {}


def _rel(path: Path, root: Path) -> str:
    return path.relative_to(root).as_posix()


def process_instance(cfg: WorkflowConfig, inst: Instance) -> InstanceOutcome:
    """Run every per-instance step; never raises."""
    t0 = time.perf_counter()
    tag = DatasetTag()
    out = InstanceOutcome(inst.data_id, "completed")
    try:
        _process(cfg, inst, tag, out)
    except Exception as exc:
        log.error("instance %s failed: %s", inst.data_id, exc)
        log.debug("%s", traceback.format_exc())
        out.status = "failed"
        out.error = f"{type(exc).__name__}: {exc}"
        add_tag_to_data(tag, "processingFailed", inst.data_id, "Error")
    out.tags = {code: sev for code, by_sev in tag.items() for sev, ids in by_sev.items() if inst.data_id in ids}
    out.timings["total_s"] = round(time.perf_counter() - t0, 3)
    return out


def _process(cfg: WorkflowConfig, inst: Instance, tag: DatasetTag, out: InstanceOutcome) -> None:
    data_id = inst.data_id
    root = cfg.output_dir
    vol = reorient_volume(read_volume(inst.volume), cfg.orientation)
    labels, masks, cmaps = {}, {}, {}
    for task in cfg.tasks:
        if task not in inst.segmentations:
            raise FileNotFoundError(f"label map for task {task!r} not found")
        lab = reorient_volume(read_label_volume(inst.segmentations[task], task), cfg.orientation)
        if lab.shape != vol.shape:
            raise ValueError(f"label map {task!r} shape {lab.shape} != volume shape {vol.shape}")
        labels[task] = lab
        cmaps[task] = load_class_map(task)
        masks[task] = _named_masks(lab, cmaps[task])
    body = None
    if "body" in inst.segmentations:
        body = reorient_volume(read_label_volume(inst.segmentations["body"], "body"), cfg.orientation)

    ref_task, ref = _reference(cfg)
    bounds = prosthesis = arms = None
    if "refObjUB" in ref:
        bounds = bounds_from_masks(masks[ref_task], ref, cfg.crop_addon, tag, data_id)
        if bounds.valid:
            prosthesis = detect_hip_prosthesis(vol, bounds.lower, tag, data_id)
            if body is not None:
                bones = [m for b in ARM_BONES for t in masks.values() for m in masks_for_anatomy(b, t)]
                arms = separate_arms_and_legs(body, bones, bounds, cfg.crop_addon)
                if arms.trunk_cropped:
                    add_tag_to_data(tag, "bodyCropped", data_id, "Warning")

    measured = masks
    if arms is not None and arms.arm_masks:
        # arm voxels are excluded from the composition metrics
        measured = {t: {n: m & ~arms.arms for n, m in tm.items()} for t, tm in masks.items()}
    result = body_component_analysis(vol, measured, cfg.target_eva_config, bounds=bounds, prosthesis=prosthesis,
                                     dataset_tag=tag, data_id=data_id, crop_addon=cfg.crop_addon)

    if cfg.control_images.enabled:
        (root / "control").mkdir(parents=True, exist_ok=True)
        trunk = None if body is None else (body.data == 1)
        if trunk is not None and bounds is not None and bounds.valid:
            keep = np.zeros_like(trunk)
            keep[:, :, bounds.lower:bounds.upper + 1] = True
            trunk &= keep
        spec = ControlImageSpec(
            plane=cfg.control_images.plane,
            bounds=bounds,
            prosthesis=prosthesis,
            body_crop_mask=trunk if arms is not None and arms.trunk_cropped else None,
            arms=arms,
            central_plane=result.central_plane,
        )
        png = render_control_image(vol, spec, root / "control" / f"{data_id}_overview.png")
        out.artifacts.append(_rel(png, root))

    if result.status != "completed":
        out.status = "skipped"
        out.reasons = list(result.reasons)
        return

    (root / "metrics").mkdir(parents=True, exist_ok=True)
    metrics_path = root / "metrics" / f"{data_id}.json"
    metrics_path.write_text(json.dumps(result.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    out.artifacts.append(_rel(metrics_path, root))

    (root / "archives").mkdir(parents=True, exist_ok=True)
    records = [record_from_label_volume(labels[t], cmaps[t], gray=vol, data_id=data_id) for t in sorted(labels)]
    rec = merge_records(records, data_id=data_id)
    rec.meta["bounds"] = None if bounds is None else bounds.as_dict()
    rec.meta["tags"] = sorted(tag.codes_for(data_id))
    arc = root / "archives" / f"{data_id}.aarc"
    pack_archive(rec, arc)
    out.artifacts.append(_rel(arc, root))

    rob = cfg.robustness
    if rob.enabled:
        stack = _feature_stack(cfg, vol, masks[rob.task], data_id)
        (root / "features").mkdir(parents=True, exist_ok=True)
        base = root / "features" / f"{data_id}_{rob.anatomy}"
        pack_feature_stack(stack, base.with_suffix(".aarc"))
        export_feature_csv(stack, base.with_suffix(".csv"))
        out.artifacts += [_rel(base.with_suffix(".aarc"), root), _rel(base.with_suffix(".csv"), root)]
        out.feature_stack = stack


def _feature_stack(cfg: WorkflowConfig, vol, task_masks, data_id):
    rob = cfg.robustness
    parts = masks_for_anatomy(rob.anatomy, task_masks)
    if not parts:
        raise KeyError(f"robustness anatomy {rob.anatomy!r} missing in {data_id}")
    voi = np.logical_or.reduce(parts)
    params = cfg.extraction_params or ExtractionParams()
    stack = build_feature_stack(vol.data, voi, rob.target_param, list(rob.target_range), params)
    stack.meta.update({"data_id": data_id, "anatomy": rob.anatomy})
    return stack


def _check_output_dir(path: Path) -> None:
    try:
        path.mkdir(parents=True, exist_ok=True)
        probe = path / ".write_probe"
        probe.write_bytes(b"")
        probe.unlink()
    except OSError as exc:
        raise PipelineError(f"output directory {path} is not writable: {exc}") from exc


def run_pipeline(cfg: WorkflowConfig, workers: Optional[int] = None, dry_run: bool = False) -> RunManifest:
    instances = discover_instances(cfg)
    if dry_run:
        return RunManifest({i.data_id: {"status": "planned", "tags": [], "artifacts": [], "reasons": [],
                                        "timings": {}} for i in instances})
    _check_output_dir(cfg.output_dir)
    n = workers or cfg.n_workers
    log.info("processing %d instances with %d worker(s)", len(instances), n)
    if n > 1 and len(instances) > 1:
        with ProcessPoolExecutor(max_workers=min(n, len(instances))) as pool:
            outcomes = list(pool.map(process_instance, [cfg] * len(instances), instances))
    else:
        outcomes = [process_instance(cfg, i) for i in instances]

    # single collector: merge in data_id order
    manifest = RunManifest()
    tags = DatasetTag()
    stacks = []
    for o in sorted(outcomes, key=lambda o: o.data_id):
        manifest[o.data_id] = o.manifest_entry()
        for code, sev in o.tags.items():
            tags.add(code, o.data_id, sev)
        if o.feature_stack is not None:
            stacks.append(o.feature_stack)
        log.info("%s: %s %s", o.data_id, o.status, " ".join(o.reasons))

    if cfg.robustness.enabled and stacks:
        _robustness(cfg, stacks)
    export_dataset_tags(tags, cfg.output_dir / "dataset_tag.json")
    export_manifest(manifest, cfg.output_dir / "manifest.json")
    return manifest


def _robustness(cfg: WorkflowConfig, stacks) -> None:
    rob = cfg.robustness
    path = cfg.output_dir / rob.save_stats_path
    path.parent.mkdir(parents=True, exist_ok=True)
    results = [eval_feature_robustness(stacks, "baseline")]
    results.append(eval_feature_robustness(stacks, "standardized", do_ttest=rob.do_ttest))
    results.append(eval_feature_robustness(stacks, "sap", rob.n_components, do_ttest=rob.do_ttest))
    save_robustness_stats(results, path)
    if rob.plot_result:
        for res in results[1:]:
            plot_robustness(res, path.with_name(f"{path.stem}_{res.mode}.png"))


def export_manifest(m, path) -> None:
    Path(path).write_text(json.dumps(dict(m), indent=2, sort_keys=True) + "\n", encoding="utf-8")


def load_manifest(path) -> RunManifest:
    return RunManifest(json.loads(Path(path).read_text(encoding="utf-8")))


def export_dataset_tags(tag: DatasetTag, path) -> None:
    Path(path).write_text(tag.to_json() + "\n", encoding="utf-8")
