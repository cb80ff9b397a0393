"""Command line entry point ``aarchive``.

Exit codes: 0 all instances completed, 2 some skipped, 1 hard failure.
The log level is read from ``AARCHIVE_LOG`` (default WARNING).
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

log = logging.getLogger("aarchive")


def _setup_logging() -> None:
    level = os.environ.get("AARCHIVE_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")


def cmd_run(args) -> int:
    from .config import load_workflow_config
    from .pipeline import run_pipeline

    cfg = load_workflow_config(args.config)
    manifest = run_pipeline(cfg, workers=args.workers, dry_run=args.dry_run)
    if args.dry_run:
        for data_id in manifest:
            print(f"{data_id}: planned")
        return 0
    c = manifest.counts
    print(f"completed {c['completed']}, skipped {c['skipped']}, failed {c['failed']} -> {cfg.output_dir}")
    return manifest.exit_code()


def cmd_demo_data(args) -> int:
    from .phantoms import write_demo_dataset

    print(write_demo_dataset(args.directory, workers=args.workers))
    return 0


def cmd_bounds(args) -> int:
    from .imageio import read_label_volume, reorient_volume
    from .standardizer import DatasetTag, define_volume_bounds_by_anatomies

    labels = reorient_volume(read_label_volume(args.labels, args.task))
    tag = DatasetTag()
    b = define_volume_bounds_by_anatomies(labels, {"refObjUB": args.upper, "refObjLB": args.lower},
                                          crop_addon=args.crop_addon, dataset_tag=tag, data_id=args.data_id)
    print(json.dumps({**b.as_dict(), "valid": b.valid, "tags": tag}, indent=2, sort_keys=True))
    return 0 if b.valid else 2


def cmd_features(args) -> int:
    from .archive import pack_feature_stack
    from .features.voxel import ExtractionParams, build_feature_stack, export_feature_csv
    from .imageio import read_label_volume, read_volume, reorient_volume

    vol = reorient_volume(read_volume(args.image))
    lab = reorient_volume(read_label_volume(args.mask))
    params = ExtractionParams.from_yaml(args.params) if args.params else ExtractionParams()
    values = args.target_range or [getattr(params, args.target_param)]
    values = [type(getattr(params, args.target_param))(v) for v in values]
    stack = build_feature_stack(vol.data, lab.data == args.label, args.target_param, values, params)
    export_feature_csv(stack, args.out)
    if args.aarc:
        pack_feature_stack(stack, args.aarc)
    print(f"{stack.n_voxels} voxels x {len(stack.conditions)} condition(s) -> {args.out}")
    return 0


def cmd_stats_robustness(args) -> int:
    from .archive import unpack_feature_stack
    from .stats import eval_feature_robustness, save_robustness_stats

    stacks = [unpack_feature_stack(p) for p in args.stacks]
    res = eval_feature_robustness(stacks, args.mode, args.n_components, do_ttest=args.ttest)
    save_robustness_stats([res], args.out)
    for f, v in res.medians().items():
        print(f"{f}\t{v:.6f}")
    return 0


def cmd_stats_compare(args) -> int:
    from .stats import ttest_with_auto_checks

    a, b = np.loadtxt(args.a, ndmin=1), np.loadtxt(args.b, ndmin=1)
    rep = ttest_with_auto_checks(a, b, paired=args.paired, alternative=args.alternative,
                                 sensitivity=args.sensitivity, include_f=args.include_f)
    print(json.dumps({"chosen_mean_test": rep.chosen_mean_test, "chosen_variance_test": rep.chosen_variance_test,
                      "p_values": rep.p_values, "normality": rep.normality, "notes": rep.notes},
                     indent=2, sort_keys=True))
    return 0


def cmd_render_control(args) -> int:
    from .imageio import read_label_volume, read_volume, reorient_volume
    from .standardizer import define_volume_bounds_by_anatomies, detect_hip_prosthesis
    from .visualizer import ControlImageSpec, render_control_image

    vol = reorient_volume(read_volume(args.image))
    bounds = prosthesis = None
    if args.labels:
        labels = reorient_volume(read_label_volume(args.labels, "total"))
        bounds = define_volume_bounds_by_anatomies(labels, {"refObjUB": args.upper, "refObjLB": args.lower},
                                                   crop_addon=args.crop_addon)
        if bounds.valid:
            prosthesis = detect_hip_prosthesis(vol, bounds.lower)
    spec = ControlImageSpec(plane=args.plane, bounds=bounds, prosthesis=prosthesis)
    print(render_control_image(vol, spec, args.out))
    return 0


def cmd_render_overlay(args) -> int:
    from PIL import Image

    from .archive import unpack_feature_stack
    from .visualizer import render_feature_overlay

    stack = unpack_feature_stack(args.stack)
    cond = args.condition or stack.condition_ids[0]
    fmap = np.zeros(stack.shape)
    mask = np.zeros(stack.shape, dtype=bool)
    idx = tuple(stack.coords.T)
    fmap[idx] = stack.vector(cond, args.feature)
    mask[idx] = True
    rgba = render_feature_overlay(fmap, mask, args.slice)
    Image.fromarray(np.round(rgba * 255).astype(np.uint8), "RGBA").save(args.out, format="PNG")
    print(args.out)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="aarchive", description="Anatomy archive pipeline and tools.")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run the pipeline described by a workflow config")
    r.add_argument("--config", required=True, type=Path)
    r.add_argument("--workers", type=int, default=None)
    r.add_argument("--dry-run", action="store_true")
    r.set_defaults(func=cmd_run)

    d = sub.add_parser("demo-data", help="write the bundled three-phantom dataset and its config")
    d.add_argument("directory", type=Path)
    d.add_argument("--workers", type=int, default=1)
    d.set_defaults(func=cmd_demo_data)

    b = sub.add_parser("bounds", help="volume bounds from a label map")
    b.add_argument("labels", type=Path)
    b.add_argument("--upper", required=True)
    b.add_argument("--lower", required=True)
    b.add_argument("--task", default="total")
    b.add_argument("--crop-addon", type=int, default=0)
    b.add_argument("--data-id", default="")
    b.set_defaults(func=cmd_bounds)

    f = sub.add_parser("features", help="voxel-based first-order features of one label")
    f.add_argument("image", type=Path)
    f.add_argument("mask", type=Path)
    f.add_argument("--label", type=int, default=1)
    f.add_argument("--params", type=Path)
    f.add_argument("--target-param", default="kernel_radius")
    f.add_argument("--target-range", nargs="+", type=float)
    f.add_argument("--out", required=True, type=Path)
    f.add_argument("--aarc", type=Path)
    f.set_defaults(func=cmd_features)

    s = sub.add_parser("stats", help="statistics tools")
    ssub = s.add_subparsers(dest="stats_command", required=True)
    sr = ssub.add_parser("robustness", help="OCCC of features across extraction conditions")
    sr.add_argument("stacks", nargs="+", type=Path)
    sr.add_argument("--mode", choices=("baseline", "standardized", "sap"), default="baseline")
    sr.add_argument("--n-components", type=int)
    sr.add_argument("--ttest", action="store_true")
    sr.add_argument("--out", required=True, type=Path)
    sr.set_defaults(func=cmd_stats_robustness)
    sc = ssub.add_parser("compare", help="two-group comparison with automatic test selection")
    sc.add_argument("a", type=Path)
    sc.add_argument("b", type=Path)
    sc.add_argument("--paired", action="store_true")
    sc.add_argument("--alternative", choices=("two-sided", "greater", "less"), default="two-sided")
    sc.add_argument("--sensitivity", type=float, default=0.05)
    sc.add_argument("--include-f", action="store_true")
    sc.set_defaults(func=cmd_stats_compare)

    v = sub.add_parser("render", help="control images and feature overlays")
    vsub = v.add_subparsers(dest="render_command", required=True)
    vc = vsub.add_parser("control", help="MIP control image")
    vc.add_argument("image", type=Path)
    vc.add_argument("--labels", type=Path)
    vc.add_argument("--upper", default="vertebrae_L1")
    vc.add_argument("--lower", default="pelvic")
    vc.add_argument("--crop-addon", type=int, default=0)
    vc.add_argument("--plane", choices=("coronal", "sagittal", "transverse"), default="coronal")
    vc.add_argument("--out", required=True, type=Path)
    vc.set_defaults(func=cmd_render_control)
    vo = vsub.add_parser("overlay", help="RGBA overlay of one feature on one axial slice")
    vo.add_argument("stack", type=Path)
    vo.add_argument("--feature", default="Mean")
    vo.add_argument("--condition")
    vo.add_argument("--slice", type=int, required=True)
    vo.add_argument("--out", required=True, type=Path)
    vo.set_defaults(func=cmd_render_overlay)
    return p


def main(argv=None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (OSError, ValueError, KeyError, RuntimeError) as exc:
        log.error("%s", exc)
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
