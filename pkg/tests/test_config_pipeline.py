import json
import shutil

import pytest

from aarchive.config import ConfigError, load_workflow_config, parse_workflow_config
from aarchive.pipeline import (
    PipelineError,
    RunManifest,
    discover_instances,
    export_manifest,
    load_manifest,
    run_pipeline,
)
from aarchive.phantoms import write_demo_dataset

# the worked example config, with the stray line of the printed block dropped
WORKED_TARGET = {
    "total": {"refObjUB": "vertebrae_L1", "refObjLB": "pelvic", "excludeProsthesisSamples": True},
    "tissue_types": {"selectedObjs": ["subcutaneous_fat", "torso_fat", "skeletal_muscle"],
                     "enforceMuscleRange": False},
}


def _doc(**extra):
    doc = {"io": {"input_dir": "in", "output_dir": "out"}, "target_eva_config": WORKED_TARGET}
    doc.update(extra)
    return doc


def test_worked_config_accepted(tmp_path):
    cfg = parse_workflow_config(_doc(), tmp_path)
    assert cfg.tasks == ["total", "tissue_types"]
    assert cfg.orientation == ("P", "L", "S")
    assert cfg.input_dir == (tmp_path / "in").resolve()


def test_unknown_level_two_key_named():
    doc = _doc(target_eva_config={"total": {"refObjXX": "liver"}})
    with pytest.raises(ConfigError, match="refObjXX"):
        parse_workflow_config(doc)


def test_ref_exclusivity():
    doc = _doc(target_eva_config={"total": {"refObj": "vertebrae_L3", "refObjUB": "vertebrae_L1",
                                            "refObjLB": "pelvic"}})
    with pytest.raises(ConfigError):
        parse_workflow_config(doc)


@pytest.mark.parametrize("doc,key", [
    (_doc(colour="red"), "colour"),
    (_doc(io={"input_dir": "in", "output_dir": "out", "glob": "*"}), "glob"),
    (_doc(robustness={"enabled": True, "anatomy": "liver", "target_range": []}), "target_range"),
    (_doc(robustness={"enabled": True, "anatomy": "liver", "target_range": [1, 2], "n_components": 3}),
     "n_components"),
    (_doc(robustness={"enabled": True, "anatomy": "liver", "target_range": [1, 2], "target_param": "x"}),
     "target_param"),
    (_doc(workers=0), "workers"),
    (_doc(crop_addon=[1, 2]), "crop_addon"),
    (_doc(orientation="PLX"), "orientation"),
    (_doc(control_images={"plane": "oblique"}), "plane"),
    ({"io": {"input_dir": "in"}, "target_eva_config": WORKED_TARGET}, "output_dir"),
    (_doc(io={"input_dir": "in", "output_dir": "out", "seg_pattern": "{id}.nii"}), "seg_pattern"),
])
def test_schema_errors_name_the_key(doc, key):
    with pytest.raises(ConfigError, match=key):
        parse_workflow_config(doc)


def test_extraction_params_path(tmp_path):
    with pytest.raises(ConfigError, match="extraction_params"):
        parse_workflow_config(_doc(extraction_params="missing.yaml"), tmp_path)
    (tmp_path / "p.yaml").write_text("voxelSetting:\n  kernelRadius: 3\n")
    assert parse_workflow_config(_doc(extraction_params="p.yaml"), tmp_path).extraction_params.kernel_radius == 3


def test_load_config_errors(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_workflow_config(tmp_path / "nope.json")
    (tmp_path / "bad.json").write_text("{not json")
    with pytest.raises(ConfigError):
        load_workflow_config(tmp_path / "bad.json")


def test_empty_input_dir(tmp_path):
    (tmp_path / "in").mkdir()
    cfg = parse_workflow_config(_doc(), tmp_path)
    with pytest.raises(PipelineError):
        discover_instances(cfg)
    cfg = parse_workflow_config(_doc(io={"input_dir": "absent", "output_dir": "out"}), tmp_path)
    with pytest.raises(PipelineError):
        run_pipeline(cfg)


def test_manifest_round_trip(tmp_path):
    m = RunManifest({"b": {"status": "skipped", "tags": ["prosthesisDetected"], "artifacts": [], "reasons": ["x"],
                           "timings": {"total_s": 0.1}},
                     "a": {"status": "completed", "tags": [], "artifacts": ["archives/a.aarc"], "reasons": [],
                           "timings": {}}})
    export_manifest(m, tmp_path / "m.json")
    back = load_manifest(tmp_path / "m.json")
    assert back == m and back.counts == {"completed": 1, "skipped": 1, "failed": 0}
    assert back.exit_code() == 2
    text = (tmp_path / "m.json").read_text()
    assert text.index('"a"') < text.index('"b"')
    export_manifest(RunManifest(), tmp_path / "e.json")
    assert json.loads((tmp_path / "e.json").read_text()) == {}
    assert RunManifest().exit_code() == 0


@pytest.fixture(scope="module")
def demo_run(tmp_path_factory):
    root = tmp_path_factory.mktemp("demo")
    cfg = load_workflow_config(write_demo_dataset(root))
    return root, cfg, run_pipeline(cfg)


def test_demo_run_counts(demo_run):
    root, cfg, m = demo_run
    assert m.counts == {"completed": 2, "skipped": 1, "failed": 0}
    assert m["p003"]["status"] == "skipped" and "prosthesisDetected" in m["p003"]["tags"]
    out = cfg.output_dir
    assert sorted(p.name for p in (out / "archives").iterdir()) == ["p001.aarc", "p002.aarc"]
    assert sorted(p.name for p in (out / "control").iterdir()) == [f"p00{i}_overview.png" for i in (1, 2, 3)]
    assert (out / "stats" / "robustness.csv").is_file()
    tags = json.loads((out / "dataset_tag.json").read_text())
    assert tags["prosthesisDetected"]["Warning"] == ["p003"]
    for entry in m.values():
        assert entry["status"] != "skipped" or entry["tags"]


def test_missing_lower_bound_is_skipped(demo_run, tmp_path):
    root, cfg, _ = demo_run
    doc = json.loads((root / "workflow.json").read_text())
    doc["target_eva_config"]["total"]["refObjLB"] = "urinary_bladder"
    doc["target_eva_config"]["total"]["excludeProsthesisSamples"] = False
    doc["robustness"]["enabled"] = False
    doc["control_images"]["enabled"] = False
    doc["io"]["output_dir"] = str(tmp_path / "out")
    doc["io"]["input_dir"] = str(root / "inputs")
    doc["extraction_params"] = None
    m = run_pipeline(parse_workflow_config(doc, root))
    for entry in m.values():
        assert entry["status"] == "skipped" and "refObjLBMissing" in entry["tags"]


def test_failure_is_isolated(demo_run, tmp_path):
    root, _, _ = demo_run
    inputs = tmp_path / "inputs"
    shutil.copytree(root / "inputs", inputs)
    (inputs / "p002_seg_tissue_types.nii.gz").write_bytes(b"not a nifti")
    doc = json.loads((root / "workflow.json").read_text())
    doc["io"] = {"input_dir": str(inputs), "output_dir": str(tmp_path / "out")}
    doc["robustness"]["enabled"] = False
    doc["extraction_params"] = None
    m = run_pipeline(parse_workflow_config(doc, root))
    assert m["p002"]["status"] == "failed" and "processingFailed" in m["p002"]["tags"]
    assert m["p001"]["status"] == "completed" and m.exit_code() == 1
    a = (tmp_path / "out" / "archives" / "p001.aarc").read_bytes()
    assert a == (root / "output" / "archives" / "p001.aarc").read_bytes()


def test_dry_run(demo_run):
    _, cfg, _ = demo_run
    m = run_pipeline(cfg, dry_run=True)
    assert list(m) == ["p001", "p002", "p003"] and all(e["status"] == "planned" for e in m.values())
