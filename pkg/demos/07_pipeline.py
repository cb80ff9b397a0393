"""
The whole run from a workflow config
====================================

Writes three phantoms with their label maps, then runs the pipeline the
same way ``aarchive demo-data DIR && aarchive run --config DIR/workflow.json``
would.
"""

import json

from _common import out_dir
from aarchive.config import load_workflow_config
from aarchive.phantoms import write_demo_dataset
from aarchive.pipeline import run_pipeline

root = out_dir("pipeline")
cfg = load_workflow_config(write_demo_dataset(root))
manifest = run_pipeline(cfg)
print(manifest.counts, "exit code", manifest.exit_code())
for data_id, entry in manifest.items():
    print(f"{data_id}: {entry['status']:9} tags={entry['tags']} artifacts={len(entry['artifacts'])}")
print(json.dumps(json.loads((cfg.output_dir / "dataset_tag.json").read_text()), indent=1))
print((cfg.output_dir / "stats" / "robustness.csv").read_text().splitlines()[:4])
