"""Versioned label-to-anatomy class maps."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources
from typing import Iterable, Mapping

__all__ = ["ClassMap", "UnknownTaskError", "load_class_map", "available_class_maps",
           "parse_class_map_records", "V1_REDIRECTS"]

# Tasks that only exist in version 2; version 1 bundles them in one task.
V1_REDIRECTS = {"appendicular_bones": "bone_tissue_test", "tissue_types": "bone_tissue_test"}


class UnknownTaskError(KeyError):
    pass


@dataclass(frozen=True)
class ClassMap:
    task_name: str
    version: int
    entries: Mapping[int, str]
    auxiliary: Mapping[int, str] = field(default_factory=dict)

    def __post_init__(self):
        labels = list(self.entries) + list(self.auxiliary)
        if len(set(labels)) != len(labels):
            raise ValueError(f"{self.task_name}: duplicated label integers")
        if any(int(k) <= 0 for k in labels):
            raise ValueError(f"{self.task_name}: label integers must be positive")
        names = list(self.entries.values()) + list(self.auxiliary.values())
        if len(set(names)) != len(names):
            raise ValueError(f"{self.task_name}: duplicated anatomy names")

    @property
    def name(self) -> str:
        return self.task_name

    def merged(self) -> dict[int, str]:
        out = dict(self.entries)
        out.update(self.auxiliary)
        return out

    def label_of(self, name: str) -> int:
        for k, v in self.merged().items():
            if v == name:
                return k
        raise KeyError(name)

    def names(self) -> list[str]:
        return list(self.merged().values())

    def to_record(self) -> dict:
        return {
            "task": self.task_name,
            "version": self.version,
            "entries": {str(k): v for k, v in self.entries.items()},
            "auxiliary": {str(k): v for k, v in self.auxiliary.items()},
        }


def parse_class_map_records(lines: Iterable[str]) -> dict[tuple[str, int], ClassMap]:
    out = {}
    for raw in lines:
        raw = raw.strip()
        if not raw:
            continue
        rec = json.loads(raw)
        cm = ClassMap(
            task_name=rec["task"],
            version=int(rec["version"]),
            entries={int(k): v for k, v in rec["entries"].items()},
            auxiliary={int(k): v for k, v in rec.get("auxiliary", {}).items()},
        )
        out[(cm.task_name, cm.version)] = cm
    return out


@lru_cache(maxsize=None)
def _bundled() -> dict[tuple[str, int], ClassMap]:
    text = resources.files("aarchive.registry").joinpath("data/class_maps.jsonl").read_text("utf-8")
    return parse_class_map_records(text.splitlines())


def available_class_maps() -> list[tuple[str, int]]:
    return sorted(_bundled())


def load_class_map(task: str, version: int = 2, append_auxiliary: bool = True) -> ClassMap:
    """Return the class map of ``task`` for segmentation-model ``version``.

    Version 1 has no ``appendicular_bones``/``tissue_types`` tasks, so these
    are redirected to ``bone_tissue_test``. Auxiliary entries (version 2 only)
    are appended unless ``append_auxiliary`` is false.
    """
    version = int(version)
    if version not in (1, 2):
        raise UnknownTaskError(f"unsupported model version {version}")
    if version == 1:
        task = V1_REDIRECTS.get(task, task)
    try:
        cm = _bundled()[(task, version)]
    except KeyError:
        raise UnknownTaskError(f"no class map for task {task!r} version {version}") from None
    if append_auxiliary or not cm.auxiliary:
        return cm
    return ClassMap(cm.task_name, cm.version, dict(cm.entries), {})
