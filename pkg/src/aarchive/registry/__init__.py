"""Class maps, segmentation task settings and the anatomy multigraph."""
from .anatomy import (
    ANATOMY_GROUPS,
    ANATOMY_HIERARCHY,
    BASE_GROUPS,
    MUSCLE_KEYWORDS,
    ROOT,
    SYNONYMS,
    TOP_CATEGORIES,
    AnatomyGraph,
    UnknownAnatomyWarning,
    build_anatomy_graph,
    default_graph,
    expand_selection,
    is_muscle,
    normalize_anatomy_name,
    side_of,
    strip_side,
)
from .class_maps import ClassMap, UnknownTaskError, available_class_maps, load_class_map
from .seg_config import SEGMENTATION_SETTINGS, SegConfig, get_seg_config_by_task_name

__all__ = [
    "ANATOMY_GROUPS",
    "ANATOMY_HIERARCHY",
    "BASE_GROUPS",
    "MUSCLE_KEYWORDS",
    "ROOT",
    "SYNONYMS",
    "TOP_CATEGORIES",
    "AnatomyGraph",
    "ClassMap",
    "SEGMENTATION_SETTINGS",
    "SegConfig",
    "UnknownAnatomyWarning",
    "UnknownTaskError",
    "available_class_maps",
    "build_anatomy_graph",
    "default_graph",
    "expand_selection",
    "get_seg_config_by_task_name",
    "is_muscle",
    "load_class_map",
    "normalize_anatomy_name",
    "side_of",
    "strip_side",
]
