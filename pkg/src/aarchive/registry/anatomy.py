"""Anatomy vocabulary: synonyms, predefined groups and the hierarchy multigraph.

The graph is a :class:`networkx.MultiDiGraph`. Hierarchy edges run from
parent to child (``kind="hierarchy"``). Each group membership adds one more
edge parallel to the member's hierarchy edge, tagged with the group name
(``kind="group"``). Groups therefore only list the highest structures they
contain, e.g. ``"kidney"`` rather than both kidneys.
"""
from __future__ import annotations

import re
import warnings
from functools import cached_property
from typing import Iterable, Mapping, Optional, Sequence, Union

import networkx as nx

__all__ = [
    "ROOT",
    "TOP_CATEGORIES",
    "ANATOMY_HIERARCHY",
    "ANATOMY_GROUPS",
    "BASE_GROUPS",
    "SYNONYMS",
    "MUSCLE_KEYWORDS",
    "UnknownAnatomyWarning",
    "AnatomyGraph",
    "build_anatomy_graph",
    "default_graph",
    "expand_selection",
    "normalize_anatomy_name",
    "is_muscle",
    "side_of",
    "strip_side",
]

ROOT = "anatomy"
TOP_CATEGORIES = ("bone", "lung", "soft_tissue")
MUSCLE_KEYWORDS = ("iliopsoas", "erector", "gluteus", "muscle")
_SIDES = ("left", "right")


def _pair(stem):
    return [f"{stem}_left", f"{stem}_right"]


ANATOMY_HIERARCHY: dict = {
    "bone": {
        "skull": None,
        "vertebrae": {
            "cervical_vertebrae": [f"vertebrae_C{i}" for i in range(1, 8)],
            "thoracic_vertebrae": [f"vertebrae_T{i}" for i in range(1, 13)],
            "lumbar_vertebrae": [f"vertebrae_L{i}" for i in range(1, 6)],
            "vertebrae_S1": None,
        },
        "sacrum": None,
        "ribs": {
            "ribs_left": [f"rib_left_{i}" for i in range(1, 13)],
            "ribs_right": [f"rib_right_{i}" for i in range(1, 13)],
        },
        "sternum": None,
        "costal_cartilages": None,
        "scapula": _pair("scapula"),
        "clavicula": _pair("clavicula"),
        "humerus": _pair("humerus"),
        "ulna": None,
        "radius": None,
        "carpal": None,
        "metacarpal": None,
        "phalanges_hand": None,
        "hip": _pair("hip"),
        "femur": _pair("femur"),
        "patella": None,
        "tibia": None,
        "fibula": None,
        "tarsal": None,
        "metatarsal": None,
        "phalanges_feet": None,
    },
    "lung": {
        "lung_left": ["lung_upper_lobe_left", "lung_lower_lobe_left"],
        "lung_right": ["lung_upper_lobe_right", "lung_middle_lobe_right", "lung_lower_lobe_right"],
    },
    "soft_tissue": {
        "brain": None,
        "face": None,
        "spinal_cord": None,
        "larynx": None,
        "thyroid_gland": None,
        "trachea": None,
        "esophagus": None,
        "stomach": None,
        "small_bowel": None,
        "duodenum": None,
        "colon": None,
        "liver": None,
        "gallbladder": None,
        "pancreas": None,
        "spleen": None,
        "kidney": _pair("kidney"),
        "kidney_cyst": _pair("kidney_cyst"),
        "adrenal_gland": _pair("adrenal_gland"),
        "urinary_bladder": None,
        "prostate": None,
        "heart": None,
        "heart_myocardium": None,
        "heart_atrium_left": None,
        "heart_ventricle_left": None,
        "heart_atrium_right": None,
        "heart_ventricle_right": None,
        "atrial_appendage_left": None,
        "aorta": None,
        "pulmonary_artery": None,
        "pulmonary_vein": None,
        "brachiocephalic_trunk": None,
        "subclavian_artery": _pair("subclavian_artery"),
        "common_carotid_artery": _pair("common_carotid_artery"),
        "brachiocephalic_vein": _pair("brachiocephalic_vein"),
        "superior_vena_cava": None,
        "inferior_vena_cava": None,
        "portal_vein_and_splenic_vein": None,
        "iliac_artery": _pair("iliac_artery"),
        "iliac_vena": _pair("iliac_vena"),
        "gluteus_maximus": _pair("gluteus_maximus"),
        "gluteus_medius": _pair("gluteus_medius"),
        "gluteus_minimus": _pair("gluteus_minimus"),
        "autochthon": _pair("autochthon"),
        "iliopsoas": _pair("iliopsoas"),
        "skeletal_muscle": None,
        "subcutaneous_fat": None,
        "torso_fat": None,
        "body_trunc": None,
        "body_extremities": None,
    },
}

BASE_GROUPS = ("bone", "digestive_accessory", "intestine", "muscle", "endocrine",
               "parenchyma", "vasculature", "urinary")

# Members may name other groups; those are flattened when the graph is built.
ANATOMY_GROUPS: dict[str, list[str]] = {
    "bone": ["bone"],
    "digestive_accessory": ["liver", "gallbladder", "pancreas"],
    "intestine": ["small_bowel", "duodenum", "colon"],
    "muscle": ["gluteus_maximus", "gluteus_medius", "gluteus_minimus", "autochthon",
               "iliopsoas", "skeletal_muscle"],
    "endocrine": ["thyroid_gland", "adrenal_gland", "pancreas"],
    "parenchyma": ["liver", "spleen", "kidney", "pancreas", "brain"],
    "vasculature": ["aorta", "pulmonary_artery", "pulmonary_vein", "brachiocephalic_trunk",
                    "subclavian_artery", "common_carotid_artery", "brachiocephalic_vein",
                    "superior_vena_cava", "inferior_vena_cava", "portal_vein_and_splenic_vein",
                    "iliac_artery", "iliac_vena"],
    "urinary": ["kidney", "urinary_bladder"],
    "cardiovascular": ["vasculature", "heart", "heart_myocardium", "heart_atrium_left",
                       "heart_ventricle_left", "heart_atrium_right", "heart_ventricle_right",
                       "atrial_appendage_left"],
    "musculoskeletal": ["bone", "muscle"],
    "gastrointestinal": ["esophagus", "stomach", "intestine"],
    "digestive": ["gastrointestinal", "digestive_accessory"],
}

# alias -> canonical (canonical names follow the segmentation model vocabulary)
SYNONYMS: dict[str, str] = {
    "pelvic": "hip",
    "pelvic_bone": "hip",
    "pelvis": "hip",
    "spinal_erectors": "autochthon",
    "spinal_erector": "autochthon",
    "erector_spinae": "autochthon",
    "gall_bladder": "gallbladder",
    "bladder": "urinary_bladder",
    "clavicle": "clavicula",
    "small_intestine": "small_bowel",
    "large_intestine": "colon",
    "psoas": "iliopsoas",
    "thyroid": "thyroid_gland",
    "adrenal": "adrenal_gland",
    "body_trunk": "body_trunc",
}


class UnknownAnatomyWarning(UserWarning):
    pass


def _slug(name: str) -> str:
    return re.sub(r"[\s\-]+", "_", name.strip().lower())


def side_of(name: str) -> Optional[str]:
    tokens = _slug(name).split("_")
    for s in _SIDES:
        if s in tokens:
            return s
    return None


def strip_side(name: str) -> str:
    return "_".join(t for t in _slug(name).split("_") if t not in _SIDES)


def _iter_hierarchy(tree, parent):
    if tree is None:
        return
    if isinstance(tree, Mapping):
        for child, sub in tree.items():
            yield parent, child
            yield from _iter_hierarchy(sub, child)
    else:
        for child in tree:
            yield parent, child


def _vocabulary() -> dict[str, str]:
    """Lower-cased name -> canonical spelling (e.g. ``vertebrae_l1`` -> ``vertebrae_L1``)."""
    from .class_maps import _bundled

    words = {ROOT}
    for p, c in _iter_hierarchy(ANATOMY_HIERARCHY, ROOT):
        words.update((p, c))
    words.update(ANATOMY_GROUPS)
    for cm in _bundled().values():
        words.update(cm.names())
    return {w.lower(): w for w in sorted(words)}


_VOCAB: Optional[dict] = None


def normalize_anatomy_name(name: str) -> str:
    """Map a clinical alias to the canonical anatomy name.

    ``"pelvic"`` becomes ``"hip"``, ``"spinal erectors"`` becomes
    ``"autochthon"`` and side qualifiers are carried over (``"pelvic left"``
    becomes ``"hip_left"``). Names outside the known vocabulary are returned
    unchanged and an :class:`UnknownAnatomyWarning` is emitted.
    """
    global _VOCAB
    if _VOCAB is None:
        _VOCAB = _vocabulary()
    slug = _slug(name)
    if slug in SYNONYMS:
        return SYNONYMS[slug]
    if slug in _VOCAB:
        return _VOCAB[slug]
    side = side_of(slug)
    if side is not None:
        stem = strip_side(slug)
        stem = SYNONYMS.get(stem, stem)
        for candidate in (f"{stem}_{side}", f"{side}_{stem}"):
            if candidate.lower() in _VOCAB:
                return _VOCAB[candidate.lower()]
        if stem.lower() in _VOCAB:
            return f"{_VOCAB[stem.lower()]}_{side}"
    warnings.warn(f"unknown anatomy name {name!r}", UnknownAnatomyWarning, stacklevel=2)
    return name


def is_muscle(name: str) -> bool:
    """True if ``name`` (or one of its aliases) contains a muscle search keyword."""
    slug = _slug(name)
    canonical = strip_side(slug)
    texts = [slug] + [alias for alias, canon in SYNONYMS.items() if canon == canonical]
    return any(k in t for t in texts for k in MUSCLE_KEYWORDS)


class AnatomyGraph:
    """Directed anatomy multigraph with hierarchy and group-tagged edges."""

    def __init__(self, graph: nx.MultiDiGraph):
        self.graph = graph

    def __eq__(self, other):
        return isinstance(other, AnatomyGraph) and self.to_dict() == other.to_dict()

    def __contains__(self, name) -> bool:
        return name in self.graph

    def __repr__(self):
        return f"AnatomyGraph(nodes={self.graph.number_of_nodes()}, leaves={len(self.leaves)}, groups={len(self.groups)})"

    @cached_property
    def hierarchy(self) -> nx.DiGraph:
        h = nx.DiGraph()
        h.add_nodes_from(self.graph.nodes)
        h.add_edges_from((u, v) for u, v, d in self.graph.edges(data=True) if d["kind"] == "hierarchy")
        return h

    @cached_property
    def leaves(self) -> frozenset:
        h = self.hierarchy
        return frozenset(n for n in h.nodes if h.out_degree(n) == 0 and n != ROOT)

    @cached_property
    def groups(self) -> dict[str, frozenset]:
        out: dict[str, set] = {}
        for _, v, d in self.graph.edges(data=True):
            if d["kind"] == "group":
                out.setdefault(d["tag"], set()).add(v)
        return {k: frozenset(v) for k, v in out.items()}

    @property
    def nodes(self) -> list[str]:
        return sorted(self.graph.nodes)

    def parent(self, name: str) -> Optional[str]:
        preds = list(self.hierarchy.predecessors(name))
        return preds[0] if preds else None

    def ancestors(self, name: str) -> set:
        return nx.ancestors(self.hierarchy, name)

    def leaves_under(self, name: str) -> list[str]:
        if name in self.leaves:
            return [name]
        desc = nx.descendants(self.hierarchy, name)
        return sorted(d for d in desc if d in self.leaves)

    def top_category(self, name: str) -> Optional[str]:
        if name in TOP_CATEGORIES:
            return name
        for a in self.ancestors(name):
            if a in TOP_CATEGORIES:
                return a
        return None

    def expand(self, selector: str) -> list[str]:
        """Leaf names selected by an anatomy, group or side-qualified name."""
        if selector in self.groups:
            out: set = set()
            for member in self.groups[selector]:
                out.update(self.leaves_under(member))
            return sorted(out)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", UnknownAnatomyWarning)
            name = normalize_anatomy_name(selector)
        if name in self.graph and name != ROOT:
            return self.leaves_under(name)
        if name in self.groups:
            return self.expand(name)
        side = side_of(name)
        if side is not None:
            stem = strip_side(name)
            if stem in self.graph or stem in self.groups:
                picked = [leaf for leaf in self.expand(stem) if side_of(leaf) == side]
                if picked:
                    return picked
        raise KeyError(f"unknown anatomy selector {selector!r}")

    def for_masks(self, names: Iterable[str]) -> "AnatomyGraph":
        """Subgraph in which exactly ``names`` are the leaves.

        Keeps the given nodes and their ancestors, plus group edges between
        kept nodes. A requested name that is an internal node of the full
        graph (e.g. unsided ``"humerus"``) becomes a leaf.
        """
        names = set(names)
        missing = sorted(n for n in names if n not in self.graph)
        if missing:
            raise KeyError(f"anatomies not in graph: {missing}")
        keep = set(names)
        for n in names:
            anc = self.ancestors(n)
            clash = anc & names
            if clash:
                raise ValueError(f"{n!r} and its ancestor {sorted(clash)[0]!r} cannot both be leaves")
            keep.update(anc)
        sub = nx.MultiDiGraph()
        sub.add_nodes_from(sorted(keep))
        for u, v, k, d in self.graph.edges(keys=True, data=True):
            if u in keep and v in keep:
                sub.add_edge(u, v, key=k, **d)
        return AnatomyGraph(sub)

    def to_dict(self) -> dict:
        edges = sorted(
            [u, v, d["kind"], d.get("tag") or ""] for u, v, d in self.graph.edges(data=True)
        )
        return {"nodes": sorted(self.graph.nodes), "edges": edges}

    @classmethod
    def from_dict(cls, d: Mapping) -> "AnatomyGraph":
        g = nx.MultiDiGraph()
        g.add_nodes_from(d["nodes"])
        for u, v, kind, tag in d["edges"]:
            key = "hierarchy" if kind == "hierarchy" else f"group:{tag}"
            g.add_edge(u, v, key=key, kind=kind, tag=tag or None)
        if not nx.is_directed_acyclic_graph(AnatomyGraph(g).hierarchy):
            raise ValueError("anatomy hierarchy contains a cycle")
        return cls(g)


def _resolve_group(group, groups, graph, trail=()) -> set:
    if group in trail:
        raise ValueError(f"group definitions are circular: {' -> '.join(trail + (group,))}")
    out = set()
    for member in groups[group]:
        if member in groups and member != group:
            out |= _resolve_group(member, groups, graph, trail + (group,))
            continue
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", UnknownAnatomyWarning)
            node = normalize_anatomy_name(member)
        if node not in graph:
            raise KeyError(f"group {group!r}: unresolvable member {member!r}")
        out.add(node)
    return out


def build_anatomy_graph(hierarchy: Optional[Mapping] = None,
                        groups: Optional[Mapping[str, Sequence[str]]] = None,
                        require_categories: bool = True) -> AnatomyGraph:
    """Build the multigraph from a nested hierarchy and a group table."""
    hierarchy = ANATOMY_HIERARCHY if hierarchy is None else hierarchy
    groups = ANATOMY_GROUPS if groups is None else groups
    g = nx.MultiDiGraph()
    g.add_node(ROOT)
    for parent, child in _iter_hierarchy(hierarchy, ROOT):
        if g.has_edge(parent, child, key="hierarchy"):
            continue
        g.add_edge(parent, child, key="hierarchy", kind="hierarchy", tag=None)
    h = nx.DiGraph((u, v) for u, v, d in g.edges(data=True) if d["kind"] == "hierarchy")
    if not nx.is_directed_acyclic_graph(h):
        raise ValueError("anatomy hierarchy contains a cycle")
    if require_categories:
        missing = [c for c in TOP_CATEGORIES if not g.has_edge(ROOT, c)]
        if missing:
            raise ValueError(f"hierarchy lacks top categories {missing}")
    for name in groups:
        for member in sorted(_resolve_group(name, groups, g)):
            parents = list(h.predecessors(member)) if member in h else []
            parent = parents[0] if parents else ROOT
            g.add_edge(parent, member, key=f"group:{name}", kind="group", tag=name)
    return AnatomyGraph(g)


_DEFAULT: Optional[AnatomyGraph] = None


def default_graph() -> AnatomyGraph:
    global _DEFAULT
    if _DEFAULT is None:
        _DEFAULT = build_anatomy_graph()
    return _DEFAULT


def expand_selection(graph: AnatomyGraph, selector: Union[str, Sequence[str]]) -> list[str]:
    """Sorted leaf names for one selector or the union over several."""
    if isinstance(selector, str):
        return graph.expand(selector)
    out: set = set()
    for s in selector:
        out.update(graph.expand(s))
    return sorted(out)
