"""segcurate: curation of generated training data for urban semantic
segmentation, driven by semantic label maps and object-consistency
scoring."""

__version__ = "0.1.0"

from .labelmap import (
    Component,
    ComponentSet,
    SemanticMap,
    VOID_ID,
    center_crop_ratio,
    connected_components,
    decode_color_map,
    decode_label_map,
    encode_label_map,
)
from .mcoc import McocReport, SelectionResult, rank_and_select, score_candidate
from .regularize import ConditionKind, ConditionSchedule, ErosionPolicy, erode_components
from .taxonomy import ClassTaxonomy, DatasetMapping, harmonize, load_mapping, present_classes

__all__ = [
    "Component",
    "ComponentSet",
    "SemanticMap",
    "VOID_ID",
    "center_crop_ratio",
    "connected_components",
    "decode_color_map",
    "decode_label_map",
    "encode_label_map",
    "McocReport",
    "SelectionResult",
    "rank_and_select",
    "score_candidate",
    "ConditionKind",
    "ConditionSchedule",
    "ErosionPolicy",
    "erode_components",
    "ClassTaxonomy",
    "DatasetMapping",
    "harmonize",
    "load_mapping",
    "present_classes",
    "__version__",
]
