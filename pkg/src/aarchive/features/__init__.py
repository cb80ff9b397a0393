"""Body composition metrics, bin widths, voxel features and SAP pooling."""
from .binning import DEFAULT_ROUNDING_TARGETS, optimal_hist_bin_width, round_bin_width
from .body import (
    DEFAULT_HU_RANGES,
    SUPPORTED_CONFIG_KEYS,
    BodyComponentResult,
    ConfigError,
    body_component_analysis,
    central_plane_index,
    enforce_fat_range,
    split_muscle_by_hu,
    validate_target_eva_config,
)
from .sap import SapResult, condition_subsets, sap_pool, sap_pool_vectors, standardize
from .voxel import (
    FIRST_ORDER_FEATURES,
    ExtractionParams,
    FeatureMapStack,
    VoxelFeatureMaps,
    build_feature_stack,
    export_feature_csv,
    extract_voxel_features,
    first_order_features,
    mask_bounding_box,
    neighborhood_offsets,
    reconstruct_global_feature_map,
)

__all__ = [
    "DEFAULT_HU_RANGES",
    "DEFAULT_ROUNDING_TARGETS",
    "FIRST_ORDER_FEATURES",
    "SUPPORTED_CONFIG_KEYS",
    "BodyComponentResult",
    "ConfigError",
    "ExtractionParams",
    "FeatureMapStack",
    "SapResult",
    "VoxelFeatureMaps",
    "body_component_analysis",
    "build_feature_stack",
    "central_plane_index",
    "condition_subsets",
    "enforce_fat_range",
    "export_feature_csv",
    "extract_voxel_features",
    "first_order_features",
    "mask_bounding_box",
    "neighborhood_offsets",
    "optimal_hist_bin_width",
    "reconstruct_global_feature_map",
    "round_bin_width",
    "sap_pool",
    "sap_pool_vectors",
    "split_muscle_by_hu",
    "standardize",
    "validate_target_eva_config",
]
