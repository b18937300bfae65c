"""Metric DSM completion from RGB imagery, relative monocular depth and
incomplete height priors."""

from .raster import (
    BitMask,
    GridMeta,
    HeightRaster,
    RasterError,
    RelativeDepthMap,
    RgbImage,
    dilate_mask,
    load_raster,
    save_raster,
    tile,
)
from .degrade import (
    DegradationError,
    DegradationResult,
    DegradationSpec,
    LulcClass,
    LulcRaster,
    apply_degradation,
    build_change_mask,
)
from .baselines import (
    AffinePair,
    AlignmentError,
    NeighborQueryConfig,
    apply_affine,
    bilinear_fill,
    global_affine_fit,
    knn_affine_complete,
    lwlr_complete,
)
from .features import (
    BackboneHandle,
    DenseFeatureMap,
    FeatureError,
    load_backbone,
    make_toy_backbone,
    rgb_to_tensor,
    strided_dense_extract,
    strided_feature_grid,
    upsample_cells,
)
from .tta import (
    AffineField,
    LoraLinear,
    ScaleShiftHead,
    TtaConfig,
    TtaError,
    TtaResult,
    compose_metric,
    inject_lora,
    predict_affine_field,
    tta_optimize,
)
from .metrics import MetricsReport, MetricError, evaluate_completed, mae, rmse, ssim

__version__ = "0.1.0"

__all__ = [
    "AffineField",
    "AffinePair",
    "AlignmentError",
    "BackboneHandle",
    "BitMask",
    "DegradationError",
    "DegradationResult",
    "DegradationSpec",
    "DenseFeatureMap",
    "FeatureError",
    "GridMeta",
    "HeightRaster",
    "LoraLinear",
    "LulcClass",
    "LulcRaster",
    "MetricError",
    "MetricsReport",
    "NeighborQueryConfig",
    "RasterError",
    "RelativeDepthMap",
    "RgbImage",
    "ScaleShiftHead",
    "TtaConfig",
    "TtaError",
    "TtaResult",
    "apply_affine",
    "apply_degradation",
    "bilinear_fill",
    "build_change_mask",
    "compose_metric",
    "dilate_mask",
    "evaluate_completed",
    "global_affine_fit",
    "inject_lora",
    "knn_affine_complete",
    "load_backbone",
    "load_raster",
    "lwlr_complete",
    "mae",
    "make_toy_backbone",
    "predict_affine_field",
    "rgb_to_tensor",
    "rmse",
    "save_raster",
    "ssim",
    "strided_dense_extract",
    "strided_feature_grid",
    "tile",
    "tta_optimize",
    "upsample_cells",
]
