"""Classification via segmentation."""

from ._core import (
    ConfigError,
    DivergenceError,
    LoadError,
    Model,
    ShapeError,
    ValidationError,
    annotation_cost,
    annotation_rates,
    argmax_mask,
    binarize,
    class_cross_entropy,
    class_scores_batch,
    class_scores_from_seg,
    kfold_split,
    mean_iou,
    pixel_cross_entropy,
    run_cli,
    synthetic_shapes,
)

__all__ = [name for name in dir() if not name.startswith("_")]
