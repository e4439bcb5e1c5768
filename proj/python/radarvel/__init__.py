"""Self-supervised velocity learning for radar grid detection."""

from ._core import (
    OBB,
    IoError,
    ValidationError,
    bev_distance,
    dataset_sizes,
    doppler,
    evaluate,
    evaluate_frames,
    filter_confident,
    gradcheck,
    match_boxes,
    match_for_eval,
    simulate,
    train,
    update_box,
    velocity_loss,
)

__all__ = [
    "OBB",
    "IoError",
    "ValidationError",
    "bev_distance",
    "dataset_sizes",
    "doppler",
    "evaluate",
    "evaluate_frames",
    "filter_confident",
    "gradcheck",
    "match_boxes",
    "match_for_eval",
    "simulate",
    "train",
    "update_box",
    "velocity_loss",
]
