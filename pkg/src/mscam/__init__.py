"""Weakly supervised multiscale class-activation localization in numpy."""
from .attention import block_cam, final_block_map, fuse, multiscale_map
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .localization import BBox, Detection, EvalReport, binarize, boxes_from_map, evaluate, iou
from .model import ModelConfig, init_model, loss, relevance_weights
from .pipeline import LocalizeParams, run_study
from .synthdata import ClassSpec, default_specs, generate, split
from .trainer import TrainConfig, train

__version__ = "0.1.0"

__all__ = [
    "BBox", "CheckpointError", "ClassSpec", "Detection", "EvalReport", "LocalizeParams", "ModelConfig",
    "TrainConfig", "binarize", "block_cam", "boxes_from_map", "default_specs", "evaluate", "final_block_map",
    "fuse", "generate", "init_model", "iou", "load_checkpoint", "loss", "multiscale_map", "relevance_weights",
    "run_study", "save_checkpoint", "split", "train",
]
