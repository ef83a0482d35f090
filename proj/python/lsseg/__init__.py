"""Cascaded liver and lesion segmentation of CT volumes.

Volumes are exchanged as ``Volume`` objects; ``Volume.to_numpy()`` returns a
float32 array indexed ``[z, y, x]`` and ``Volume(array, spacing, kind, dtype)``
builds one from such an array. ``run_cli`` runs the command-line tool
in-process.
"""

from ._lsseg import (
    ConfigError,
    DataError,
    Error,
    FormatError,
    IoError,
    PipelineError,
    ScalarType,
    ShapeError,
    TrainingError,
    UsageError,
    Volume,
    VolumeKind,
    clip_hu,
    connected_components,
    dice,
    evaluate_case,
    format_run_config,
    generate_phantom,
    largest_component,
    load_volume,
    lr_at_epoch,
    normalize_hu,
    resample,
    run_cascade,
    run_cli,
    rvd,
    save_mvol,
    voe,
    weighted_ce_loss,
    weighted_layer_count,
)

__all__ = [name for name in dir() if not name.startswith("_")]
__version__ = "0.1.0"
