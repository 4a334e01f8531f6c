"""Lyric intelligibility back-end: feature files, model, training and analysis."""

from ._core import (
    Error,
    Mode,
    ModelConfig,
    TrainConfig,
    Params,
    Excerpt,
    FoldResult,
    read_fmap,
    write_fmap,
    load_dataset,
    init_params,
    load_checkpoint,
    save_checkpoint,
    load_checkpoints,
    forward,
    ensemble_predict,
    rmse_percent,
    ncc,
    evaluate,
    synth_excerpt,
    generate_dataset,
    kfold_train,
    split_folds,
    normalized_lml_weights,
    ensemble_profiles,
)

__all__ = [name for name in dir() if not name.startswith("_")]
__version__ = "0.1.0"
