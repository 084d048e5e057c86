"""Python bindings for the dpm library."""

from ._core import (
    CalibConfig,
    Dataset,
    DpmError,
    IoError,
    Scorer,
    SeqModel,
    TrainConfig,
    calibrate,
    compare_rl,
    compute_a,
    compute_r,
    consensus_bracket,
    empirical_prior,
    evaluate,
    featurize,
    kl_divergence,
    map_mi_code,
    ranking_loss,
    read_dataset,
    simulate,
    spearman,
    sweep_k,
    tokenize,
    train_generator,
    train_preference,
    write_dataset,
)

__all__ = [name for name in dir() if not name.startswith("_")]
