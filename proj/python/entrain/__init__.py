"""Deconfounded neural measures of vocal entrainment (DR and A)."""

from ._core import (
    Corpus,
    EntrainError,
    Measure,
    Model,
    apply_functionals,
    bh_within_run,
    featurize_file,
    gradcheck,
    load_corpus,
    load_model,
    multi_run_significance,
    oracle_gap,
    pearson,
    percentile,
    shuffle_test,
    smooth_l1,
    smooth_l1_loss,
    split_corpus,
    synth,
    train,
)

__all__ = [
    "Corpus",
    "EntrainError",
    "Measure",
    "Model",
    "apply_functionals",
    "bh_within_run",
    "featurize_file",
    "gradcheck",
    "load_corpus",
    "load_model",
    "multi_run_significance",
    "oracle_gap",
    "pearson",
    "percentile",
    "shuffle_test",
    "smooth_l1",
    "smooth_l1_loss",
    "split_corpus",
    "synth",
    "train",
]
