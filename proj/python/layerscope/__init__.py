"""Layer-wise PWCCA analysis of speech encoder representations."""

from ._layerscope import (
    LayerscopeError,
    analyze,
    canonical_correlations,
    log_mel,
    onehot,
    probe_accuracy,
    pwcca,
    read_rep,
    spearman,
    train_probe,
    validate_manifest,
    write_rep,
    write_synthetic_dump,
)

__all__ = [
    "LayerscopeError",
    "analyze",
    "canonical_correlations",
    "log_mel",
    "onehot",
    "probe_accuracy",
    "pwcca",
    "read_rep",
    "spearman",
    "train_probe",
    "validate_manifest",
    "write_rep",
    "write_synthetic_dump",
]
