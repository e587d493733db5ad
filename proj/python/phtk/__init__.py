"""Python bindings for the phonological tokenizer core."""

from _phtk import (  # noqa: F401
    ConfigError,
    DataError,
    GenConfig,
    Generator,
    InfeasibleTargetError,
    InitError,
    bitrate,
    codebook_stats,
    config_hash,
    ctc_loss,
    levenshtein,
    lloyd,
    pearson,
    quantize,
    soft_assign,
    spearman,
)

__all__ = [
    "ConfigError",
    "DataError",
    "GenConfig",
    "Generator",
    "InfeasibleTargetError",
    "InitError",
    "bitrate",
    "codebook_stats",
    "config_hash",
    "ctc_loss",
    "levenshtein",
    "lloyd",
    "pearson",
    "quantize",
    "soft_assign",
    "spearman",
]
