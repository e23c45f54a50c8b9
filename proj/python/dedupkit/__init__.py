"""Semantic deduplication (SemDeDup, FairDeDup) and fairness auditing."""

import json as _json

from ._core import (  # noqa: F401
    ConfigError,
    DimensionError,
    EmbeddingMatrix,
    EmptyReportError,
    Error,
    FormatError,
    IoError,
    OutOfRangeError,
    ValidationError,
    VocabularyError,
    aggregate_disparities,
    calibrate,
    dedup,
    fairdedup_select,
    generate_synthetic,
    kmeans,
    paired_t_test,
    read_embeddings,
    retention_study_json as _core_study,
    semdedup_filter,
    skew_metrics,
    write_embeddings,
)

__version__ = "0.1.0"


def retention_study(spec, n_trials=10, target_keep=0.5, tol=0.005, workers=1):
    """Run the minority-mass retention study; returns (report dict, text table)."""
    text = spec if isinstance(spec, str) else _json.dumps(spec)
    report, table = _core_study(text, n_trials, target_keep, tol, workers)
    return _json.loads(report), table

