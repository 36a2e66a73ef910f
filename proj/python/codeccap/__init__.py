"""Codec-aligned video captioning: segmentation, aggregation, QA tooling."""

from ._codeccap import (  # noqa: F401
    BackendError,
    Error,
    InputError,
    StateError,
    aggregate_document,
    allocate_budget,
    capability_names,
    compute_stats,
    gap_cv,
    largest_remainder,
    phase_a_classify,
    phase_b_classify,
    plan_segments,
    redundancy_report,
    relabel_capability,
    run_cli,
    select_mode,
    validate_document,
)

__version__ = "0.1.0"
