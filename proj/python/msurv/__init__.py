"""Missing-aware multimodal survival toolkit (python bindings)."""

from ._core import (  # noqa: F401
    Cohort,
    ModalityBlock,
    MsurvError,
    apply_missingness,
    cox_nll,
    cox_nll_grad,
    cumulative_dynamic_auc,
    harrell_c,
    km_estimate,
    late_fuse,
    load_cohort,
    logrank_test,
    optimal_threshold,
    run_cv,
    stratified_kfold,
    synth_cohort,
    td_auc,
    uno_c,
    write_cohort,
)

__all__ = [
    "Cohort",
    "ModalityBlock",
    "MsurvError",
    "apply_missingness",
    "cox_nll",
    "cox_nll_grad",
    "cumulative_dynamic_auc",
    "harrell_c",
    "km_estimate",
    "late_fuse",
    "load_cohort",
    "logrank_test",
    "optimal_threshold",
    "run_cv",
    "stratified_kfold",
    "synth_cohort",
    "td_auc",
    "uno_c",
    "write_cohort",
]
