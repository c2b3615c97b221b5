"""Bounds between contrastive and mean-supervised losses."""

from ._core import (
    BudgetExceeded,
    DomainError,
    UnsupportedConfiguration,
    bounds_report,
    collision_prob,
    compare_csv,
    competitor_bounds,
    contrastive_loss,
    coupon_collector_prob,
    delta_lower,
    delta_upper,
    essential_cont,
    essential_sup,
    expected_log_col_plus_one,
    feasible_region_contains,
    gen_circle,
    gradient_check,
    info_nce,
    log_cosh,
    log_sum_exp,
    mean_supervised_loss,
    train,
    verify_lemmas,
    verify_sandwich,
)

__all__ = [
    "BudgetExceeded",
    "DomainError",
    "UnsupportedConfiguration",
    "bounds_report",
    "collision_prob",
    "compare_csv",
    "competitor_bounds",
    "contrastive_loss",
    "coupon_collector_prob",
    "delta_lower",
    "delta_upper",
    "essential_cont",
    "essential_sup",
    "expected_log_col_plus_one",
    "feasible_region_contains",
    "gen_circle",
    "gradient_check",
    "info_nce",
    "log_cosh",
    "log_sum_exp",
    "mean_supervised_loss",
    "train",
    "verify_lemmas",
    "verify_sandwich",
]
