"""Python bindings for the mismatch segmentation toolkit."""

from ._mismatch import (
    Model,
    analytic_erf_ratio_nasb,
    analytic_erf_ratio_pasb,
    bin_stats,
    dice_score,
    ece,
    generate_dataset,
    iou,
    mann_whitney_u,
    measure_plain_erf,
    path_weights,
    read_mmt,
    run_cli,
    write_mmt,
)

__all__ = [
    "Model",
    "analytic_erf_ratio_nasb",
    "analytic_erf_ratio_pasb",
    "bin_stats",
    "dice_score",
    "ece",
    "generate_dataset",
    "iou",
    "mann_whitney_u",
    "measure_plain_erf",
    "path_weights",
    "read_mmt",
    "run_cli",
    "write_mmt",
]
