"""Hybrid CNN / state-space medical image segmentation."""

from ._core import (
    AcmError,
    Model,
    dsc,
    dwt2_haar,
    gen_phantoms,
    hd95,
    idwt2_haar,
    loss,
    param_count,
    phantom,
    read_tensor,
    run_cli,
    scan_expand,
    scan_merge,
    scan_order,
    selective_scan,
    write_tensor,
)

__all__ = [
    "AcmError",
    "Model",
    "dsc",
    "dwt2_haar",
    "gen_phantoms",
    "hd95",
    "idwt2_haar",
    "loss",
    "param_count",
    "phantom",
    "read_tensor",
    "run_cli",
    "scan_expand",
    "scan_merge",
    "scan_order",
    "selective_scan",
    "write_tensor",
]
