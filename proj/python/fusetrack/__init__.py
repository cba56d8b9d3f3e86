"""Single-stage RGB-thermal tracker with a float64 autodiff kernel.

Boxes are (x, y, w, h) tuples in frame pixels. Configs are passed as text in
the same `key=value` format the command-line tool reads.
"""

from ._fusetrack import (
    ConfigError,
    ContractError,
    Tracker,
    VersionError,
    bench,
    center_error,
    default_config,
    evaluate,
    iou,
    load_config,
    parse_config,
    render_frame,
    selftest,
    total_loss,
)

__all__ = [
    "ConfigError",
    "ContractError",
    "Tracker",
    "VersionError",
    "bench",
    "center_error",
    "default_config",
    "evaluate",
    "iou",
    "load_config",
    "parse_config",
    "render_frame",
    "selftest",
    "total_loss",
]
__version__ = "0.1.0"
