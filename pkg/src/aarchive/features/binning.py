"""Histogram bin-width selection."""
from __future__ import annotations

from typing import Sequence

import numpy as np

__all__ = ["DEFAULT_ROUNDING_TARGETS", "round_bin_width", "optimal_hist_bin_width"]

DEFAULT_ROUNDING_TARGETS = (2, 5, 10, 20, 40, 50)


def round_bin_width(raw: float, rounding_targets: Sequence[float] = DEFAULT_ROUNDING_TARGETS) -> float:
    """Round to the nearest integer, then snap to the nearest preferred width.

    Ties between two targets go to the smaller one.
    """
    if not rounding_targets:
        raise ValueError("rounding_targets must not be empty")
    if not np.isfinite(raw) or raw <= 0:
        raise ValueError(f"bin width must be positive and finite, got {raw}")
    whole = np.floor(raw + 0.5)
    targets = np.sort(np.asarray(rounding_targets, dtype=float))
    return float(targets[np.argmin(np.abs(targets - whole))])


def optimal_hist_bin_width(values, rounding_targets: Sequence[float] = DEFAULT_ROUNDING_TARGETS) -> float:
    """Doane bin width of ``values`` snapped to ``rounding_targets``."""
    x = np.asarray(values, dtype=np.float64).ravel()
    if x.size < 3:
        raise ValueError("need at least 3 values")
    if not np.all(np.isfinite(x)):
        raise ValueError("values must be finite")
    if np.ptp(x) == 0:
        raise ValueError("values have zero range")
    edges = np.histogram_bin_edges(x, bins="doane")
    return round_bin_width(float(edges[1] - edges[0]), rounding_targets)
