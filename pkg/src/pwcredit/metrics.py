"""Per-run outcome records and the episodes-to-threshold metric."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

DEFAULT_WINDOW = 100
DEFAULT_FRACTION = 0.95


def episodes_to_threshold(series, max_return: float, fraction: float = DEFAULT_FRACTION,
                          window: int = DEFAULT_WINDOW) -> Optional[int]:
    """First episode index whose trailing ``window``-episode mean reaches
    ``fraction * max_return``; None if it never does.

    Only full windows count, so the earliest possible answer is ``window - 1``.
    """
    x = np.asarray(series, dtype=np.float64)
    if x.size == 0:
        raise ValueError("empty return series")
    if not 0.0 < fraction <= 1.0:
        raise ValueError(f"fraction must lie in (0, 1], got {fraction}")
    if window < 1:
        raise ValueError("window must be >= 1")
    if x.size < window:
        return None
    csum = np.concatenate([[0.0], np.cumsum(x)])
    means = (csum[window:] - csum[:-window]) / window
    # tolerate summation round-off on exact hits
    hit = np.nonzero(means >= fraction * max_return - 1e-9 * max(1.0, abs(max_return)))[0]
    return int(hit[0]) + window - 1 if hit.size else None


@dataclass
class RunMetrics:
    returns: list[float] = field(default_factory=list)
    max_return: float = 1.0
    fraction: float = DEFAULT_FRACTION
    window: int = DEFAULT_WINDOW
    weight_snapshots: dict[int, np.ndarray] = field(default_factory=dict)
    wall_clock: float = 0.0

    def __post_init__(self):
        if not 0.0 < self.fraction <= 1.0:
            raise ValueError("threshold fraction must lie in (0, 1]")

    @property
    def num_episodes(self) -> int:
        return len(self.returns)

    @property
    def episodes_to_threshold(self) -> Optional[int]:
        if not self.returns:
            return None
        return episodes_to_threshold(self.returns, self.max_return, self.fraction, self.window)
