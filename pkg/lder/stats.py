from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Any, Dict

import numpy as np
from scipy import stats

from .errors import DimensionError, DomainError

EXACT_MAX_N = 25
MIN_PAIRS = 5


@dataclass(frozen=True)
class WilcoxonResult:
    statistic: float
    p_value: float
    n_used: int
    w_plus: float
    w_minus: float
    method: str
    degenerate: bool = False

    def as_dict(self) -> Dict[str, Any]:
        return {
            "statistic": self.statistic,
            "p_value": self.p_value,
            "n_used": self.n_used,
            "w_plus": self.w_plus,
            "w_minus": self.w_minus,
            "method": self.method,
            "degenerate": self.degenerate,
        }


def _exact_lower_tail(doubled_ranks: np.ndarray, doubled_w: int) -> float:
    """P(T <= W) under random signs, on the doubled-rank integer lattice."""
    total = int(doubled_ranks.sum())
    counts = np.zeros(total + 1, dtype=np.int64)
    counts[0] = 1
    for r in doubled_ranks:
        shifted = np.zeros_like(counts)
        shifted[r:] = counts[: total + 1 - r]
        counts = counts + shifted
    return float(counts[: doubled_w + 1].sum()) / float(2 ** doubled_ranks.size)


def wilcoxon_signed_rank(scores_a: Any, scores_b: Any) -> WilcoxonResult:
    """Two-sided signed-rank test; zero differences are discarded, ties get average ranks."""
    a = np.asarray(scores_a, dtype=np.float64)
    b = np.asarray(scores_b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise DimensionError(f"paired samples must be equal-length vectors, got {a.shape} and {b.shape}")
    if a.size < MIN_PAIRS:
        raise DomainError(f"need at least {MIN_PAIRS} pairs, got {a.size}")
    if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
        raise DomainError("paired samples must be finite")

    diff = a - b
    diff = diff[diff != 0.0]
    n = int(diff.size)
    if n == 0:
        return WilcoxonResult(statistic=0.0, p_value=1.0, n_used=0, w_plus=0.0, w_minus=0.0, method="none", degenerate=True)

    ranks = stats.rankdata(np.abs(diff))
    w_plus = float(ranks[diff > 0].sum())
    w_minus = float(ranks[diff < 0].sum())
    w = min(w_plus, w_minus)

    if n <= EXACT_MAX_N:
        doubled = np.rint(2.0 * ranks).astype(np.int64)
        p = 2.0 * _exact_lower_tail(doubled, int(round(2.0 * w)))
        method = "exact"
    else:
        mean = n * (n + 1) / 4.0
        _, tie_counts = np.unique(np.abs(diff), return_counts=True)
        var = n * (n + 1) * (2 * n + 1) / 24.0 - float(np.sum(tie_counts**3 - tie_counts)) / 48.0
        if var <= 0:
            p = 1.0
        else:
            z = (w - mean + 0.5) / math.sqrt(var)
            p = 2.0 * float(stats.norm.cdf(z))
        method = "normal"
    return WilcoxonResult(
        statistic=w,
        p_value=min(1.0, p),
        n_used=n,
        w_plus=w_plus,
        w_minus=w_minus,
        method=method,
    )
