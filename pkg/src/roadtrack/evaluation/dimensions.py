"""Signed annotation dimension errors per vehicle class."""
from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ..exceptions import ValidationError


@dataclass(frozen=True, eq=False)
class DimensionStats:
    count: int
    mean: np.ndarray  # (dl, dw, dh), annotated - true
    std: np.ndarray  # sample standard deviation; NaN for a single pair
    under_1ft_pct: np.ndarray  # share of pairs with |error| < 1 ft per dimension


def _stats(err: np.ndarray) -> DimensionStats:
    std = err.std(axis=0, ddof=1) if len(err) > 1 else np.full(3, np.nan)
    return DimensionStats(len(err), err.mean(axis=0), std, 100.0 * np.mean(np.abs(err) < 1.0, axis=0))


def dimension_error_stats(
    pairs: Sequence[tuple[str, Sequence[float], Sequence[float]]],
) -> dict[str, DimensionStats]:
    """Statistics per class plus ``"overall"`` from ``(class, annotated lwh, true lwh)`` triples."""
    if not pairs:
        raise ValidationError("need at least one pair")
    by_cls = defaultdict(list)
    rows = []
    for cls, ann, true in pairs:
        e = np.asarray(ann, dtype=float) - np.asarray(true, dtype=float)
        if e.shape != (3,):
            raise ValidationError("dimensions must be (l, w, h)")
        by_cls[cls].append(e)
        rows.append(e)
    out = {cls: _stats(np.array(v)) for cls, v in sorted(by_cls.items())}
    out["overall"] = _stats(np.array(rows))
    return out
