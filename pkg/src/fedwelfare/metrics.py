"""Total social welfare (TSW) and total selection fairness index (TSFI)."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

from .economics import RoundRecord
from .errors import ValidationError

RETROSPECTIVE = "retrospective"
HISTORICAL = "historical"
SEMANTICS = (RETROSPECTIVE, HISTORICAL)


@dataclass
class MetricsSeries:
    semantics: str
    tsw: list = field(default_factory=list)
    tsfi: list = field(default_factory=list)


def round_welfare(record: RoundRecord) -> float:
    return sum(record.rows[n].profit for n in sorted(record.active))


def total_social_welfare(records: Sequence[RoundRecord], upto: int | None = None) -> float:
    """Cumulative profit of the retained clients over rounds 1..upto."""
    upto = len(records) if upto is None else upto
    return float(sum(round_welfare(r) for r in records[:upto]))


def total_selection_fairness(records: Sequence[RoundRecord], upto: int | None = None,
                             semantics: str = RETROSPECTIVE) -> float:
    """Share of all recorded contribution held by the selected clients.

    ``retrospective`` counts, for every past round, the contribution of the
    clients still active after round ``upto``; ``historical`` counts each
    round's own active set. Returns NaN when the total contribution is 0.
    """
    if semantics not in SEMANTICS:
        raise ValidationError(f"unknown TSFI semantics {semantics!r}")
    upto = len(records) if upto is None else upto
    window = records[:upto]
    if not window:
        return math.nan
    current = set(window[-1].active)
    num = den = 0.0
    for r in window:
        selected = current if semantics == RETROSPECTIVE else set(r.active)
        for n in sorted(r.rows):
            q = r.rows[n].q
            den += q
            if n in selected:
                num += q
    return num / den if den != 0 else math.nan


def metrics_series(records: Sequence[RoundRecord], semantics: str = RETROSPECTIVE) -> MetricsSeries:
    out = MetricsSeries(semantics)
    tsw = 0.0
    for t in range(1, len(records) + 1):
        tsw += round_welfare(records[t - 1])
        out.tsw.append(tsw)
        out.tsfi.append(total_selection_fairness(records, t, semantics))
    return out
