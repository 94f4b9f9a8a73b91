"""TSW and TSFI under both semantics."""
import math

import numpy as np
import pytest

from fedwelfare.economics import RoundEconRecord, RoundRecord
from fedwelfare.metrics import (HISTORICAL, RETROSPECTIVE, metrics_series,
                                total_selection_fairness, total_social_welfare)

ROUND1 = {1: (0.1, 0.4), 2: (0.05, 0.2), 3: (0.25, 0.4)}    # profit, q
ROUND2 = {1: (-0.05, 0.5), 2: (-0.05, 0.1), 3: (0.15, 0.4)}


def _record(t, previous, active, table):
    rows = {n: RoundEconRecord(n, profit=p, q=q, active=n in active)
            for n, (p, q) in table.items()}
    return RoundRecord(t, tuple(previous), tuple(active), (), rows)


def _scenario(eliminated):
    kept = tuple(n for n in (1, 2, 3) if n not in eliminated)
    return [_record(1, (1, 2, 3), (1, 2, 3), ROUND1), _record(2, (1, 2, 3), kept, ROUND2)]


@pytest.mark.parametrize("eliminated,tsw,tsfi", [
    ((1,), 0.5, 0.55), ((2,), 0.5, 0.85), ((1, 2), 0.55, 0.4), ((), 0.45, 1.0)])
def test_worked_scenarios(eliminated, tsw, tsfi):
    records = _scenario(eliminated)
    assert abs(total_social_welfare(records) - tsw) < 1e-12
    assert abs(total_selection_fairness(records) - tsfi) < 1e-12


def test_historical_semantics():
    records = _scenario((1,))
    assert abs(total_selection_fairness(records, semantics=HISTORICAL) - 0.75) < 1e-12
    keep_all = _scenario(())
    assert total_selection_fairness(keep_all, semantics=HISTORICAL) == pytest.approx(1.0)


def test_no_rounds():
    assert total_social_welfare([]) == 0.0
    assert math.isnan(total_selection_fairness([]))


def test_zero_contribution_is_nan():
    records = [_record(1, (1, 2), (1, 2), {1: (0.1, 0.0), 2: (0.2, 0.0)})]
    assert math.isnan(total_selection_fairness(records))


def _random_history(rng, rounds=8, n=5):
    active = tuple(range(n))
    records = []
    for t in range(1, rounds + 1):
        prev = active
        if len(active) > 1 and rng.random() < 0.3:
            gone = rng.choice(active)
            active = tuple(i for i in active if i != gone)
        table = {i: (float(rng.normal(0, 0.1)), float(rng.uniform(0, 1)) if i in prev else 0.0)
                 for i in range(n)}
        records.append(_record(t, prev, active, table))
    return records


def test_invariants():
    rng = np.random.default_rng(0)
    for _ in range(100):
        records = _random_history(rng)
        series = metrics_series(records)
        steps = np.diff([0.0] + series.tsw)
        for t, r in enumerate(records):
            assert steps[t] == pytest.approx(sum(r.rows[n].profit for n in r.active), abs=1e-12)
        assert series.tsw[-1] == pytest.approx(total_social_welfare(records), abs=1e-12)
        assert all(0.0 <= x <= 1.0 for x in series.tsfi)
        hist = metrics_series(records, HISTORICAL)
        for t in range(1, len(records) + 1):
            if all(r.active == records[0].active for r in records[:t]):
                assert hist.tsfi[t - 1] == series.tsfi[t - 1]


def test_no_eliminations_both_semantics_one():
    rng = np.random.default_rng(1)
    records = [_record(t, (0, 1, 2), (0, 1, 2),
                       {i: (0.0, float(rng.uniform(0, 1))) for i in range(3)})
               for t in range(1, 6)]
    for sem in (RETROSPECTIVE, HISTORICAL):
        assert metrics_series(records, sem).tsfi == [1.0] * 5
