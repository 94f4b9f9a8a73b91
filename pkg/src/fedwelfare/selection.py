"""Client selection: loss-maker candidates, the welfare/fairness objective
and an exhaustive search over candidate eliminations."""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Hashable, Iterable, Mapping

from .errors import ConfigurationError, FederationTerminated, ValidationError

MAX_CANDIDATES = 20


@dataclass(frozen=True)
class SelectionDecision:
    retained: tuple
    eliminated: tuple
    objective: float
    candidates: tuple          # the loss-making clients E(t)
    candidates_considered: int  # subsets of E(t) actually scored


def candidate_eliminations(profits: Mapping[Hashable, float]) -> tuple:
    """Clients making a strict loss this round, sorted by id."""
    return tuple(sorted(n for n, p in profits.items() if p < 0))


def selection_penalty(retained: Iterable, eliminated: Iterable,
                      q: Mapping[Hashable, float]) -> float:
    """Eliminated contribution relative to retained contribution.

    Zero when nothing is eliminated; +inf when the retained contribution
    is not positive (the ratio has no meaning there).
    """
    eliminated = list(eliminated)
    if not eliminated:
        return 0.0
    denom = sum(q[n] for n in sorted(retained))
    if denom <= 0:
        return math.inf
    return sum(q[n] for n in sorted(eliminated)) / denom


def selection_objective(retained: Iterable, eliminated: Iterable,
                        profits: Mapping[Hashable, float], q: Mapping[Hashable, float],
                        mu: float) -> float:
    """Retained profit minus ``mu`` times the selection-fairness penalty.

    The penalty enters once per candidate set, not once per retained client.
    """
    retained = sorted(retained)
    if not retained:
        raise ValidationError("objective is undefined for an empty retained set")
    welfare = sum(profits[n] for n in retained)
    if mu == 0:
        return welfare
    return welfare - mu * selection_penalty(retained, eliminated, q)


def _tie_key(objective: float, eliminated: tuple):
    return (-objective, len(eliminated), eliminated)


def select_active_set(previous: Iterable, profits: Mapping[Hashable, float],
                      q: Mapping[Hashable, float], mu: float,
                      candidates: Iterable | None = None) -> SelectionDecision:
    """Search every subset of the candidate set for the best elimination.

    ``candidates`` defaults to the loss-makers among ``previous``; passing
    the whole of ``previous`` gives the unrestricted brute force. Ties go to
    fewer eliminations, then to the lexicographically smallest eliminated ids.
    """
    if not math.isfinite(mu) or mu < 0:
        raise ValidationError("mu must be finite and non-negative")
    previous = tuple(sorted(previous))
    if candidates is None:
        candidates = candidate_eliminations({n: profits[n] for n in previous})
    candidates = tuple(sorted(candidates))
    if len(candidates) > MAX_CANDIDATES:
        raise ConfigurationError(
            f"{len(candidates)} candidates exceed the powerset limit of {MAX_CANDIDATES}")

    best = None
    considered = 0
    for k in range(len(candidates) + 1):
        for eliminated in itertools.combinations(candidates, k):
            gone = set(eliminated)
            retained = tuple(n for n in previous if n not in gone)
            if not retained:
                continue
            considered += 1
            f = selection_objective(retained, eliminated, profits, q, mu)
            key = _tie_key(f, eliminated)
            if best is None or key < best[0]:
                best = (key, retained, eliminated, f)
    if best is None:
        raise FederationTerminated("every candidate elimination empties the federation")
    _, retained, eliminated, f = best
    return SelectionDecision(retained, eliminated, f, candidates, considered)


def least_lenient(previous: Iterable, profits: Mapping[Hashable, float]) -> tuple:
    """Keep the profit-makers.

    When nobody makes a profit a federation of zero clients is not an
    option, so the smallest loss survives (highest id on ties), which ends
    the federation anyway.
    """
    previous = sorted(previous)
    keep = tuple(n for n in previous if profits[n] >= 0)
    if keep:
        return keep
    best = max(profits[n] for n in previous)
    return (max(n for n in previous if profits[n] == best),)
