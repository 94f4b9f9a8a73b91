"""Per-round utility, cost, budget and the budget-balanced money transfer."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Hashable, Mapping

from .errors import ValidationError

ClientId = Hashable


@dataclass(frozen=True)
class ClientEconParams:
    u: float = 1.0          # revenue per unit of accuracy gained
    c_data: float = 2e-4    # money per collected sample
    c_train: float = 0.0    # money per local SGD step
    c_comm: float = 0.0     # money per round

    def __post_init__(self):
        for name in ("u", "c_data", "c_train", "c_comm"):
            if getattr(self, name) < 0:
                raise ValidationError(f"{name} must be non-negative")


@dataclass
class RoundEconRecord:
    client: ClientId
    utility: float = 0.0
    cost: float = 0.0
    profit: float = 0.0
    q: float = 0.0
    payoff: float = 0.0
    mt: float = 0.0
    active: bool = False
    equal_split: bool = False   # money transfer fell back to an equal split


def compute_utility(u: float, eps_t: float, eps_prev: float) -> float:
    return u * (eps_t - eps_prev)


def compute_cost(params: ClientEconParams, samples: float, iterations: float) -> float:
    if samples < 0 or iterations < 0:
        raise ValidationError("sample and iteration counts must be non-negative")
    return params.c_data * samples + params.c_train * iterations + params.c_comm


def compute_budget(profits: Mapping[ClientId, float]) -> float:
    """Net profit of the retained clients; 0 for an empty set."""
    return float(sum(profits.values()))


def money_transfer(profits: Mapping[ClientId, float],
                   q: Mapping[ClientId, float]) -> tuple[dict, dict, bool]:
    """Redistribute the budget so payoffs are proportional to contribution.

    ``profits`` and ``q`` are keyed by the retained clients. Contributions
    are clamped at zero for the shares; if every clamped share is zero the
    budget is split equally. Returns ``(payoff, mt, equal_split)``.
    """
    if not profits:
        raise ValidationError("money transfer needs at least one retained client")
    if set(profits) != set(q):
        raise ValidationError("profits and contributions cover different clients")
    budget = compute_budget(profits)
    clamped = {n: max(float(q[n]), 0.0) for n in profits}
    total = sum(clamped.values())
    equal_split = total <= 0.0
    if equal_split:
        payoff = {n: budget / len(profits) for n in profits}
    else:
        payoff = {n: clamped[n] / total * budget for n in profits}
    mt = {n: payoff[n] - profits[n] for n in profits}
    return payoff, mt, equal_split


@dataclass
class RoundRecord:
    """One sharing round: the active sets around the decision and the
    economics of every client in the federation's roster."""

    round: int
    previous: tuple             # A(t-1)
    active: tuple               # A(t)
    candidates: tuple           # loss-makers E(t)
    rows: dict                  # client id -> RoundEconRecord
    objective: float = float("nan")
    candidates_considered: int = 0

    @property
    def eliminated(self) -> tuple:
        kept = set(self.active)
        return tuple(n for n in self.previous if n not in kept)
