"""Contribution measures q(n, t) and the collective-utility evaluator v(S)."""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Callable, Hashable, Iterable, Mapping, Sequence

import numpy as np

from .errors import ConfigurationError
from .model import FEDAVG, LabeledDataset, ParamVector, aggregate, evaluate_accuracy, redistribute

QUANTITATIVE = "quantitative"
MARGINAL = "marginal"
SHAPLEY_EXACT = "shapley-exact"
SHAPLEY_MC = "shapley-mc"
KINDS = (QUANTITATIVE, MARGINAL, SHAPLEY_EXACT, SHAPLEY_MC)

MAX_EXACT_PLAYERS = 20


@dataclass(frozen=True)
class ContributionMethod:
    kind: str = MARGINAL
    mc_permutations: int = 200

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigurationError(f"unknown contribution method {self.kind!r}")
        if self.mc_permutations < 1:
            raise ConfigurationError("mc_permutations must be positive")


class CollectiveUtility:
    """Memoizing wrapper around a subset-valuation function.

    ``fn`` receives a ``frozenset`` of client ids. The empty coalition is
    worth 0 and is never passed to ``fn``. ``evaluations`` counts distinct
    non-empty subsets actually evaluated.
    """

    def __init__(self, fn: Callable[[frozenset], float]):
        self._fn = fn
        self._memo: dict[frozenset, float] = {}

    def __call__(self, subset: Iterable) -> float:
        key = frozenset(subset)
        if not key:
            return 0.0
        if key not in self._memo:
            self._memo[key] = float(self._fn(key))
        return self._memo[key]

    @property
    def evaluations(self) -> int:
        return len(self._memo)


def model_collective_utility(local_models: Mapping[Hashable, ParamVector],
                             weights: Mapping[Hashable, float],
                             val_sets: Mapping[Hashable, LabeledDataset],
                             evaluators: Sequence[Hashable],
                             mode: str = FEDAVG) -> CollectiveUtility:
    """v(S) from frozen local-model snapshots.

    The models of S are averaged with their weights renormalized over S.
    Each evaluating client scores the subset model on its own validation set,
    keeping its own local spans when ``mode`` is FedBN; v(S) is the mean over
    ``evaluators``.
    """
    def value(subset: frozenset) -> float:
        members = sorted(subset)
        w = np.array([weights[n] for n in members], dtype=np.float64)
        w = w / w.sum() if w.sum() > 0 else np.full(len(members), 1.0 / len(members))
        merged = aggregate([local_models[n] for n in members], w, FEDAVG)
        scores = []
        for m in evaluators:
            if len(val_sets[m]) == 0:
                continue
            model = redistribute(merged, local_models[m], mode) if m in local_models else merged
            scores.append(evaluate_accuracy(model, val_sets[m]))
        return float(np.mean(scores)) if scores else 0.0

    return CollectiveUtility(value)


def quantitative_contribution(samples: float) -> float:
    return float(samples)


def marginal_contribution(n: Hashable, v: Callable, active: Iterable) -> float:
    active = frozenset(active)
    return v(active) - v(active - {n})


def marginal_contributions(v: Callable, active: Iterable) -> dict:
    active = sorted(active)
    return {n: marginal_contribution(n, v, active) for n in active}


def shapley_exact(v: Callable, active: Iterable) -> dict:
    """Exact Shapley values by enumerating every coalition of ``active``."""
    players = sorted(active)
    n = len(players)
    if n > MAX_EXACT_PLAYERS:
        raise ConfigurationError(
            f"exact Shapley over {n} players exceeds the limit of {MAX_EXACT_PLAYERS}")
    if n == 0:
        return {}
    values = np.empty(1 << n)
    for mask in range(1 << n):
        values[mask] = v(frozenset(p for i, p in enumerate(players) if mask >> i & 1))
    coef = [math.factorial(k) * math.factorial(n - k - 1) / math.factorial(n) for k in range(n)]
    q = {}
    for i, p in enumerate(players):
        bit = 1 << i
        total = 0.0
        for mask in range(1 << n):
            if not mask & bit:
                total += coef[mask.bit_count()] * (values[mask | bit] - values[mask])
        q[p] = total
    return q


def shapley_from_permutations(v: Callable, active: Iterable,
                              permutations: Iterable[Sequence]) -> dict:
    """Average marginal gain of each player over the given orderings."""
    players = sorted(active)
    total = dict.fromkeys(players, 0.0)
    count = 0
    for order in permutations:
        before: frozenset = frozenset()
        prev = v(before)
        for p in order:
            before = before | {p}
            cur = v(before)
            total[p] += cur - prev
            prev = cur
        count += 1
    return {p: total[p] / count for p in players}


def shapley_mc(v: Callable, active: Iterable, permutations: int,
               rng: np.random.Generator) -> dict:
    """Permutation-sampling Shapley estimate (unbiased)."""
    if permutations < 1:
        raise ConfigurationError("need at least one permutation")
    players = sorted(active)
    orders = ([players[i] for i in rng.permutation(len(players))] for _ in range(permutations))
    return shapley_from_permutations(v, players, orders)


def all_permutations(active: Iterable) -> Iterable[tuple]:
    return itertools.permutations(sorted(active))


def contributions(method: ContributionMethod, v: Callable, active: Iterable,
                  samples: Mapping[Hashable, float] | None = None,
                  rng: np.random.Generator | None = None) -> dict:
    """Dispatch on ``method.kind``; quantitative needs ``samples``, MC needs ``rng``."""
    active = sorted(active)
    if method.kind == QUANTITATIVE:
        return {n: quantitative_contribution(samples[n]) for n in active}
    if method.kind == MARGINAL:
        return marginal_contributions(v, active)
    if method.kind == SHAPLEY_EXACT:
        return shapley_exact(v, active)
    return shapley_mc(v, active, method.mc_permutations, rng)
