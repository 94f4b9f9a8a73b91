"""Federated learning with per-round economics: utility and cost accounting,
contribution valuation, budget-balanced money transfers and client selection."""

from .contribution import (CollectiveUtility, ContributionMethod, marginal_contribution,
                           quantitative_contribution, shapley_exact, shapley_mc)
from .economics import (ClientEconParams, RoundEconRecord, RoundRecord, compute_budget,
                        compute_cost, compute_utility, money_transfer)
from .metrics import total_selection_fairness, total_social_welfare
from .model import (AccuracyOracleParams, LabeledDataset, ParamVector, TrainerConfig, aggregate,
                    evaluate_accuracy, local_update, oracle_accuracy, run_sharing_round)
from .selection import (SelectionDecision, candidate_eliminations, select_active_set,
                        selection_objective)

__version__ = "0.1.0"
