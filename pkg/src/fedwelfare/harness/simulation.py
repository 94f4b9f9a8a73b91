"""One replication of the data-sharing / selection / money-transfer loop."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..contribution import CollectiveUtility, contributions, model_collective_utility
from ..economics import RoundEconRecord, RoundRecord, compute_cost, compute_utility, money_transfer
from ..metrics import MetricsSeries, metrics_series
from ..model import (AccuracyOracleParams, LabeledDataset, ParamVector, TrainerConfig,
                     evaluate_accuracy, init_softmax_model, redistribute, run_sharing_round)
from ..selection import candidate_eliminations, least_lenient, select_active_set
from . import rng as rngs
from .config import (LEAST_LENIENT, MOST_LENIENT, OPTIMIZE, TRAINER, ClientSpec,
                     ScenarioConfig)
from .data import (BlobClient, SyntheticTask, corrupt_labels, generate_synthetic_data,
                   load_idx, sample_arrivals, split_batch, validation_count)


@dataclass
class ClientState:
    spec: ClientSpec
    oracle: AccuracyOracleParams
    arrivals: np.random.Generator
    data_rng: np.random.Generator
    oracle_rng: np.random.Generator
    trainer: TrainerConfig
    train: LabeledDataset | None = None
    val: LabeledDataset | None = None
    model: ParamVector | None = None
    blob: BlobClient | None = None
    pool: LabeledDataset | None = None
    pool_pos: int = 0
    n_train: int = 0
    n_val: int = 0
    eps_prev: float = 0.0
    active: bool = True
    settled_mt: float = 0.0
    settled_payoff: float = 0.0

    @property
    def client_id(self) -> int:
        return self.spec.id

    @property
    def econ(self):
        return self.spec.econ


@dataclass
class ReplicationResult:
    replication: int
    seed: int
    mu: float
    records: list
    elimination_round: dict     # client id -> round eliminated (T + 1: never)
    metrics: MetricsSeries
    terminated_round: int | None
    settlement: dict = field(default_factory=dict)   # client id -> cumulative mt

    def active_history(self) -> list:
        return [r.active for r in self.records]


@dataclass
class _Backend:
    eps: dict
    iterations: dict
    v: CollectiveUtility


# --- data provisioning -----------------------------------------------------------

def _client_blob(cfg: ScenarioConfig, spec: ClientSpec, scen: np.random.Generator) -> BlobClient:
    direction = scen.normal(size=cfg.synthetic.features)
    direction /= np.linalg.norm(direction)
    return BlobClient(direction * spec.data.shift, spec.data.scale, spec.data.label_noise)


def _draw_from_pool(c: ClientState, n: int) -> LabeledDataset:
    pool = c.pool
    idx = (c.pool_pos + np.arange(n)) % len(pool)
    c.pool_pos = int((c.pool_pos + n) % len(pool))
    batch = pool.subset(idx)
    if c.spec.data.label_noise > 0:
        batch = LabeledDataset(batch.features,
                               corrupt_labels(batch.labels, c.spec.data.label_noise,
                                              batch.n_classes, c.data_rng),
                               batch.n_classes)
    return batch


# --- backends ----------------------------------------------------------------------

class _OracleBackend:
    """Accuracy from saturating curves over federation-wide effective samples.

    Effective samples pool the quality-weighted *training* arrivals of the
    active clients. v(S) re-evaluates every active client's curve with only
    S's contribution from this round added to the pool. Each client's noise
    draw is shared across subsets; coalitions other than the full set also
    get an independent evaluation error (``subset_noise_sd``), standing in
    for the scatter of a model that was never trained on that coalition.
    """

    def __init__(self, cfg: ScenarioConfig, clients: dict, seed: int):
        self.cfg = cfg
        self.clients = clients
        self.pooled = 0.0
        self.seed = seed
        self.roster = cfg.client_ids
        self.t = 0

    def baseline(self, c: ClientState) -> float:
        noise = c.oracle_rng.normal(0.0, c.oracle.noise_sd) if c.oracle.noise_sd > 0 else 0.0
        return _clamp(c.oracle.mean_accuracy(0.0) + noise)

    def round(self, prev: tuple, new_train: dict, new_val: dict) -> _Backend:
        cl = self.clients
        fed = self.cfg.federation
        self.t += 1
        sd = self.cfg.oracle.subset_noise_sd
        full = frozenset(prev)
        gains = {n: cl[n].oracle.quality_weight * new_train[n] for n in prev}
        noise = {n: (cl[n].oracle_rng.normal(0.0, cl[n].oracle.noise_sd)
                     if cl[n].oracle.noise_sd > 0 else 0.0) for n in prev}
        base = self.pooled

        def acc(m, pool):
            return _clamp(cl[m].oracle.mean_accuracy(pool) + noise[m])

        total = base + sum(gains[n] for n in prev)
        eps = {n: acc(n, total) for n in prev}

        def value(subset):
            pool = base + sum(gains[k] for k in sorted(subset))
            v = float(np.mean([acc(m, pool) for m in prev]))
            if sd > 0 and subset != full:
                v += self._subset_noise(subset, sd)
            return v

        self.pooled = total
        iters = {n: fed.epochs * math.ceil(cl[n].n_train / fed.batch_size) for n in prev}
        return _Backend(eps, iters, CollectiveUtility(value))


    def _subset_noise(self, subset, sd: float) -> float:
        # keyed by (round, roster bitmask): independent of evaluation order
        mask = sum(1 << i for i, n in enumerate(self.roster) if n in subset)
        g = rngs.stream(self.seed, rngs.SUBSET_NOISE, self.t * (1 << len(self.roster)) + mask)
        return float(g.normal(0.0, sd))


class _TrainerBackend:
    """Real softmax training with FedAvg/FedBN over the clients' accumulated data."""

    def __init__(self, cfg: ScenarioConfig, clients: dict, seed: int):
        self.cfg = cfg
        self.clients = clients
        init = rngs.stream(seed, rngs.MODEL_INIT)
        self.n_classes = cfg.synthetic.classes
        self.global_model = None
        self._init_rng = init

    def ensure_model(self, n_features: int) -> None:
        if self.global_model is None:
            self.global_model = init_softmax_model(n_features, self.n_classes, self._init_rng)
            for c in self.clients.values():
                c.model = self.global_model.copy()

    def baseline(self, c: ClientState) -> float:
        model = redistribute(self.global_model, c.model, self.cfg.federation.algorithm)
        return _safe_accuracy(model, c.val)

    def round(self, prev: tuple, new_train: dict, new_val: dict) -> _Backend:
        fed = self.cfg.federation
        members = [self.clients[n] for n in prev]
        res = run_sharing_round(self.global_model, members, fed.L, fed.early_stop_delta,
                                fed.algorithm, eval_fn=_safe_accuracy)
        self.global_model = res.global_model
        for c in members:
            c.model = res.models[c.client_id]
        v = model_collective_utility(res.local_models, res.weights,
                                     {n: self.clients[n].val for n in prev}, prev,
                                     fed.algorithm)
        return _Backend(dict(res.accuracies), dict(res.iterations), v)


def _clamp(x: float) -> float:
    return float(min(1.0, max(0.0, x)))


def _safe_accuracy(model: ParamVector, data: LabeledDataset) -> float:
    return evaluate_accuracy(model, data) if len(data) else 0.0


# --- the loop --------------------------------------------------------------------------

def _make_clients(cfg: ScenarioConfig, seed: int) -> tuple[dict, SyntheticTask]:
    fed = cfg.federation
    clients = {}
    scen = rngs.scenario_stream(cfg.run.base_seed)
    task = SyntheticTask.draw(scen, cfg.synthetic.classes, cfg.synthetic.features,
                              cfg.synthetic.separation)
    for spec in sorted(cfg.clients, key=lambda c: c.id):
        c = ClientState(
            spec=spec,
            oracle=cfg.oracle_params(spec),
            arrivals=rngs.stream(seed, rngs.ARRIVALS, spec.id),
            data_rng=rngs.stream(seed, rngs.DATA, spec.id),
            oracle_rng=rngs.stream(seed, rngs.ORACLE, spec.id),
            trainer=TrainerConfig(fed.epochs, fed.batch_size, fed.learning_rate,
                                  rngs.stream(seed, rngs.TRAIN, spec.id)),
        )
        c.blob = _client_blob(cfg, spec, scen)
        if spec.data.idx_images is not None:
            pool = load_idx(spec.data.idx_images, spec.data.idx_labels, cfg.synthetic.classes)
            c.pool = pool.subset(rngs.stream(cfg.run.base_seed, rngs.SPLIT, spec.id)
                                 .permutation(len(pool)))
        clients[spec.id] = c
    return clients, task


def run_replication(cfg: ScenarioConfig, replication: int = 0) -> ReplicationResult:
    """Run sharing rounds until round T or until at most one client remains."""
    seed = rngs.replication_seed(cfg.run.base_seed, replication)
    ids = cfg.client_ids
    mech = cfg.mechanism
    clients, task = _make_clients(cfg, seed)
    injected = cfg.injected is not None
    backend = None
    if not injected:
        if cfg.federation.backend == TRAINER:
            backend = _TrainerBackend(cfg, clients, seed)
        else:
            backend = _OracleBackend(cfg, clients, seed)

    T = cfg.rounds
    elimination = dict.fromkeys(ids, T + 1)
    records = []
    active = ids
    terminated = None
    for t in range(1, T + 1):
        prev = active
        s = {n: 0 for n in prev}
        new_train, new_val = dict(s), dict(s)
        if injected:
            table = {r.client: r for r in cfg.injected[t - 1]}
            utility = {n: table[n].utility for n in prev}
            cost = {n: table[n].cost for n in prev}
            q = {n: float(table[n].q) for n in prev}
        else:
            for n in prev:
                s[n] = sample_arrivals(clients[n].spec.lam, clients[n].arrivals)
            for n in prev:
                c = clients[n]
                new_val[n] = validation_count(s[n])
                new_train[n] = s[n] - new_val[n]
                if isinstance(backend, _TrainerBackend):
                    _provision(c, task, s[n])
                c.n_train += new_train[n]
                c.n_val += new_val[n]
            if isinstance(backend, _TrainerBackend):
                backend.ensure_model(clients[prev[0]].train.n_features)
            if t == 1:
                for n in prev:
                    clients[n].eps_prev = backend.baseline(clients[n])
            out = backend.round(prev, new_train, new_val)
            utility = {n: compute_utility(clients[n].econ.u, out.eps[n], clients[n].eps_prev)
                       for n in prev}
            cost = {n: compute_cost(clients[n].econ, s[n], out.iterations[n]) for n in prev}
            q = contributions(mech.contribution, out.v, prev, samples=s,
                              rng=rngs.stream(seed, rngs.CONTRIBUTION, t))
            for n in prev:
                clients[n].eps_prev = out.eps[n]
        profit = {n: utility[n] - cost[n] for n in prev}

        objective, considered = math.nan, 0
        candidates = candidate_eliminations(profit)
        if mech.policy == OPTIMIZE:
            decision = select_active_set(prev, profit, q, mech.mu)
            active = decision.retained
            objective, considered = decision.objective, decision.candidates_considered
        elif mech.policy == LEAST_LENIENT:
            active = least_lenient(prev, profit)
        else:
            assert mech.policy == MOST_LENIENT
            active = prev

        payoff, mt, equal_split = money_transfer({n: profit[n] for n in active},
                                                 {n: q[n] for n in active})
        rows = {}
        for n in ids:
            if n not in prev:
                rows[n] = RoundEconRecord(n)
                continue
            kept = n in payoff
            rows[n] = RoundEconRecord(
                n, utility[n], cost[n], profit[n], q[n],
                payoff[n] if kept else profit[n], mt[n] if kept else 0.0,
                active=kept, equal_split=equal_split and kept)
            if kept:
                clients[n].settled_mt += mt[n]
                clients[n].settled_payoff += payoff[n]
        records.append(RoundRecord(t, prev, tuple(active), candidates, rows, objective,
                                   considered))
        for n in prev:
            if n not in payoff:
                clients[n].active = False
                elimination[n] = t
        if len(active) <= 1:
            terminated = t
            for n in active:
                elimination[n] = t
            break

    return ReplicationResult(
        replication=replication, seed=seed, mu=mech.mu, records=records,
        elimination_round=elimination,
        metrics=metrics_series(records, mech.tsfi_semantics),
        terminated_round=terminated,
        settlement={n: clients[n].settled_mt for n in ids},
    )


def _provision(c: ClientState, task: SyntheticTask, n: int) -> None:
    if c.pool is not None:
        batch = _draw_from_pool(c, n)
    else:
        batch = generate_synthetic_data(task, c.blob, n, c.data_rng)
    train, val = split_batch(batch, c.data_rng)
    if c.train is None:
        c.train, c.val = train, val
    else:
        c.train, c.val = c.train.concat(train), c.val.concat(val)
