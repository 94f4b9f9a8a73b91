"""Acceptance suite: one test per criterion, each at its stated tolerance.

Every test records a PASS/FAIL line, printed in the terminal summary.
"""
import itertools
import struct
import time
from dataclasses import replace

import numpy as np
import pytest

from conftest import VERDICTS
from fedwelfare.contribution import (CollectiveUtility, ContributionMethod, all_permutations,
                                     shapley_exact, shapley_from_permutations, shapley_mc)
from fedwelfare.economics import RoundEconRecord, RoundRecord
from fedwelfare.harness import load_preset, run_experiment, run_replication
from fedwelfare.harness.config import LEAST_LENIENT, PRESETS
from fedwelfare.harness.data import (IDXCountMismatchError, IDXMagicError, IDXTruncatedError,
                                     load_idx, write_idx)
from fedwelfare.harness.experiment import TABLES
from fedwelfare.metrics import metrics_series
from fedwelfare.model import SHARED, cross_entropy, cross_entropy_grad, init_softmax_model
from fedwelfare.selection import select_active_set, selection_objective


def verdict(label, ok, detail):
    VERDICTS.append(f"criterion {label:<3} {'PASS' if ok else 'FAIL'}  {detail}")
    assert ok, detail


def _mean_rounds(cfg, reps=None):
    reps = cfg.run.replications if reps is None else reps
    totals = dict.fromkeys(cfg.client_ids, 0.0)
    for k in range(reps):
        for n, t in run_replication(cfg, k).elimination_round.items():
            totals[n] += t
    return {n: v / reps for n, v in totals.items()}


# 1 ---------------------------------------------------------------------------------

def _toy_records(cfg, eliminated):
    """Both injected rounds, with ``eliminated`` removed at the end of round 2."""
    records, active = [], cfg.client_ids
    for t, rows in enumerate(cfg.injected, 1):
        previous = active
        if t == len(cfg.injected):
            active = tuple(n for n in previous if n not in eliminated)
        econ = {r.client: RoundEconRecord(r.client, r.utility, r.cost, r.utility - r.cost, r.q,
                                          active=r.client in active) for r in rows}
        records.append(RoundRecord(t, previous, active, (), econ))
    return records


def test_toy_example_exact():
    start = time.perf_counter()
    toy = load_preset("toy-example")
    last = {r.client: r for r in toy.injected[-1]}
    profits = {n: r.utility - r.cost for n, r in last.items()}
    q = {n: r.q for n, r in last.items()}
    scenarios = {   # eliminated -> (objective intercept, mu slope, TSW, TSFI)
        (1,): (0.1, -1.0, 0.5, 0.55),
        (2,): (0.1, -1 / 9, 0.5, 0.85),
        (1, 2): (0.15, -1.5, 0.55, 0.4),
        (): (0.05, 0.0, 0.45, 1.0),
    }
    worst = 0.0
    for gone, (a, b, tsw, tsfi) in scenarios.items():
        kept = [n for n in (1, 2, 3) if n not in gone]
        for mu in (0.0, 0.1, 1.0):
            worst = max(worst, abs(selection_objective(kept, gone, profits, q, mu) - (a + b * mu)))
        m = metrics_series(_toy_records(toy, gone))
        worst = max(worst, abs(m.tsw[-1] - tsw), abs(m.tsfi[-1] - tsfi))

    decisions = {}
    for mu, kept, tsw, tsfi in ((0.01, (3,), 0.55, 0.4), (0.2, (1, 3), 0.5, 0.85),
                                (1.0, (1, 2, 3), 0.45, 1.0)):
        res = run_replication(toy.with_overrides(mu=mu))
        decisions[mu] = res.records[-1].active == kept
        worst = max(worst, abs(res.metrics.tsw[-1] - tsw), abs(res.metrics.tsfi[-1] - tsfi))
    elapsed = time.perf_counter() - start
    ok = worst <= 1e-12 and all(decisions.values()) and elapsed < 1.0
    verdict("1", ok, f"max abs error {worst:.1e}, decisions {decisions}, {elapsed:.2f}s")


# 2 ---------------------------------------------------------------------------------

def test_budget_balance():
    start = time.perf_counter()
    cfg = load_preset("label-noise")
    worst, bad_inactive, rounds = 0.0, 0, 0
    for k in range(100):
        for r in run_replication(cfg, k).records:
            rounds += 1
            worst = max(worst, abs(sum(r.rows[n].mt for n in r.active)))
            bad_inactive += sum(1 for n, e in r.rows.items() if n not in r.active and e.mt != 0.0)
    elapsed = time.perf_counter() - start
    ok = worst <= 1e-9 and bad_inactive == 0 and elapsed < 120
    verdict("2", ok, f"{rounds} rounds, max |sum mt| {worst:.1e}, "
                     f"nonzero inactive mt {bad_inactive}, {elapsed:.1f}s")


# 3 ---------------------------------------------------------------------------------

def test_restricted_search():
    rng = np.random.default_rng(20220)
    mismatches = 0
    for i in range(200):
        n = int(rng.integers(1, 11))
        ids = tuple(range(n))
        profits = {j: float(rng.normal(0.0, 0.05)) for j in ids}
        q = {j: float(rng.uniform(0.0, 1.0)) for j in ids}
        if i % 10 == 0:   # exercise the boundaries: zero profit and zero contribution
            profits[0], q[ids[-1]] = 0.0, 0.0
        mu = float(rng.choice([0.0, 0.01, 0.05, 0.1, 0.2, 0.5, 1.0, 5.0]))
        brute = select_active_set(ids, profits, q, mu, candidates=ids).objective
        restricted = select_active_set(ids, profits, q, mu).objective
        mismatches += brute != restricted
    verdict("3", mismatches == 0, f"200 instances (q >= 0), {mismatches} objective mismatches")


# 4 ---------------------------------------------------------------------------------

def _random_game(players, rng):
    table = {frozenset(s): float(rng.uniform(-1, 1))
             for k in range(1, len(players) + 1) for s in itertools.combinations(players, k)}
    return CollectiveUtility(lambda s: table[s])


def test_shapley_properties():
    rng = np.random.default_rng(4)
    eff = 0.0
    for _ in range(100):
        players = tuple(range(int(rng.integers(1, 9))))
        v = _random_game(players, rng)
        eff = max(eff, abs(sum(shapley_exact(v, players).values()) - (v(players) - v(()))))
    mc_err = 0.0
    for _ in range(10):
        w = dict(enumerate(rng.uniform(0.0, 1.0, 5)))
        v = CollectiveUtility(lambda s, w=w: float(sum(w[n] for n in s)))
        est = shapley_mc(v, range(5), 2000, np.random.default_rng(int(rng.integers(1 << 31))))
        exact = shapley_exact(v, range(5))
        mc_err = max(mc_err, max(abs(est[i] - exact[i]) for i in range(5)))
    perm_err = 0.0
    for n in range(1, 5):
        for _ in range(10):
            v = _random_game(tuple(range(n)), rng)
            est = shapley_from_permutations(v, range(n), all_permutations(range(n)))
            exact = shapley_exact(v, range(n))
            perm_err = max(perm_err, max(abs(est[i] - exact[i]) for i in range(n)))
    ok = eff <= 1e-9 and mc_err <= 0.01 and perm_err <= 1e-12
    verdict("4", ok, f"efficiency {eff:.1e}, MC(2000) {mc_err:.4f}, exhaustive {perm_err:.1e}")


# 5 ---------------------------------------------------------------------------------

def test_gradient_check():
    rng = np.random.default_rng(5)
    h, worst = 1e-5, 0.0
    for _ in range(20):
        d, c = int(rng.integers(2, 8)), int(rng.integers(2, 6))
        model = init_softmax_model(d, c, rng, sd=1.0)
        model["norm.shift"][:] = rng.normal(size=d)
        model["norm.scale"][:] = rng.uniform(0.5, 2.0, size=d)
        x, y = rng.normal(size=(1, d)), rng.integers(0, c, size=1)
        g = cross_entropy_grad(model, x, y)
        idx = np.flatnonzero(model.mask(SHARED))
        fd = np.empty(idx.size)
        for j, i in enumerate(idx):
            plus, minus = model.copy(), model.copy()
            plus.values[i] += h
            minus.values[i] -= h
            fd[j] = (cross_entropy(plus, x, y) - cross_entropy(minus, x, y)) / (2 * h)
        worst = max(worst, np.linalg.norm(g[idx] - fd) / np.linalg.norm(fd))
    verdict("5", worst <= 1e-5, f"20 probes, max relative error {worst:.1e}")


# 6 ---------------------------------------------------------------------------------

def test_label_noise_deselection():
    start = time.perf_counter()
    cfg = load_preset("label-noise")
    details, ok = [], True
    for mu in (0.05, 0.1, 0.2):
        rounds = _mean_rounds(cfg.with_overrides(mu=mu), 100)
        clean = min(v for n, v in rounds.items() if n != 0)
        gap = clean - rounds[0]
        ok &= gap > 1.0
        details.append(f"mu={mu}: noisy {rounds[0]:.2f} vs clean min {clean:.2f} (gap {gap:.2f})")
    elapsed = time.perf_counter() - start
    ok &= elapsed < 300
    verdict("6", ok, "; ".join(details) + f"; {elapsed:.1f}s")


# 7 ---------------------------------------------------------------------------------

def test_client_size_asymmetry():
    start = time.perf_counter()
    large = _mean_rounds(load_preset("homogeneous-large"), 100)
    small = _mean_rounds(load_preset("homogeneous-small"), 100)
    ok_large = large[0] < min(v for n, v in large.items() if n != 0)
    ok_small = small[0] > max(v for n, v in small.items() if n != 0)
    elapsed = time.perf_counter() - start
    fmt = lambda r: " ".join(f"{n}:{v:.2f}" for n, v in sorted(r.items()))
    verdict("7", ok_large and ok_small and elapsed < 600,
            f"large [{fmt(large)}] small [{fmt(small)}]; {elapsed:.1f}s")


# 8 ---------------------------------------------------------------------------------

def test_leniency_monotonicity():
    cfg = load_preset("heterogeneous")
    grid = (0.0, 0.05, 0.1, 0.2, 0.5)
    table = [_mean_rounds(cfg.with_overrides(mu=mu), 100) for mu in grid]
    worst = max(table[i][n] - table[i + 1][n]
                for i in range(len(grid) - 1) for n in cfg.client_ids)
    rows = "; ".join(f"mu={mu}: " + " ".join(f"{r[n]:.2f}" for n in sorted(r))
                     for mu, r in zip(grid, table))
    verdict("8", worst <= 0.25, f"largest decrease {max(worst, 0.0):.2f} rounds; {rows}")


# 9 ---------------------------------------------------------------------------------

def test_mu_zero_is_least_lenient():
    mismatches = 0
    for name in PRESETS[:4]:
        cfg = load_preset(name).with_overrides(mu=0.0)
        baseline = cfg.with_overrides(policy=LEAST_LENIENT)
        for k in range(100):
            a, b = run_replication(cfg, k), run_replication(baseline, k)
            mismatches += a.active_history() != b.active_history()
            for r in a.records:
                profit = {n: r.rows[n].profit for n in r.previous}
                if any(p >= 0 for p in profit.values()):
                    mismatches += set(r.active) != {n for n, p in profit.items() if p >= 0}
    verdict("9a", mismatches == 0, f"mu=0 vs least-lenient baseline, 4 presets x 100 reps, "
                                   f"{mismatches} mismatching trajectories/rounds")


def _retains_all(cfg, reps=100):
    bad = 0
    for k in range(reps):
        res = run_replication(cfg, k)
        bad += len(res.records) != cfg.rounds or any(
            set(r.active) != set(cfg.client_ids) for r in res.records)
    return bad


def test_huge_mu_never_eliminates_nonnegative_contributions():
    bad = {}
    for name in PRESETS[:4]:
        base = load_preset(name).with_overrides(mu=1e9)
        for kind in ("quantitative", "shapley-exact"):
            cfg = replace(base, mechanism=replace(base.mechanism,
                                                  contribution=ContributionMethod(kind)))
            bad[f"{name}/{kind}"] = _retains_all(cfg)
    verdict("9b", not any(bad.values()),
            f"mu=1e9 with quantitative and exact-Shapley q, runs with an elimination: {bad}")


@pytest.mark.xfail(strict=True, reason="leave-one-out q can be negative; the objective then "
                   "rewards removing that client, more so for larger mu (see ledger)")
def test_huge_mu_never_eliminates_marginal():
    bad = {name: _retains_all(load_preset(name).with_overrides(mu=1e9)) for name in PRESETS}
    verdict("9c", not any(bad.values()),
            f"mu=1e9 with the presets' marginal q, runs with an elimination: {bad}")


# 10 --------------------------------------------------------------------------------

def test_determinism(tmp_path):
    differing = []
    for name in PRESETS:
        cfg = load_preset(name)
        run_experiment(cfg, tmp_path / name / "a", workers=1)
        run_experiment(cfg, tmp_path / name / "b", workers=2)
        for table in TABLES:
            for_a = (tmp_path / name / "a" / f"{table}.csv").read_bytes()
            for_b = (tmp_path / name / "b" / f"{table}.csv").read_bytes()
            if for_a != for_b:
                differing.append(f"{name}/{table}")
    verdict("10", not differing, f"5 presets x 4 CSVs compared byte-wise, differing: {differing}")


# 11 --------------------------------------------------------------------------------

def test_idx_golden(tmp_path):
    images = (np.arange(32, dtype=np.uint8) * 8).reshape(2, 4, 4)
    labels = np.array([3, 7], dtype=np.uint8)
    img, lab = tmp_path / "i.idx", tmp_path / "l.idx"
    img.write_bytes(struct.pack(">IIII", 0x803, 2, 4, 4) + images.tobytes())
    lab.write_bytes(struct.pack(">II", 0x801, 2) + labels.tobytes())
    data = load_idx(img, lab)
    golden = np.array([[8 * i / 255 for i in range(16)], [8 * i / 255 for i in range(16, 32)]])
    ok = np.array_equal(data.features, golden) and data.labels.tolist() == [3, 7]

    rng = np.random.default_rng(11)
    rt_images = rng.integers(0, 256, size=(7, 5, 3), dtype=np.uint8)
    rt_labels = rng.integers(0, 10, size=7, dtype=np.uint8)
    write_idx(tmp_path / "a", tmp_path / "b", rt_images, rt_labels)
    back = load_idx(tmp_path / "a", tmp_path / "b")
    ok &= np.array_equal(np.rint(back.features * 255).astype(np.uint8), rt_images.reshape(7, 15))
    ok &= back.labels.tolist() == rt_labels.tolist()

    bad_lab = tmp_path / "bad.idx"
    bad_lab.write_bytes(struct.pack(">II", 0x803, 2) + labels.tobytes())
    write_idx(tmp_path / "c5", tmp_path / "c4", np.zeros((5, 2, 2), np.uint8),
              np.zeros(4, np.uint8))
    short = tmp_path / "short.idx"
    short.write_bytes(img.read_bytes()[:-5])
    cases = {
        "magic": (IDXMagicError, img, bad_lab),
        "count": (IDXCountMismatchError, tmp_path / "c5", tmp_path / "c4"),
        "truncated": (IDXTruncatedError, short, lab),
    }
    raised = {}
    for name, (err, ip, lp) in cases.items():
        try:
            load_idx(ip, lp)
            raised[name] = "no error"
        except err:
            raised[name] = err.__name__
        except Exception as exc:
            raised[name] = f"wrong: {type(exc).__name__}"
    ok &= all(v.startswith("IDX") for v in raised.values())
    verdict("11", ok, f"golden and round-trip exact; negative cases {raised}")
