"""How long do clients stay as the leniency parameter grows?

Runs the heterogeneous five-client scenario (FedBN, each client with its own
feature distortion) on the fast accuracy-curve backend.
"""
import numpy as np

from fedwelfare.harness import load_preset, run_replication

cfg = load_preset("heterogeneous")
reps = 100

print("mean elimination round (T + 1 = never eliminated)")
print("mu      " + "  ".join(f"C{n:<4}" for n in cfg.client_ids) + "  final TSW  final TSFI")
for mu in (0.0, 0.05, 0.1, 0.2, 0.5):
    rounds = {n: [] for n in cfg.client_ids}
    tsw, tsfi = [], []
    for k in range(reps):
        res = run_replication(cfg.with_overrides(mu=mu), k)
        for n, t in res.elimination_round.items():
            rounds[n].append(t)
        tsw.append(res.metrics.tsw[-1])
        tsfi.append(res.metrics.tsfi[-1])
    means = "  ".join(f"{np.mean(rounds[n]):5.2f}" for n in cfg.client_ids)
    print(f"{mu:<6}  {means}  {np.mean(tsw):9.4f}  {np.nanmean(tsfi):10.4f}")

# mu = 0 spends nothing on fairness: welfare first, clients leave early.
# larger mu keeps contributors around longer and pushes TSFI toward 1.
