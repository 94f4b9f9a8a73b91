"""Unequal data volumes.

A client collecting five times more data than the others pays five times the
data cost but gets no more accuracy out of the shared model, so it becomes a
loss-maker first. A client collecting half as much is the cheapest to keep.
"""
import numpy as np

from fedwelfare.harness import load_preset, run_replication

for name in ("homogeneous-large", "homogeneous-small"):
    cfg = load_preset(name)
    lam = {c.id: c.lam for c in cfg.clients}
    rounds = {n: [] for n in cfg.client_ids}
    for k in range(100):
        for n, t in run_replication(cfg, k).elimination_round.items():
            rounds[n].append(t)
    print(f"\n{name} (mu={cfg.mechanism.mu})")
    for n in cfg.client_ids:
        print(f"  client {n}: lambda {lam[n]:5.0f}  mean elimination round {np.mean(rounds[n]):5.2f}"
              f"  (sd {np.std(rounds[n], ddof=1):.2f})")
