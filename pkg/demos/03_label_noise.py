"""A client with 30% corrupted labels is pushed out early.

Its samples teach the shared model less, so its leave-one-out contribution
is small while it still pays for collecting data.
"""
import numpy as np

from fedwelfare.harness import load_preset, run_replication

cfg = load_preset("label-noise")
for spec in cfg.clients:
    p = cfg.oracle_params(spec)
    print(f"client {spec.id}: label noise {spec.data.label_noise:.1f}, "
          f"accuracy ceiling {p.a_max * p.hetero_factor:.2f}, sample weight {p.quality_weight:.2f}")

for mu in (0.05, 0.1, 0.2):
    rounds = {n: [] for n in cfg.client_ids}
    q = {n: [] for n in cfg.client_ids}
    for k in range(100):
        res = run_replication(cfg.with_overrides(mu=mu), k)
        for n, t in res.elimination_round.items():
            rounds[n].append(t)
        for r in res.records:
            for n in r.previous:
                q[n].append(r.rows[n].q)
    print(f"\nmu={mu}")
    for n in cfg.client_ids:
        print(f"  client {n}: mean elimination round {np.mean(rounds[n]):5.2f}, "
              f"mean q {np.mean(q[n]):+.4f}")
