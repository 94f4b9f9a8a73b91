"""Three clients, two rounds, hand-written economics.

Nothing is trained here: utilities, costs and contributions come straight
from the scenario file, so every number below can be checked by hand.
"""
from fedwelfare.harness import load_preset, run_replication
from fedwelfare.selection import select_active_set, selection_objective

cfg = load_preset("toy-example")

# round 2 is where the two loss-makers appear
last = {r.client: r for r in cfg.injected[-1]}
profits = {n: r.utility - r.cost for n, r in last.items()}
q = {n: r.q for n, r in last.items()}
print("round-2 profits", profits)
print("round-2 contributions", q)

# objective of each possible elimination, as a function of mu
for gone in [(1,), (2,), (1, 2), ()]:
    kept = [n for n in (1, 2, 3) if n not in gone]
    at0 = selection_objective(kept, gone, profits, q, 0.0)
    slope = selection_objective(kept, gone, profits, q, 1.0) - at0
    print(f"eliminate {str(list(gone) or 'nobody'):<8}  f(mu) = {at0:.4f} {slope:+.4f} mu")

# the decision moves from strict to lenient as mu grows
for mu in (0.0, 0.01, 0.05, 0.2, 0.5, 1.0):
    d = select_active_set((1, 2, 3), profits, q, mu)
    print(f"mu={mu:<5} keep {list(d.retained)}  objective {d.objective:.4f}")

# full replication: ledger, money transfer and metrics
res = run_replication(cfg.with_overrides(mu=0.2))
for r in res.records:
    print(f"round {r.round}: active after selection {list(r.active)}")
    for n, e in sorted(r.rows.items()):
        print(f"  C{n} profit {e.profit:+.4f}  payoff {e.payoff:+.4f}  mt {e.mt:+.4f}")
print("TSW", round(res.metrics.tsw[-1], 12), "TSFI", round(res.metrics.tsfi[-1], 12))
