"""Replication fan-out, CSV persistence and the aggregate report.

Layout of an output directory::

    run.json                 config + replication status
    replications/r0000/      per-replication CSVs, written by the worker
    ledger.csv selection.csv metrics.csv eliminations.csv   merged copies
    report.json              aggregate computed from the merged CSVs only

The report is always recomputed from the CSV text, so re-reading a
directory reproduces it exactly.
"""
from __future__ import annotations

import csv
import io
import json
import logging
import math
import os
import traceback
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .config import ScenarioConfig, config_from_dict, dump_config
from .simulation import ReplicationResult, run_replication

log = logging.getLogger(__name__)

REPORT_SCHEMA = "fedwelfare-report"
REPORT_VERSION = 1

LEDGER_COLUMNS = ["replication", "round", "client", "utility", "cost", "profit", "q",
                  "payoff", "mt", "active"]
SELECTION_COLUMNS = ["replication", "round", "candidates-considered", "eliminated-ids",
                     "objective-value", "mu"]
METRICS_COLUMNS = ["replication", "round", "tsw", "tsfi", "semantics", "mu"]
ELIMINATION_COLUMNS = ["replication", "client", "elimination-round", "mu"]
TABLES = {
    "ledger": LEDGER_COLUMNS,
    "selection": SELECTION_COLUMNS,
    "metrics": METRICS_COLUMNS,
    "eliminations": ELIMINATION_COLUMNS,
}


def fmt(x: float) -> str:
    """12 significant digits; NaN is written as ``nan``."""
    if isinstance(x, float) and math.isnan(x):
        return "nan"
    return format(float(x), ".12g")


def worker_count() -> int:
    raw = os.environ.get("FEDWELFARE_THREADS", "0").strip() or "0"
    n = int(raw)
    return n if n > 0 else (os.cpu_count() or 1)


# --- CSV ------------------------------------------------------------------------------

def _csv_text(columns: list, rows: list) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    w.writerows(rows)
    return buf.getvalue()


def result_tables(res: ReplicationResult) -> dict:
    """CSV text for each table of one replication."""
    k, mu = res.replication, fmt(res.mu)
    ledger, selection, metrics = [], [], []
    for r in res.records:
        for n in sorted(r.rows):
            e = r.rows[n]
            ledger.append([k, r.round, n, fmt(e.utility), fmt(e.cost), fmt(e.profit), fmt(e.q),
                           fmt(e.payoff), fmt(e.mt), int(e.active)])
        selection.append([k, r.round, r.candidates_considered,
                          ";".join(str(n) for n in r.eliminated), fmt(r.objective), mu])
    for t, (tsw, tsfi) in enumerate(zip(res.metrics.tsw, res.metrics.tsfi), 1):
        metrics.append([k, t, fmt(tsw), fmt(tsfi), res.metrics.semantics, mu])
    elim = [[k, n, res.elimination_round[n], mu] for n in sorted(res.elimination_round)]
    return {
        "ledger": _csv_text(LEDGER_COLUMNS, ledger),
        "selection": _csv_text(SELECTION_COLUMNS, selection),
        "metrics": _csv_text(METRICS_COLUMNS, metrics),
        "eliminations": _csv_text(ELIMINATION_COLUMNS, elim),
    }


def _write(path: Path, text: str) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


def read_table(path) -> list[dict]:
    with open(path, encoding="utf-8", newline="") as fh:
        return list(csv.DictReader(fh))


# --- execution --------------------------------------------------------------------------

def _replication_job(cfg_dict: dict, k: int, out: str | None) -> dict:
    cfg = config_from_dict(cfg_dict)
    try:
        res = run_replication(cfg, k)
    except Exception as exc:   # diagnostic record; the experiment carries on
        return {"replication": k, "ok": False,
                "error": f"{type(exc).__name__}: {exc}", "trace": traceback.format_exc()}
    tables = result_tables(res)
    if out is not None:
        d = Path(out) / "replications" / f"r{k:04d}"
        d.mkdir(parents=True, exist_ok=True)
        for name, text in tables.items():
            _write(d / f"{name}.csv", text)
    return {"replication": k, "ok": True, "terminated_round": res.terminated_round}


def run_experiment(cfg: ScenarioConfig, out_dir=None, workers: int | None = None) -> dict:
    """Run every replication, write CSVs and return the aggregate report."""
    out_dir = Path(out_dir or cfg.run.output_dir or f"runs/{cfg.name}")
    out_dir.mkdir(parents=True, exist_ok=True)
    workers = worker_count() if workers is None else workers
    reps = range(cfg.run.replications)
    cfg_dict = cfg.to_dict()
    if workers > 1 and len(reps) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            status = list(pool.map(_replication_job, [cfg_dict] * len(reps), reps,
                                   [str(out_dir)] * len(reps)))
    else:
        status = [_replication_job(cfg_dict, k, str(out_dir)) for k in reps]
    for s in status:
        if not s["ok"]:
            log.warning("replication %d failed: %s", s["replication"], s["error"])
    manifest = {"config": json.loads(dump_config(cfg)),
                "replications": [{k: v for k, v in s.items() if k != "trace"} for s in status]}
    _write(out_dir / "run.json", json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    merge_tables(out_dir)
    report = aggregate_dir(out_dir)
    _write(out_dir / "report.json", json.dumps(report, indent=2, sort_keys=True) + "\n")
    return report


def merge_tables(out_dir) -> None:
    """Concatenate per-replication CSVs in replication order."""
    out_dir = Path(out_dir)
    rep_dirs = sorted((out_dir / "replications").glob("r*"))
    for name, columns in TABLES.items():
        parts = [_csv_text(columns, [])]
        for d in rep_dirs:
            f = d / f"{name}.csv"
            if f.exists():
                text = f.read_text(encoding="utf-8")
                parts.append(text.split("\n", 1)[1])
        _write(out_dir / f"{name}.csv", "".join(parts))


# --- aggregation ---------------------------------------------------------------------

def _mean_sd(values) -> dict:
    a = np.asarray(values, dtype=np.float64)
    if a.size == 0:
        return {"mean": None, "sd": None, "n": 0}
    sd = float(a.std(ddof=1)) if a.size > 1 else 0.0
    return {"mean": float(a.mean()), "sd": sd, "n": int(a.size)}


def _trajectories(metric_rows: list, key: str, reps: list, T: int) -> dict:
    """Per-round mean/sd, carrying each replication's last value past termination."""
    series = {k: [] for k in reps}
    for row in metric_rows:
        series[int(row["replication"])].append(float(row[key]))
    mat = []
    for k in reps:
        s = series[k]
        if not s:
            continue
        mat.append(s + [s[-1]] * (T - len(s)))
    if not mat:
        return {"mean": [], "sd": []}
    m = np.array(mat)
    with np.errstate(invalid="ignore"):
        mean = np.nanmean(m, axis=0) if not np.all(np.isnan(m)) else np.full(T, np.nan)
        sd = np.nanstd(m, axis=0, ddof=1) if len(mat) > 1 else np.zeros(T)
    return {"mean": [_json_float(x) for x in mean], "sd": [_json_float(x) for x in sd]}


def _json_float(x) -> float | None:
    x = float(x)
    return None if math.isnan(x) else x


def aggregate_dir(out_dir) -> dict:
    """Aggregate report computed from the merged CSVs and run.json."""
    out_dir = Path(out_dir)
    manifest = json.loads((out_dir / "run.json").read_text(encoding="utf-8"))
    cfg = manifest["config"]
    T = len(cfg["injected"]) if cfg.get("injected") else cfg["federation"]["T"]
    ok = sorted(s["replication"] for s in manifest["replications"] if s["ok"])
    failed = [s for s in manifest["replications"] if not s["ok"]]
    elim = read_table(out_dir / "eliminations.csv")
    metric_rows = read_table(out_dir / "metrics.csv")
    by_client: dict = {}
    for row in elim:
        by_client.setdefault(row["client"], []).append(int(row["elimination-round"]))
    return {
        "schema": REPORT_SCHEMA,
        "schema_version": REPORT_VERSION,
        "scenario": cfg["name"],
        "mu": cfg["mechanism"]["mu"],
        "policy": cfg["mechanism"]["policy"],
        "rounds": T,
        "replications": {"requested": len(manifest["replications"]), "succeeded": len(ok),
                         "failed": [{"replication": s["replication"], "error": s["error"]}
                                    for s in failed]},
        "elimination_round": {c: _mean_sd(v) for c, v in
                              sorted(by_client.items(), key=lambda kv: int(kv[0]))},
        "tsw": _trajectories(metric_rows, "tsw", ok, T),
        "tsfi": _trajectories(metric_rows, "tsfi", ok, T),
    }


def mu_dirname(mu: float) -> str:
    return "mu_" + fmt(mu)


def run_sweep(cfg: ScenarioConfig, mus, out_dir, workers: int | None = None) -> dict:
    """Run one experiment per mu value and a combined per-mu summary."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for mu in mus:
        run_experiment(cfg.with_overrides(mu=mu), out_dir / mu_dirname(mu), workers)
    return write_sweep_summary(out_dir)


def write_sweep_summary(out_dir) -> dict:
    out_dir = Path(out_dir)
    entries = []
    for d in sorted(out_dir.glob("mu_*"), key=lambda p: float(p.name[3:])):
        rep = aggregate_dir(d)
        _write(d / "report.json", json.dumps(rep, indent=2, sort_keys=True) + "\n")
        entries.append({
            "mu": rep["mu"],
            "elimination_round": {c: s["mean"] for c, s in rep["elimination_round"].items()},
            "final_tsw": rep["tsw"]["mean"][-1] if rep["tsw"]["mean"] else None,
            "final_tsfi": rep["tsfi"]["mean"][-1] if rep["tsfi"]["mean"] else None,
            "succeeded": rep["replications"]["succeeded"],
        })
    summary = {"schema": REPORT_SCHEMA + "-sweep", "schema_version": REPORT_VERSION,
               "sweep": entries}
    _write(out_dir / "sweep.json", json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return summary


def plot_report(out_dir) -> list:
    """SVG charts of the TSW/TSFI trajectories and mean elimination rounds."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    out_dir = Path(out_dir)
    rep = json.loads((out_dir / "report.json").read_text(encoding="utf-8"))
    written = []
    for key in ("tsw", "tsfi"):
        mean = [np.nan if x is None else x for x in rep[key]["mean"]]
        fig, ax = plt.subplots(figsize=(5, 3.5))
        ax.plot(range(1, len(mean) + 1), mean, marker="o")
        ax.set_xlabel("round")
        ax.set_ylabel(key.upper())
        ax.set_title(f"{rep['scenario']} (mu={rep['mu']})")
        path = out_dir / f"{key}.svg"
        fig.savefig(path, format="svg", metadata={"Date": None})
        plt.close(fig)
        written.append(path)
    clients = list(rep["elimination_round"])
    means = [rep["elimination_round"][c]["mean"] for c in clients]
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.bar(clients, means)
    ax.set_xlabel("client")
    ax.set_ylabel("mean elimination round")
    path = out_dir / "elimination.svg"
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    written.append(path)
    return written
