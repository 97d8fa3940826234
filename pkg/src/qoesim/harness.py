"""Experiment driver: metrics, result files, and multi-seed comparisons.

One experiment = (scenario, scheme, seed list).  Each seed runs the full
bootstrap/train/evaluate pipeline and emits per-run CSVs plus a merged
summary.json that validates against the shipped schema.
"""
from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass
from importlib import resources

import jsonschema
import numpy as np

from . import netsim, runner, scenario
from .bench import SchemeId
from .errors import EmptyInput, EmptyWindow, TooFewSamples

SCHEMA_NAME = "summary.schema.json"


@dataclass(frozen=True)
class WindowMetric:
    index: int
    user_mean_qoe: dict[int, float]
    ela_ratio: float


@dataclass(frozen=True)
class BoxStats:
    median: float
    q1: float
    q3: float
    whisker_lo: float
    whisker_hi: float
    outliers: int

    def as_dict(self) -> dict:
        return {"median": self.median, "q1": self.q1, "q3": self.q3,
                "whisker_lo": self.whisker_lo, "whisker_hi": self.whisker_hi,
                "outliers": self.outliers}


def ela_ratio(user_mean_qoe: dict[int, float], elas: dict[int, float]) -> float:
    """Fraction of users whose window-mean QoE met their ELA."""
    if not user_mean_qoe:
        raise EmptyWindow("no records in window")
    met = sum(1 for u, m in user_mean_qoe.items() if m >= elas[u])
    return met / len(elas)


def cdf_points(values) -> list[tuple[float, float]]:
    """Empirical CDF as right-continuous (value, cumulative fraction) steps."""
    vals = sorted(values)
    if not vals:
        raise EmptyInput("empty value set")
    n = len(vals)
    out = []
    for i, v in enumerate(vals, 1):
        if i == n or vals[i] != v:
            out.append((float(v), i / n))
    return out


def box_stats(values) -> BoxStats:
    """Quartiles by linear interpolation; whiskers at the most extreme data
    within 1.5 IQR of the box."""
    vals = np.asarray(sorted(values), dtype=float)
    if vals.size < 4:
        raise TooFewSamples(f"need >= 4 samples, got {vals.size}")
    q1, med, q3 = np.percentile(vals, [25, 50, 75])
    iqr = q3 - q1
    lo_lim, hi_lim = q1 - 1.5 * iqr, q3 + 1.5 * iqr
    inside = vals[(vals >= lo_lim) & (vals <= hi_lim)]
    return BoxStats(float(med), float(q1), float(q3),
                    float(inside.min()), float(inside.max()),
                    int(vals.size - inside.size))


def _fmt(x) -> str:
    if isinstance(x, bool):
        return "1" if x else "0"
    if isinstance(x, float):
        return f"{x:.10g}"
    return str(x)


def _write_csv(path: str, header: list[str], rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


SLOTS_HEADER = list(netsim.SLOT_COLUMNS)
DEMANDS_HEADER = ["window", "user", "bandwidth_hz", "compute_cps", "feasible"]
SLICES_HEADER = ["window", "window_minutes", "group", "bs", "reserved_bw_hz",
                 "reserved_compute_cps", "mechanism"]
WINDOWS_HEADER = ["window", "start_slot", "end_slot", "window_minutes",
                  "mechanism", "ela_ratio"]


def emit_run(out_dir: str, cfg: scenario.ScenarioConfig, res: runner.RunResult,
             elas: dict[int, float], trace_level: str = "full") -> dict:
    """Write one run's CSV artifacts; returns the summary fragment."""
    tag = f"{res.scheme}_seed{res.seed}"
    os.makedirs(out_dir, exist_ok=True)
    if trace_level == "full":
        _write_csv(os.path.join(out_dir, f"slots_{tag}.csv"), SLOTS_HEADER,
                   res.slot_records)
    _write_csv(os.path.join(out_dir, f"demands_{tag}.csv"), DEMANDS_HEADER,
               res.demand_rows)
    _write_csv(os.path.join(out_dir, f"slices_{tag}.csv"), SLICES_HEADER,
               res.slice_rows)
    window_rows = []
    ratios = []
    for w in res.windows:
        ratio = ela_ratio(w.user_mean_qoe, elas)
        ratios.append(ratio)
        window_rows.append((w.index, w.start_slot, w.end_slot,
                            w.window_minutes, w.mechanism, ratio))
    _write_csv(os.path.join(out_dir, f"windows_{tag}.csv"), WINDOWS_HEADER,
               window_rows)
    qoe_samples = [ps.sample.qoe for w in res.windows for ps in w.samples]
    return {
        "seed": res.seed,
        "window_ratios": ratios,
        "mean_ela_ratio": float(np.mean(ratios)),
        "qoe_samples": len(qoe_samples),
        "qoe_box": box_stats(qoe_samples).as_dict(),
        "capacity_violations": res.capacity_violations,
        "_qoe_values": qoe_samples,  # stripped before serialization
    }


def _seed_job(args) -> tuple[dict, list[float]]:
    cfg, scheme, seed, out_dir, trace_level, train_epochs, policy_in, policy_out = args
    sr = runner.SchemeRun(cfg, scheme, seed,
                          collect_slots=(trace_level == "full"),
                          train_epochs=train_epochs, policy_in=policy_in)
    res = sr.execute()
    if policy_out is not None:
        from . import learn
        net = sr.user_policy if scheme is SchemeId.PDRL_L1 else sr.group_policy
        if net is not None:
            learn.save_network(net, policy_out)
    frag = emit_run(out_dir, cfg, res, sr.elas, trace_level)
    qoe_values = frag.pop("_qoe_values")
    return frag, qoe_values


def _worker_count(n_jobs: int) -> int:
    cap = os.environ.get("SIMCTL_THREADS")
    workers = int(cap) if cap else (os.cpu_count() or 1)
    return max(min(workers, n_jobs), 1)


def run_experiment(cfg: scenario.ScenarioConfig, scheme: SchemeId,
                   seeds: list[int], out_dir: str, trace_level: str = "full",
                   train_epochs: int | None = None,
                   policy_in: str | None = None,
                   policy_out: str | None = None) -> dict:
    """Run one scheme over a seed list and emit artifacts + summary.json.

    Seeds fan out to a process pool (capped by SIMCTL_THREADS); results
    merge deterministically in seed order.
    """
    os.makedirs(out_dir, exist_ok=True)
    jobs = [(cfg, scheme, seed, out_dir, trace_level, train_epochs,
             policy_in, policy_out) for seed in seeds]
    workers = _worker_count(len(jobs))
    if workers == 1:
        outcomes = [_seed_job(j) for j in jobs]
    else:
        from concurrent.futures import ProcessPoolExecutor
        with ProcessPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(_seed_job, jobs))
    per_seed = []
    pooled_qoe = []
    pooled_ratios = []
    for frag, qoe_values in outcomes:
        pooled_qoe.extend(qoe_values)
        pooled_ratios.extend(frag["window_ratios"])
        per_seed.append(frag)
    summary = {
        "scheme": scheme.value,
        "num_users": cfg.num_users,
        "seeds": list(seeds),
        "config_hash": scenario.config_hash(cfg),
        "per_seed": per_seed,
        "pooled": {
            "mean_ela_ratio": float(np.mean([f["mean_ela_ratio"] for f in per_seed])),
            "ratio_cdf": [[v, f] for v, f in cdf_points(pooled_ratios)],
            "qoe_box": box_stats(pooled_qoe).as_dict(),
        },
    }
    validate_summary(summary)
    path = os.path.join(out_dir, f"summary_{scheme.value}.json")
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(summary, fh, sort_keys=True, indent=1)
    return summary


def load_schema() -> dict:
    with resources.files("qoesim.schema").joinpath(SCHEMA_NAME).open() as fh:
        return json.load(fh)


def validate_summary(summary: dict) -> None:
    jsonschema.validate(summary, load_schema())


def recompute_window_ratios(slots_csv: str, windows_csv: str,
                            elas: dict[int, float],
                            period_slots: int) -> list[tuple[float, float]]:
    """Redundant-path check: rebuild each window's ELA ratio from the raw
    slot trace and pair it with the value in windows.csv."""
    with open(windows_csv, newline="", encoding="utf-8") as fh:
        windows = [(int(r["window"]), int(r["start_slot"]), int(r["end_slot"]),
                    float(r["ela_ratio"])) for r in csv.DictReader(fh)]
    by_window_user: dict[int, dict[int, list[float]]] = {}
    with open(slots_csv, newline="", encoding="utf-8") as fh:
        for r in csv.DictReader(fh):
            t = int(r["t"])
            if (t + 1) % period_slots != 0:
                continue
            for idx, start, end, _ in windows:
                if start <= t < end:
                    by_window_user.setdefault(idx, {}).setdefault(
                        int(r["user"]), []).append(float(r["qoe_sample"]))
                    break
    out = []
    for idx, start, end, stored in windows:
        means = {u: float(np.mean(v)) for u, v in by_window_user[idx].items()}
        out.append((ela_ratio(means, elas), stored))
    return out


def comparison_table(summaries: list[dict]) -> str:
    """Plain-text scheme comparison for `simctl report`."""
    lines = [f"{'scheme':10s} {'mean ELA ratio':>15s} {'median QoE':>11s} "
             f"{'IQR':>7s} {'violations':>11s}"]
    for s in summaries:
        box = s["pooled"]["qoe_box"]
        viol = sum(f["capacity_violations"] for f in s["per_seed"])
        lines.append(f"{s['scheme']:10s} {s['pooled']['mean_ela_ratio']:15.4f} "
                     f"{box['median']:11.3f} {box['q3'] - box['q1']:7.3f} "
                     f"{viol:11d}")
    return "\n".join(lines)
