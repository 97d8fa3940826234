"""Scheme-ordering tuning sweep (development tool, not part of the package)."""
import sys

import numpy as np

from qoesim import runner, scenario
from qoesim.bench import SchemeId


def metrics(res, elas):
    ratios = []
    for w in res.windows:
        met = sum(1 for u, m in w.user_mean_qoe.items() if m >= elas[u])
        ratios.append(met / len(elas))
    pooled = [ps.sample.qoe for w in res.windows for ps in w.samples]
    q1, med, q3 = np.percentile(pooled, [25, 50, 75])
    return float(np.mean(ratios)), med, q3 - q1


def main():
    tx_levels = [float(x) for x in (sys.argv[1].split(",") if len(sys.argv) > 1
                                    else ["5.0", "7.0"])]
    seeds = [int(x) for x in (sys.argv[2].split(",") if len(sys.argv) > 2
                              else ["1", "2", "3", "4"])]
    epochs = int(sys.argv[3]) if len(sys.argv) > 3 else 2000
    for tx in tx_levels:
        print(f"=== tx={tx} ===", flush=True)
        cfg = scenario.parse_overrides({
            "radio.tx_power_dbm": str(tx), "sim_duration_s": "1800",
            "catalog.segment_duration_s": "0.5",
            "agent.demand_margin_mos": "0.5", "agent.demand_headroom": "1.8",
            "train.gamma": "0.5", "train.lr": "0.003"})
        for scheme in (SchemeId.PROPOSED, SchemeId.PDRL_L1,
                       SchemeId.WITHOUT_DA, SchemeId.HSLA_L2):
            rows = []
            for seed in seeds:
                run = runner.SchemeRun(cfg, scheme, seed, collect_slots=False,
                                       train_epochs=epochs)
                res = run.execute()
                rows.append(metrics(res, run.elas))
            r = np.array(rows)
            print(f"  {scheme.value:10s} ratio={r[:, 0].round(3)} "
                  f"mean={r[:, 0].mean():.3f}  med={r[:, 1].round(2)}  "
                  f"IQR={r[:, 2].mean():.2f}", flush=True)


if __name__ == "__main__":
    main()
