"""Run the two desk-scale studies and write their metrics.

Usage: python scripts/run_desk_studies.py [out_dir] [threads]
"""

import sys
import time
from pathlib import Path

from fetwfe.simulate import (
    SimConfig,
    metrics_to_csv,
    metrics_to_json,
    preset_config,
    run_study,
)

REDUCED_FIRST_STUDY = SimConfig(
    n_units=120, n_times=10, cohorts=(2, 3, 4, 5, 6), d=6,
    replications=100, theta_density=0.1, base_seed=1,
)


def main():
    out = Path(sys.argv[1]) if len(sys.argv) > 1 else Path("desk_studies")
    threads = int(sys.argv[2]) if len(sys.argv) > 2 else 2
    out.mkdir(parents=True, exist_ok=True)
    for name, config in (
        ("study2_desk", preset_config("study2-desk")),
        ("study1_reduced", REDUCED_FIRST_STUDY),
    ):
        t0 = time.time()
        metrics = run_study(config, threads=threads)
        metrics_to_json(metrics, out / f"{name}.json")
        metrics_to_csv(metrics, out / f"{name}.csv")
        print(f"{name}: {time.time() - t0:.0f}s, skipped {metrics.n_skipped}")
        print("  att sq err:", {m: round(v[0], 4) for m, v in metrics.att_sq_err.items()})
        print("  selection:", round(metrics.selection_overall[0], 4))
        print("  coverage cohort:", {r: round(v[0], 3) for r, v in metrics.coverage_cohort.items()})
        print("  coverage conservative:", round(metrics.coverage_conservative[0], 3),
              "exact:", round(metrics.coverage_exact[0], 3))


if __name__ == "__main__":
    main()
