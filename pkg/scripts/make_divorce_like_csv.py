"""Generate the synthetic state-panel CSV used by the tests and README demo.

Shape mirrors the unilateral-divorce application: 51 states observed over
33 years (1964-1996), 9 states already treated in the first year (dropped
via --drop-always-treated), 5 never treated, and 12 adoption cohorts. Two
time-invariant covariates ride along. Values are synthetic; only the
structure is meaningful.
"""

import csv
from pathlib import Path

import numpy as np

YEARS = list(range(1964, 1997))  # T = 33, t = year - 1963
COHORT_YEARS = [1969, 1970, 1971, 1972, 1973, 1974, 1975, 1976, 1977, 1980, 1984, 1985]
N_ALWAYS = 9   # treated in 1964, removed by --drop-always-treated
N_NEVER = 5
COHORT_SIZES = [4] + [3] * 11  # 37 treated units, every cohort >= d+1 = 3

# cohort-year -> average effect on the response once treated
TRUE_EFFECTS = {1970: -20.0, 1973: -2.0, 1976: -3.0, 1977: -3.5}

SEED = 20240601


def main(out_path: Path) -> None:
    rng = np.random.default_rng(SEED)
    units = []
    for i in range(N_ALWAYS):
        units.append((f"S{i:02d}", 1964))
    for i in range(N_NEVER):
        units.append((f"S{N_ALWAYS + i:02d}", 0))
    k = N_ALWAYS + N_NEVER
    for year, size in zip(COHORT_YEARS, COHORT_SIZES):
        for _ in range(size):
            units.append((f"S{k:02d}", year))
            k += 1

    year_trend = np.cumsum(rng.normal(-0.15, 0.3, size=len(YEARS)))
    rows = []
    for name, cohort in units:
        lnpersinc = rng.normal(9.0, 0.25)
        afdcrolls = rng.normal(4.0, 1.0)
        state_effect = rng.normal(0.0, 4.0)
        effect = TRUE_EFFECTS.get(cohort, 0.0)
        for j, year in enumerate(YEARS):
            y = (
                55.0
                + state_effect
                + year_trend[j]
                + 1.5 * (lnpersinc - 9.0)
                - 0.8 * (afdcrolls - 4.0)
                + (effect if cohort and year >= cohort else 0.0)
                + rng.normal(0.0, 1.5)
            )
            rows.append(
                {
                    "unit": name,
                    "time": year,
                    "response": round(y, 4),
                    "cohort": cohort,
                    "lnpersinc": round(lnpersinc, 4),
                    "afdcrolls": round(afdcrolls, 4),
                }
            )

    out_path.parent.mkdir(parents=True, exist_ok=True)
    with open(out_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0].keys()))
        writer.writeheader()
        writer.writerows(rows)
    print(f"wrote {len(rows)} rows to {out_path}")


if __name__ == "__main__":
    main(Path(__file__).resolve().parent.parent / "data" / "divorce_like.csv")
