import numpy as np
import pytest

from fetwfe.panel import PanelDataset


def make_panel(T, cohorts, d, counts, seed=0, response=None):
    """Panel with `counts[0]` never-treated units and counts[k] in cohort k."""
    rng = np.random.default_rng(seed)
    labels = [0] + list(cohorts)
    assignment = np.concatenate(
        [np.full(c, lab, dtype=np.int64) for lab, c in zip(labels, counts)]
    )
    n = assignment.size
    X = rng.standard_normal((n, d))
    if response is None:
        response = rng.standard_normal((n, T))
    return PanelDataset(
        n_units=n,
        n_times=T,
        cohorts=tuple(cohorts),
        assignment=assignment,
        covariates=X,
        response=response,
    )


@pytest.fixture
def small_panel():
    return make_panel(T=4, cohorts=(2, 3), d=2, counts=(4, 3, 3), seed=1)


@pytest.fixture
def tiny_records():
    rows = []
    for unit, cohort in (("A", 0), ("B", 2), ("C", 2)):
        for t in (1, 2, 3):
            rows.append(
                {
                    "unit": unit,
                    "time": t,
                    "response": 0.1 * t + (1.0 if cohort and t >= cohort else 0.0),
                    "cohort": cohort,
                }
            )
    return rows
