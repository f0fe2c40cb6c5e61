import io

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from fetwfe.errors import (
    CohortAtTimeOne,
    InconsistentTreatmentTime,
    MissingCell,
    NoNeverTreated,
    ParseError,
    ZeroVarianceCovariate,
)
from fetwfe.panel import (
    cohort_counts,
    load_panel,
    to_records,
    validate_rank_preconditions,
)

from conftest import make_panel


def test_load_panel_basic(tiny_records):
    data = load_panel(tiny_records)
    assert data.n_units == 3
    assert data.n_times == 3
    assert data.cohorts == (2,)
    assert data.assignment.tolist() == [0, 2, 2]


def test_load_panel_csv_text(tiny_records):
    header = "unit,time,response,cohort"
    lines = [header] + [
        f"{r['unit']},{r['time']},{r['response']},{r['cohort']}" for r in tiny_records
    ]
    data = load_panel(io.StringIO("\n".join(lines)))
    assert data.n_units == 3


def test_missing_cell(tiny_records):
    with pytest.raises(MissingCell):
        load_panel(tiny_records[:-1])


def test_no_never_treated(tiny_records):
    rows = [dict(r, cohort=2) for r in tiny_records]
    with pytest.raises(NoNeverTreated):
        load_panel(rows)


def test_cohort_at_time_one(tiny_records):
    rows = [dict(r) for r in tiny_records]
    for r in rows:
        if r["unit"] == "B":
            r["cohort"] = 1
    with pytest.raises(CohortAtTimeOne):
        load_panel(rows)
    data = load_panel(rows, drop_always_treated=True)
    assert data.n_units == 2
    assert "B" not in data.unit_labels


def test_inconsistent_treatment_time(tiny_records):
    rows = [dict(r) for r in tiny_records]
    rows[-1]["cohort"] = 3
    with pytest.raises(InconsistentTreatmentTime):
        load_panel(rows)


def test_missing_covariate_rejected(tiny_records):
    rows = [dict(r, x1=1.0 + 0.5 * ord(r["unit"][0])) for r in tiny_records]
    rows[4]["x1"] = ""
    with pytest.raises(ParseError, match="row 5"):
        load_panel(rows)


def test_zero_variance_covariate(tiny_records):
    rows = [dict(r, x1=1.5) for r in tiny_records]
    with pytest.raises(ZeroVarianceCovariate):
        load_panel(rows)


def test_duplicate_time_rejected(tiny_records):
    with pytest.raises(ParseError, match="duplicate"):
        load_panel(tiny_records + [tiny_records[0]])


def test_round_trip(small_panel):
    again = load_panel(to_records(small_panel))
    assert again.n_units == small_panel.n_units
    assert again.cohorts == small_panel.cohorts
    np.testing.assert_allclose(again.response, small_panel.response)
    np.testing.assert_allclose(again.covariates, small_panel.covariates)
    np.testing.assert_array_equal(again.assignment, small_panel.assignment)


def test_cohort_counts_example():
    panel = make_panel(T=3, cohorts=(2, 3), d=0, counts=(1, 2, 1))
    counts = cohort_counts(panel)
    assert counts.n_0 == 1
    assert counts.n_r == {2: 2, 3: 1}
    assert counts.n_tau == 3
    assert counts.total == 4


def test_cohort_counts_all_never_treated():
    panel = make_panel(T=3, cohorts=(), d=0, counts=(5,))
    counts = cohort_counts(panel)
    assert counts.n_tau == 0 and counts.n_0 == 5


@given(
    st.lists(st.integers(min_value=0, max_value=3), min_size=4, max_size=40).filter(
        lambda xs: 0 in xs
    )
)
def test_cohort_counts_sum(partition):
    # map group ids {0,1,2,3} to cohorts {0,2,3,4} of a T=4 panel
    labels = {0: 0, 1: 2, 2: 3, 3: 4}
    assignment = [labels[g] for g in partition]
    cohorts = tuple(sorted(set(assignment) - {0}))
    panel = make_panel(
        T=4, cohorts=cohorts, d=0,
        counts=[assignment.count(0)] + [assignment.count(r) for r in cohorts],
    )
    counts = cohort_counts(panel)
    assert counts.n_0 + sum(counts.n_r.values()) == panel.n_units
    assert counts.n_tau == sum(counts.n_r.values())


def test_rank_validation_clean():
    panel = make_panel(T=4, cohorts=(2, 3), d=2, counts=(4, 3, 3))
    report = validate_rank_preconditions(panel)
    assert report.ok and not report.findings


def test_rank_validation_small_cohort():
    panel = make_panel(T=4, cohorts=(2,), d=12, counts=(14, 5), seed=3)
    report = validate_rank_preconditions(panel)
    codes = [f.code for f in report.findings]
    assert "cohort-smaller-than-d-plus-1" in codes
    assert any("cohort 2 has 5" in f.message for f in report.findings)


def test_rank_validation_p_exceeds_nt():
    panel = make_panel(T=2, cohorts=(2,), d=5, counts=(1, 1), seed=4)
    report = validate_rank_preconditions(panel)
    assert not report.ok
    assert any(f.code == "p-exceeds-nt" for f in report.findings)


def test_rank_validation_pure(small_panel):
    r1 = validate_rank_preconditions(small_panel)
    r2 = validate_rank_preconditions(small_panel)
    assert r1.to_dict() == r2.to_dict()
