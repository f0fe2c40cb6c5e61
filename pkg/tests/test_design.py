import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fetwfe.design import (
    build_design,
    build_layout,
    center_response_and_columns,
    count_params,
)
from fetwfe.errors import CohortOutOfRange
from fetwfe.panel import PanelDataset

from conftest import make_panel

EMPIRICAL_COHORTS = tuple(
    y - 1963 for y in (1969, 1970, 1971, 1972, 1973, 1974, 1975, 1976, 1977, 1980, 1984, 1985)
)


@pytest.mark.parametrize(
    "T,cohorts,d,p,w",
    [
        (30, (2, 3, 4, 5, 6), 12, 2209, 135),
        (5, (2, 3, 4), 2, 50, 9),
        (2, (2,), 0, 3, 1),
        (33, EMPIRICAL_COHORTS, 2, 908, 258),
    ],
)
def test_count_params_known_values(T, cohorts, d, p, w):
    assert count_params(T, cohorts, d) == (p, w)


@pytest.mark.parametrize(
    "T,cohorts,d",
    [(5, (1, 2), 0), (5, (2, 6), 0), (5, (3, 2), 0), (5, (2, 2), 0), (5, (2,), -1)],
)
def test_count_params_rejects(T, cohorts, d):
    with pytest.raises(CohortOutOfRange):
        count_params(T, cohorts, d)


def test_build_design_two_units_no_covariates():
    panel = make_panel(T=2, cohorts=(2,), d=0, counts=(1, 1))
    design = build_design(panel)
    z = design.values
    assert z.shape == (4, 3)
    lay = design.layout
    # untreated unit: rows 0-1; treated unit: rows 2-3
    np.testing.assert_array_equal(z[:, lay.cohort_index(2)], [0, 0, 1, 1])
    np.testing.assert_array_equal(z[:, lay.time_index(2)], [0, 1, 0, 1])
    np.testing.assert_array_equal(z[:, lay.tau_index(2, 2)], [0, 0, 0, 1])


def test_build_design_interaction_centering():
    # two cohort-2 units with x = 3 and 1, so the cohort mean is 2
    panel = make_panel(T=2, cohorts=(2,), d=1, counts=(1, 2))
    X = panel.covariates.copy()
    X[1, 0], X[2, 0] = 3.0, 1.0
    panel = PanelDataset(
        n_units=3, n_times=2, cohorts=(2,), assignment=panel.assignment,
        covariates=X, response=panel.response,
    )
    design = build_design(panel)
    lay = design.layout
    np.testing.assert_allclose(lay.cohort_means, [[2.0]])
    col = design.values[:, lay.rho_index(2, 2, 0)]
    # unit 1 (x=3) at time 2 -> 1 * (3 - 2) = 1; unit 2 (x=1) -> -1
    np.testing.assert_allclose(col, [0, 0, 0, 1, 0, -1])


def test_build_design_study1_shape():
    counts = (20, 20, 20, 20, 20, 20)
    panel = make_panel(T=30, cohorts=(2, 3, 4, 5, 6), d=12, counts=counts, seed=5)
    design = build_design(panel)
    assert design.values.shape == (3600, 2209)
    assert design.layout.p == count_params(30, (2, 3, 4, 5, 6), 12)[0]


def test_tau_columns_have_exactly_nr_ones():
    panel = make_panel(T=5, cohorts=(2, 4), d=1, counts=(3, 4, 2), seed=7)
    design = build_design(panel)
    lay = design.layout
    for r, n_r in ((2, 4), (4, 2)):
        for t in range(r, 6):
            col = design.values[:, lay.tau_index(r, t)]
            assert set(np.unique(col)) <= {0.0, 1.0}
            assert col.sum() == n_r


def test_time_dummy_rows():
    panel = make_panel(T=4, cohorts=(2,), d=0, counts=(2, 2), seed=8)
    design = build_design(panel)
    lay = design.layout
    time_block = design.values[:, lay.off_time : lay.off_time + 3]
    rows_t = np.tile(np.arange(1, 5), 4)
    # at most one dummy is 1 per row; zero exactly at t = 1
    assert np.array_equal(time_block.sum(axis=1), (rows_t != 1).astype(float))


def test_treatment_interactions_sum_to_zero_within_cell():
    panel = make_panel(T=5, cohorts=(2, 3), d=3, counts=(5, 6, 4), seed=9)
    design = build_design(panel)
    lay = design.layout
    for r, t in lay.treated_cells():
        for j in range(3):
            col = design.values[:, lay.rho_index(r, t, j)]
            assert abs(col.sum()) <= 1e-10


@settings(max_examples=25, deadline=None)
@given(
    T=st.integers(min_value=2, max_value=7),
    d=st.integers(min_value=0, max_value=3),
    data=st.data(),
)
def test_count_params_matches_built_design(T, d, data):
    cohorts = tuple(
        sorted(
            data.draw(
                st.sets(st.integers(min_value=2, max_value=T), min_size=1, max_size=T - 1)
            )
        )
    )
    counts = [2] + [2] * len(cohorts)
    panel = make_panel(T=T, cohorts=cohorts, d=d, counts=counts, seed=11)
    design = build_design(panel)
    p, w = count_params(T, cohorts, d)
    assert design.values.shape[1] == p
    assert design.layout.w_count == w
    offs = design.layout
    sizes = offs.block_sizes()
    assert offs.off_treat_cov + sizes["treat_cov"] == p


def test_centering_constant_column():
    design = np.column_stack([np.full(6, 3.0), np.arange(6.0)])
    y = np.arange(6.0)
    zc, yc, col_means, y_mean = center_response_and_columns(design, y)
    np.testing.assert_allclose(zc[:, 0], 0.0)
    assert col_means[0] == 3.0
    assert y_mean == 2.5


def test_centering_already_centered():
    rng = np.random.default_rng(0)
    z = rng.standard_normal((8, 3))
    z -= z.mean(axis=0)
    y = rng.standard_normal(8)
    y -= y.mean()
    zc, yc, _, _ = center_response_and_columns(z, y)
    np.testing.assert_allclose(zc, z, atol=1e-15)
    np.testing.assert_allclose(yc, y, atol=1e-15)


def test_centering_random_sums():
    rng = np.random.default_rng(1)
    z = 10.0 * rng.standard_normal((6, 4)) + 5.0
    y = rng.standard_normal(6) + 2.0
    zc, yc, _, _ = center_response_and_columns(z, y)
    # independent oracle: direct summation
    assert np.all(np.abs(zc.sum(axis=0)) <= 1e-12)
    assert abs(yc.sum()) <= 1e-12


def test_column_names_cover_layout():
    layout = build_layout(4, (2, 3), 2)
    names = layout.column_names()
    assert len(names) == layout.p == len(set(names))
    assert names[layout.tau_index(2, 3)] == "tau_r2_t3"
    assert names[layout.rho_index(3, 4, 1)] == "rho_r3_t4_x2"
    assert names[layout.xi_index(2, 0)] == "xi_t2_x1"


def test_debug_dump_round_trips(tmp_path):
    import csv

    from fetwfe.design import dump_design_csv

    panel = make_panel(T=3, cohorts=(2,), d=1, counts=(2, 2), seed=13)
    design = build_design(panel)
    path = tmp_path / "design.csv"
    dump_design_csv(design, path)
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == design.layout.column_names()
    values = np.array(rows[1:], dtype=float)
    np.testing.assert_allclose(values, design.values)
