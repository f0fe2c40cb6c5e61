import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from fetwfe.design import build_layout
from fetwfe.effects import cohort_att
from fetwfe.errors import EmptySelection, NoTreatedUnits, SingularCovariance
from fetwfe.fusion import build_fusion
from fetwfe.inference import (
    conf_interval,
    jacobian_cohort_share,
    m_hat,
    norm_cdf,
    norm_ppf,
    psi_vector_catt,
    psi_vector_fixed,
    selected_cov,
    sigma_m_hat,
    var_catt_fixed,
    var_conservative,
    var_fixed,
    var_weighted,
    VarianceEstimate,
)
from fetwfe.panel import CohortCounts
from fetwfe.solver import BridgeFit


@pytest.fixture
def setup():
    layout = build_layout(4, (2, 3), 1)
    return layout, build_fusion(layout)


def fake_fit(theta, fusion):
    theta = np.asarray(theta, dtype=float)
    return BridgeFit(
        lam=1.0, q=0.5, theta_hat=theta,
        beta_hat=np.asarray(fusion.d_inv @ theta),
        selected=np.flatnonzero(theta != 0.0), rss=0.0, bic=0.0,
        iterations=1, converged=True,
    )


def test_selected_cov_identity_for_orthonormal_columns(setup):
    layout, fusion = setup
    n = 40
    rng = np.random.default_rng(0)
    raw = rng.standard_normal((n, 3))
    raw -= raw.mean(axis=0)  # center first so QR columns stay centered
    Q, _ = np.linalg.qr(raw)
    Q *= np.sqrt(n)  # unit sample variance
    # design in beta coordinates that lands on selected columns after D^{-1}:
    # use D columns so that Z @ D^{-1} restricted to idx equals Q
    idx = [layout.tau_index(2, 2), layout.tau_index(2, 3), layout.tau_index(3, 3)]
    Z = np.zeros((n, layout.p))
    D = fusion.d_mat.toarray()
    for k, j in enumerate(idx):
        Z += np.outer(Q[:, k], D[j])
    cov = selected_cov(Z, fusion, idx)
    np.testing.assert_allclose(cov.matrix, np.eye(3), atol=1e-10)
    np.testing.assert_allclose(cov.inverse @ cov.matrix, np.eye(3), atol=1e-8)


def test_selected_cov_empty(setup):
    layout, fusion = setup
    with pytest.raises(EmptySelection):
        selected_cov(np.zeros((4, layout.p)), fusion, [])


def test_selected_cov_matches_dense_oracle(setup):
    layout, fusion = setup
    rng = np.random.default_rng(1)
    Z = rng.standard_normal((30, layout.p))
    sel = [0, 3, layout.tau_index(2, 3), layout.p - 1]
    cov = selected_cov(Z, fusion, sel)
    A = (Z @ fusion.d_inv.toarray())[:, sorted(sel)]
    A -= A.mean(axis=0)
    np.testing.assert_allclose(cov.matrix, A.T @ A / 30, atol=1e-12)


def test_selected_cov_singular(setup):
    layout, fusion = setup
    Z = np.zeros((10, layout.p))
    Z[:, 0] = np.arange(10.0)
    with pytest.raises(SingularCovariance):
        selected_cov(Z, fusion, [0, 1])


def test_psi_vector_fixed_single_cell(setup):
    layout, fusion = setup
    psi = psi_vector_fixed({(2, 3): 1.0}, fusion, layout)
    np.testing.assert_array_equal(
        psi, fusion.d_inv.toarray()[layout.tau_index(2, 3)]
    )
    assert np.array_equal(
        psi_vector_fixed({}, fusion, layout), np.zeros(layout.p)
    )


def test_psi_vector_fixed_cohort_weights_oracle():
    layout = build_layout(5, (2, 3, 4), 2)
    fusion = build_fusion(layout)
    r = 3
    w = 1.0 / (5 - r + 1)
    weights = {(r, t): w for t in range(r, 6)}
    psi = psi_vector_fixed(weights, fusion, layout)
    dinv = fusion.d_inv.toarray()
    oracle = sum(w * dinv[layout.tau_index(r, t)] for t in range(r, 6))
    np.testing.assert_allclose(psi, oracle, atol=1e-15)
    vals = set(np.round(np.unique(psi), 12))
    assert vals <= {0.0, round(w, 12), round(2 * w, 12), round(3 * w, 12), round(4 * w, 12)}


def test_var_fixed_examples():
    from fetwfe.inference import SelectedCovariance

    sc = SelectedCovariance(
        indices=np.array([0, 1]), matrix=np.eye(2), inverse=np.eye(2)
    )
    psi = np.array([1.0, 1.0, 0.0])
    est = var_fixed(psi, sc, 1.0)
    assert est.value == pytest.approx(2.0)
    assert not est.degenerate
    rng = np.random.default_rng(2)
    A = rng.standard_normal((6, 3))
    spd = A.T @ A + np.eye(3)
    sc2 = SelectedCovariance(
        indices=np.array([0, 1, 2]), matrix=spd, inverse=np.linalg.inv(spd)
    )
    e1 = np.zeros(5)
    e1[0] = 1.0
    assert var_fixed(e1, sc2, 2.0).value == pytest.approx(
        2.0 * np.linalg.inv(spd)[0, 0]
    )


def test_var_fixed_quadratic_oracle():
    from fetwfe.inference import SelectedCovariance

    rng = np.random.default_rng(3)
    A = rng.standard_normal((12, 5))
    spd = A.T @ A / 12 + 0.5 * np.eye(5)
    sc = SelectedCovariance(
        indices=np.arange(5), matrix=spd, inverse=np.linalg.inv(spd)
    )
    psi = rng.standard_normal(9)
    got = var_fixed(psi, sc, 1.7).value
    want = 1.7 * psi[:5] @ np.linalg.solve(spd, psi[:5])
    assert got == pytest.approx(want, abs=1e-10)


def test_var_fixed_degenerate():
    from fetwfe.inference import SelectedCovariance

    sc = SelectedCovariance(
        indices=np.array([4]), matrix=np.eye(1), inverse=np.eye(1)
    )
    est = var_fixed(np.zeros(9), sc, 1.0)
    assert est.degenerate


def test_sigma_m_hat_example():
    counts = CohortCounts(n_0=2, n_r={2: 1, 3: 1}, n_tau=2)
    got = sigma_m_hat(counts, 4)
    want = np.array([[4, -2, -2], [-2, 3, -1], [-2, -1, 3]]) / 16.0
    np.testing.assert_allclose(got, want, atol=1e-15)


def test_sigma_m_hat_degenerate_category():
    counts = CohortCounts(n_0=6, n_r={2: 0}, n_tau=0)
    got = sigma_m_hat(counts, 6)
    np.testing.assert_allclose(got, np.zeros((2, 2)), atol=1e-15)


@given(st.lists(st.integers(min_value=0, max_value=30), min_size=2, max_size=6))
def test_sigma_m_hat_rows_sum_zero(sizes):
    n = sum(sizes)
    if n == 0:
        return
    counts = CohortCounts(
        n_0=sizes[0],
        n_r={r + 2: s for r, s in enumerate(sizes[1:])},
        n_tau=sum(sizes[1:]),
    )
    m = sigma_m_hat(counts, n)
    np.testing.assert_allclose(m.sum(axis=1), 0.0, atol=1e-12)
    np.testing.assert_allclose(m, m.T, atol=1e-15)


def test_jacobian_example():
    counts = CohortCounts(n_0=2, n_r={2: 1, 3: 1}, n_tau=2)  # pi = (.5,.25,.25)
    jac = jacobian_cohort_share(counts)
    assert jac.shape == (3, 2)
    np.testing.assert_allclose(jac[0], 0.0)
    assert jac[1, 0] == pytest.approx(1.0)  # d f_2 / d pi_2
    assert jac[2, 0] == pytest.approx(-1.0)  # d f_2 / d pi_3
    assert jac[1, 1] == pytest.approx(-1.0)  # d f_3 / d pi_2


def test_jacobian_single_cohort_is_zero():
    counts = CohortCounts(n_0=3, n_r={2: 5}, n_tau=5)
    np.testing.assert_allclose(jacobian_cohort_share(counts), 0.0, atol=1e-15)
    with pytest.raises(NoTreatedUnits):
        jacobian_cohort_share(CohortCounts(n_0=3, n_r={}, n_tau=0))


def test_jacobian_finite_differences():
    rng = np.random.default_rng(4)
    sizes = (7, 5, 9, 4)
    n = sum(sizes)
    counts = CohortCounts(
        n_0=sizes[0], n_r={2: sizes[1], 3: sizes[2], 4: sizes[3]},
        n_tau=sum(sizes[1:]),
    )
    jac = jacobian_cohort_share(counts)
    pi = np.array(sizes) / n

    def f(pvec):
        s = pvec[1:].sum()
        return pvec[1:] / s

    eps = 1e-7
    for i in range(4):
        up, dn = pi.copy(), pi.copy()
        up[i] += eps
        dn[i] -= eps
        fd = (f(up) - f(dn)) / (2 * eps)
        np.testing.assert_allclose(jac[i], fd, atol=1e-6)


def _small_instance(seed=5):
    layout = build_layout(4, (2, 3), 1)
    fusion = build_fusion(layout)
    rng = np.random.default_rng(seed)
    Z = rng.standard_normal((40, layout.p))
    Z -= Z.mean(axis=0)
    theta = rng.standard_normal(layout.p)
    theta[rng.random(layout.p) < 0.4] = 0.0
    fit = fake_fit(theta, fusion)
    counts = CohortCounts(n_0=4, n_r={2: 3, 3: 5}, n_tau=8)
    weights = {}
    for r in (2, 3):
        w = 1.0 / (4 - r + 1)
        weights.update({(r, t): w for t in range(r, 5)})
    if fit.selected.size == 0:
        fit = fake_fit(np.ones(layout.p), fusion)
    cov = selected_cov(Z, fusion, fit.selected)
    return layout, fusion, Z, fit, counts, weights, cov


def test_var_weighted_formula_replay_oracle():
    layout, fusion, Z, fit, counts, weights, cov = _small_instance()
    got = var_weighted(fit, layout, fusion, cov, counts, weights, 2.0)
    # independent recomposition: invert D numerically, dense algebra
    dinv = np.linalg.inv(fusion.d_mat.toarray())
    shares = {r: counts.n_r[r] / counts.n_tau for r in layout.cohorts}
    psi_hat = np.zeros(layout.p)
    for (r, t), w in weights.items():
        psi_hat += shares[r] * w * dinv[layout.tau_index(r, t)]
    A = (Z @ dinv)[:, fit.selected]
    A -= A.mean(axis=0)
    chat = A.T @ A / Z.shape[0]
    first = 2.0 * psi_hat[fit.selected] @ np.linalg.solve(chat, psi_hat[fit.selected])
    n = counts.total
    pis = np.array([counts.n_0 / n] + [counts.n_r[r] / n for r in layout.cohorts])
    s = pis[1:].sum()
    jac = np.zeros((3, 2))
    for col in range(2):
        jac[1:, col] = -pis[1 + col] / s**2
        jac[1 + col, col] = (s - pis[1 + col]) / s**2
    sig = -np.outer(pis, pis) + np.diag(pis)
    M = np.zeros((2, fit.selected.size))
    for k, r in enumerate(layout.cohorts):
        for t in range(r, 5):
            M[k] += weights[(r, t)] * dinv[layout.tau_index(r, t)][fit.selected]
    vhat = layout.n_times * M.T @ jac.T @ sig @ jac @ M
    second = fit.theta_hat[fit.selected] @ vhat @ fit.theta_hat[fit.selected]
    assert got.value == pytest.approx(first + second, abs=1e-10)
    assert got.components[0] == pytest.approx(first, abs=1e-10)
    assert got.components[1] == pytest.approx(second, abs=1e-10)


def test_var_weighted_second_term_vanishes_for_single_cohort():
    layout = build_layout(3, (2,), 0)
    fusion = build_fusion(layout)
    rng = np.random.default_rng(6)
    Z = rng.standard_normal((30, layout.p))
    Z -= Z.mean(axis=0)
    fit = fake_fit(rng.standard_normal(layout.p), fusion)
    cov = selected_cov(Z, fusion, fit.selected)
    counts = CohortCounts(n_0=4, n_r={2: 6}, n_tau=6)
    weights = {(2, 2): 0.5, (2, 3): 0.5}
    est = var_weighted(fit, layout, fusion, cov, counts, weights, 1.0)
    assert est.components[1] == pytest.approx(0.0, abs=1e-15)
    psi_hat = psi_vector_fixed(weights, fusion, layout)  # share = 1
    assert est.value == pytest.approx(var_fixed(psi_hat, cov, 1.0).value, abs=1e-10)


def test_var_weighted_reduces_to_fixed_when_theta_zero_on_set():
    layout, fusion, Z, fit, counts, weights, _ = _small_instance(seed=8)
    # evaluate on an index set where theta is zero: second term must vanish
    zero_idx = np.flatnonzero(fit.theta_hat == 0.0)[:3]
    if zero_idx.size == 0:
        pytest.skip("no zero coordinates in this draw")
    cov = selected_cov(Z, fusion, zero_idx)
    got = var_weighted(fit, layout, fusion, cov, counts, weights, 2.0)
    shares = {r: counts.n_r[r] / counts.n_tau for r in layout.cohorts}
    psi_hat = np.zeros(layout.p)
    dinv = fusion.d_inv.toarray()
    for (r, t), w in weights.items():
        psi_hat += shares[r] * w * dinv[layout.tau_index(r, t)]
    want = var_fixed(psi_hat, cov, 2.0)
    assert got.components[1] == pytest.approx(0.0, abs=1e-12)
    assert got.value == pytest.approx(want.value, abs=1e-10)


def test_m_hat_rows_give_cohort_averages(setup):
    layout, fusion = setup
    rng = np.random.default_rng(9)
    theta = rng.standard_normal(layout.p)
    fit = fake_fit(theta, fusion)
    weights = {}
    for r in (2, 3):
        w = 1.0 / (4 - r + 1)
        weights.update({(r, t): w for t in range(r, 5)})
    sel = np.arange(layout.p)
    M = m_hat(weights, fusion, layout, sel)
    per_cohort = cohort_att(fit, layout)
    np.testing.assert_allclose(M @ theta, [per_cohort[2], per_cohort[3]], atol=1e-12)


def test_var_conservative_examples():
    assert var_conservative(1.0, 0.0).value == pytest.approx(1.0)
    assert var_conservative(4.0, 1.0).value == pytest.approx(9.0)
    assert var_conservative(2.0, 3.0).value == pytest.approx(5.0 + 2.0 * math.sqrt(6.0))
    assert var_conservative(2.0, 3.0).value == pytest.approx(9.898979, abs=1e-6)


@given(
    a=st.floats(min_value=0, max_value=1e6),
    b=st.floats(min_value=0, max_value=1e6),
)
def test_var_conservative_dominates_sum(a, b):
    assert var_conservative(a, b).value >= a + b - 1e-9


def test_norm_ppf_accuracy():
    us = np.concatenate(
        [
            [1e-6, 1e-4, 0.02, 0.024, 0.025, 0.5, 0.975, 0.999999],
            np.linspace(1e-6, 1 - 1e-6, 200),
        ]
    )
    for u in us:
        assert abs(norm_cdf(norm_ppf(float(u))) - u) <= 1e-12
    assert norm_ppf(0.975) == pytest.approx(1.959964, abs=1e-6)


def test_conf_interval_standard_normal_quantile():
    var = VarianceEstimate(value=100.0, kind="fixed-weight")
    ci = conf_interval(0.0, var, 100, 0.05)
    assert ci.low == pytest.approx(-1.959964, abs=1e-5)
    assert ci.high == pytest.approx(1.959964, abs=1e-5)


def test_conf_interval_reported_application_numbers():
    # point estimate -3.76 with conservative se 4.58 at nominal 95%
    nt = 1386
    var = VarianceEstimate(value=4.58**2 * nt, kind="weighted-conservative")
    ci = conf_interval(-3.76, var, nt, 0.05)
    assert ci.low == pytest.approx(-12.74, abs=5e-3)
    assert ci.high == pytest.approx(5.22, abs=5e-3)


def test_conf_interval_alpha_one_and_degenerate():
    var = VarianceEstimate(value=3.0, kind="fixed-weight")
    ci = conf_interval(1.5, var, 10, 1.0)
    assert ci.low == ci.high == 1.5
    degen = VarianceEstimate(value=0.0, kind="fixed-weight", degenerate=True)
    ci = conf_interval(1.5, degen, 10, 0.05)
    assert ci.degenerate and not ci.contains(1.5)


def test_psi_vector_catt_and_variance(setup):
    layout, fusion = setup
    means = np.array([[0.5], [-0.5]])
    layout = build_layout(4, (2, 3), 1, cohort_means=means)
    rng = np.random.default_rng(10)
    x = np.array([1.5])
    weights = {(2, 2): 1.0}
    psi = psi_vector_catt(weights, x, fusion, layout)
    dinv = fusion.d_inv.toarray()
    want = dinv[layout.tau_index(2, 2)] + (1.5 - 0.5) * dinv[layout.rho_index(2, 2, 0)]
    np.testing.assert_allclose(psi, want, atol=1e-12)

    Z = rng.standard_normal((40, layout.p))
    Z -= Z.mean(axis=0)
    theta = rng.standard_normal(layout.p)
    fit = fake_fit(theta, fusion)
    cov = selected_cov(Z, fusion, fit.selected)
    counts = CohortCounts(n_0=4, n_r={2: 4, 3: 4}, n_tau=8)
    cov_x = {2: np.eye(1), 3: np.eye(1)}
    est = var_catt_fixed(fit, layout, fusion, cov, counts, x, weights, 1.0, cov_x)
    assert est.value >= var_fixed(psi, cov, 1.0).value  # adds the mean term
