"""Finite-sample variance estimators and asymptotic confidence intervals.

Every aggregated effect is a linear functional psi' theta of the selected
coefficients. With known noise variance sigma^2, its sampling variance is
estimated by the quadratic form sigma^2 * psi_S' C^{-1} psi_S, where C is
the sample covariance of the selected reparameterized design columns. When
the cohort-share weights are themselves estimated, a multinomial delta-
method term is added; on a single sample the two terms combine
conservatively as (sqrt(a) + sqrt(b))^2.

When every selected coefficient relevant to the weights is zero, the
statistic is not asymptotically normal (it collapses to zero), so the
estimate is flagged degenerate and no interval is produced.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import linalg as sla

from .design import DesignLayout
from .errors import EmptySelection, NoTreatedUnits, SingularCovariance
from .fusion import FusionMatrix
from .panel import CohortCounts
from .solver import BridgeFit


@dataclass(frozen=True)
class SelectedCovariance:
    """Sample covariance of the selected columns of Z D^{-1}, and its inverse."""

    indices: np.ndarray
    matrix: np.ndarray
    inverse: np.ndarray

    def restrict(self, psi: np.ndarray) -> np.ndarray:
        """psi restricted to the selected indices."""
        return np.asarray(psi, dtype=float)[self.indices]


@dataclass(frozen=True)
class VarianceEstimate:
    value: float
    kind: str  # "fixed-weight" | "weighted-split" | "weighted-conservative"
    degenerate: bool = False
    components: tuple | None = None  # (sampling term, weight term) where split


@dataclass(frozen=True)
class ConfInterval:
    low: float
    high: float
    degenerate: bool = False

    def contains(self, value: float) -> bool:
        return (not self.degenerate) and self.low <= value <= self.high


def selected_cov(
    design: np.ndarray, fusion: FusionMatrix, selected
) -> SelectedCovariance:
    """(1/n) A'A for A the centered selected columns of design @ D^{-1}.

    The column selection happens inside the sparse right-multiplication, so
    the full reparameterized matrix is never formed.
    """
    idx = np.asarray(sorted(selected), dtype=int)
    if idx.size == 0:
        raise EmptySelection("no selected coefficients")
    cols = fusion.d_inv[:, idx.tolist()]
    A = np.asarray(design @ cols.toarray())
    A = A - A.mean(axis=0)
    n = A.shape[0]
    matrix = (A.T @ A) / n
    try:
        chol = sla.cho_factor(matrix, lower=True)
    except sla.LinAlgError as exc:
        raise SingularCovariance(
            "selected-column covariance is not positive definite; the "
            "selected columns are linearly dependent"
        ) from exc
    inverse = sla.cho_solve(chol, np.eye(idx.size))
    return SelectedCovariance(indices=idx, matrix=matrix, inverse=inverse)


def psi_vector_fixed(
    weights: dict, fusion: FusionMatrix, layout: DesignLayout
) -> np.ndarray:
    """The p-vector sum_rt psi_rt * (row i(r,t) of D^{-1}).

    Restricting this vector to any index set gives the contrast for the
    corresponding selected coefficients.
    """
    psi = np.zeros(layout.p)
    rows = [layout.tau_index(r, t) for (r, t) in weights]
    if rows:
        dense = fusion.d_inv_rows(rows)
        for w, row in zip(weights.values(), dense):
            psi += w * row
    return psi


def var_fixed(
    psi: np.ndarray, cov: SelectedCovariance, sigma_sq: float
) -> VarianceEstimate:
    """sigma^2 * psi_S' C^{-1} psi_S for fixed (non-estimated) weights."""
    psi_s = cov.restrict(psi)
    if not np.any(psi_s):
        return VarianceEstimate(0.0, "fixed-weight", degenerate=True)
    value = float(sigma_sq * psi_s @ cov.inverse @ psi_s)
    return VarianceEstimate(max(value, 0.0), "fixed-weight")


def sigma_m_hat(counts: CohortCounts, n: int) -> np.ndarray:
    """Estimated multinomial covariance of the group shares.

    (R+1) x (R+1) over groups (0, r_1, ..., r_R):
    diagonal N_w (n - N_w) / n^2, off-diagonal -N_w N_w' / n^2.
    """
    if n <= 0:
        raise ValueError("n must be positive")
    sizes = np.array([counts.n_0] + [counts.n_r[r] for r in sorted(counts.n_r)], float)
    m = -np.outer(sizes, sizes)
    np.fill_diagonal(m, sizes * (n - sizes))
    return m / n**2


def jacobian_cohort_share(counts: CohortCounts) -> np.ndarray:
    """Jacobian of the shares f_r = pi_r / sum_{r'} pi_{r'} at the estimates.

    (R+1) x R with rows ordered (0, r_1, ..., r_R) and columns (r_1..r_R):
    the never-treated row is zero, d f_r / d pi_r = (S - pi_r) / S^2, and
    d f_r / d pi_{r'} = -pi_r / S^2 for r' != r, with S = sum of treated
    shares.
    """
    if counts.n_tau <= 0:
        raise NoTreatedUnits("Jacobian undefined without treated units")
    n = counts.total
    cohorts = sorted(counts.n_r)
    pi = np.array([counts.n_r[r] / n for r in cohorts])
    s = pi.sum()
    jac = np.zeros((len(cohorts) + 1, len(cohorts)))
    for col in range(len(cohorts)):
        jac[1:, col] = -pi[col] / s**2
        jac[1 + col, col] = (s - pi[col]) / s**2
    return jac


def m_hat(
    weights: dict,
    fusion: FusionMatrix,
    layout: DesignLayout,
    selected: np.ndarray,
) -> np.ndarray:
    """R x |S| matrix stacking each cohort's weighted D^{-1} row combination."""
    m = np.zeros((layout.R, selected.size))
    for k, r in enumerate(layout.cohorts):
        cells = [(rr, t) for (rr, t) in weights if rr == r]
        if not cells:
            continue
        rows = fusion.d_inv_rows([layout.tau_index(*c) for c in cells])
        combo = np.zeros(layout.p)
        for cell, row in zip(cells, rows):
            combo += weights[cell] * row
        m[k] = combo[selected]
    return m


def var_weighted(
    fit: BridgeFit,
    layout: DesignLayout,
    fusion: FusionMatrix,
    cov: SelectedCovariance,
    counts: CohortCounts,
    weights: dict,
    sigma_sq: float,
) -> VarianceEstimate:
    """Variance for cohort-share-weighted aggregates (split-sample form).

    First term: the fixed-weight quadratic form with the estimated-share
    contrast psi_hat = sum_r f_hat_r sum_t psi_rt (D^{-1})_{i(r,t)}.
    Second term: theta_S' V_hat theta_S with
    V_hat = T * M' grad_f' Sigma_M grad_f M, the delta-method variance of
    the multinomial share estimates. Validity of the normal CI needs the
    counts to come from an independent sample; on a shared sample use
    :func:`var_conservative` on the two components.
    """
    shares = {r: counts.n_r[r] / counts.n_tau for r in layout.cohorts}
    psi_hat = np.zeros(layout.p)
    for (r, t), w in weights.items():
        psi_hat += (shares[r] * w) * fusion.d_inv_rows([layout.tau_index(r, t)])[0]
    psi_s = cov.restrict(psi_hat)
    if not np.any(psi_s):
        return VarianceEstimate(
            0.0, "weighted-split", degenerate=True, components=(0.0, 0.0)
        )
    first = float(sigma_sq * psi_s @ cov.inverse @ psi_s)

    m = m_hat(weights, fusion, layout, cov.indices)
    jac = jacobian_cohort_share(counts)
    sig_m = sigma_m_hat(counts, counts.total)
    v_hat = layout.n_times * m.T @ jac.T @ sig_m @ jac @ m
    theta_s = fit.theta_hat[cov.indices]
    second = float(theta_s @ v_hat @ theta_s)
    return VarianceEstimate(
        max(first, 0.0) + max(second, 0.0),
        "weighted-split",
        components=(max(first, 0.0), max(second, 0.0)),
    )


def var_conservative(a: float, b: float) -> VarianceEstimate:
    """Single-sample conservative combination a + b + 2 sqrt(ab)."""
    if a < 0 or b < 0:
        raise ValueError("variance components must be nonnegative")
    return VarianceEstimate(
        (math.sqrt(a) + math.sqrt(b)) ** 2, "weighted-conservative"
    )


def psi_vector_catt(
    weights: dict, x: np.ndarray, fusion: FusionMatrix, layout: DesignLayout
) -> np.ndarray:
    """Contrast vector for conditional effects at covariate value x.

    sum_rt psi_rt [ (D^{-1})_{i(r,t)} + (x - Xbar_r)' (D^{-1})_{i(r,t,.)} ].
    Uses the layout's stored cohort means; for the CI to be valid those
    means must come from a sample independent of the fit (single-sample
    conditional standard errors carry no guarantee).
    """
    x = np.asarray(x, dtype=float)
    psi = np.zeros(layout.p)
    for (r, t), w in weights.items():
        rows = [layout.tau_index(r, t)] + [
            layout.rho_index(r, t, j) for j in range(layout.d)
        ]
        dense = fusion.d_inv_rows(rows)
        centered = x - layout.cohort_means[layout.cohorts.index(r)]
        psi += w * (dense[0] + centered @ dense[1:])
    return psi


def var_catt_fixed(
    fit: BridgeFit,
    layout: DesignLayout,
    fusion: FusionMatrix,
    cov: SelectedCovariance,
    counts: CohortCounts,
    x: np.ndarray,
    weights: dict,
    sigma_sq: float,
    cov_x_by_cohort: dict,
) -> VarianceEstimate:
    """Fixed-weight conditional-effect variance (independent-means form).

    Adds to the quadratic form the mean-estimation term
    T * sum_r (sum_t psi_rt rho_hat_rt)' Cov(X | W=r) (...) / (N_r / N),
    where `cov_x_by_cohort` maps r to an estimate of Cov(X_i | W_i = r).
    """
    psi = psi_vector_catt(weights, x, fusion, layout)
    psi_s = cov.restrict(psi)
    if not np.any(psi_s):
        return VarianceEstimate(0.0, "fixed-weight", degenerate=True)
    first = float(sigma_sq * psi_s @ cov.inverse @ psi_s)
    beta = fit.beta_hat
    second = 0.0
    n = counts.total
    for r in layout.cohorts:
        combo = np.zeros(layout.d)
        for (rr, t), w in weights.items():
            if rr != r:
                continue
            combo += w * np.array(
                [beta[layout.rho_index(r, t, j)] for j in range(layout.d)]
            )
        if np.any(combo):
            share = counts.n_r[r] / n
            second += float(combo @ cov_x_by_cohort[r] @ combo) / share
    second *= layout.n_times
    return VarianceEstimate(
        max(first, 0.0) + max(second, 0.0),
        "fixed-weight",
        components=(max(first, 0.0), max(second, 0.0)),
    )


# Standard-normal quantile: rational approximation refined by one Newton
# step on Phi, so |Phi(Phi^{-1}(u)) - u| <= 1e-12 across u in (1e-6, 1-1e-6).

_PPF_A = (
    -3.969683028665376e01, 2.209460984245205e02, -2.759285104469687e02,
    1.383577518672690e02, -3.066479806614716e01, 2.506628277459239e00,
)
_PPF_B = (
    -5.447609879822406e01, 1.615858368580409e02, -1.556989798598866e02,
    6.680131188771972e01, -1.328068155288572e01,
)
_PPF_C = (
    -7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e00,
    -2.549732539343734e00, 4.374664141464968e00, 2.938163982698783e00,
)
_PPF_D = (
    7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e00,
    3.754408661907416e00,
)


def norm_cdf(x: float) -> float:
    return 0.5 * (1.0 + math.erf(x / math.sqrt(2.0)))


def norm_ppf(u: float) -> float:
    """Inverse standard-normal CDF."""
    if not (0.0 < u < 1.0):
        if u == 0.0:
            return -math.inf
        if u == 1.0:
            return math.inf
        raise ValueError("u must lie in [0, 1]")
    if u == 0.5:
        return 0.0
    p_low = 0.02425
    if u < p_low:
        z = math.sqrt(-2.0 * math.log(u))
        x = (
            ((((_PPF_C[0] * z + _PPF_C[1]) * z + _PPF_C[2]) * z + _PPF_C[3]) * z + _PPF_C[4]) * z
            + _PPF_C[5]
        ) / ((((_PPF_D[0] * z + _PPF_D[1]) * z + _PPF_D[2]) * z + _PPF_D[3]) * z + 1.0)
    elif u <= 1.0 - p_low:
        z = u - 0.5
        w = z * z
        x = (
            (((((_PPF_A[0] * w + _PPF_A[1]) * w + _PPF_A[2]) * w + _PPF_A[3]) * w + _PPF_A[4]) * w + _PPF_A[5])
            * z
        ) / (((((_PPF_B[0] * w + _PPF_B[1]) * w + _PPF_B[2]) * w + _PPF_B[3]) * w + _PPF_B[4]) * w + 1.0)
    else:
        z = math.sqrt(-2.0 * math.log(1.0 - u))
        x = -(
            ((((_PPF_C[0] * z + _PPF_C[1]) * z + _PPF_C[2]) * z + _PPF_C[3]) * z + _PPF_C[4]) * z
            + _PPF_C[5]
        ) / ((((_PPF_D[0] * z + _PPF_D[1]) * z + _PPF_D[2]) * z + _PPF_D[3]) * z + 1.0)
    # one Newton step on Phi(x) = u
    pdf = math.exp(-0.5 * x * x) / math.sqrt(2.0 * math.pi)
    if pdf > 0.0:
        x -= (norm_cdf(x) - u) / pdf
    return x


def conf_interval(
    estimate: float, variance: VarianceEstimate, nt: int, alpha: float
) -> ConfInterval:
    """estimate -/+ Phi^{-1}(1 - alpha/2) * sqrt(v / NT), or a degenerate marker."""
    if not (0 < alpha < 1):
        if alpha == 1.0:
            return ConfInterval(estimate, estimate, degenerate=variance.degenerate)
        raise ValueError("alpha must lie in (0, 1]")
    if variance.degenerate:
        return ConfInterval(math.nan, math.nan, degenerate=True)
    half = norm_ppf(1.0 - alpha / 2.0) * math.sqrt(variance.value / nt)
    return ConfInterval(estimate - half, estimate + half)
