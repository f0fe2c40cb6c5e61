"""Random-effects whitening for exchangeable within-unit noise.

The composite error for a unit is c*1 + u with Var(c) = sigma_c^2 and
Var(u) = sigma^2 I, so each unit's T x T error covariance is
Omega = sigma^2 I + sigma_c^2 11'. Left-multiplying every unit block by
sigma * Omega^{-1/2} restores a spherical error with variance sigma^2.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .design import DesignMatrix, center_response_and_columns
from .errors import DegenerateResiduals, NonPositiveSigma
from .panel import PanelDataset


@dataclass(frozen=True)
class VarianceComponents:
    """Noise variance sigma^2 > 0 and unit random-effect variance >= 0."""

    sigma_sq: float
    sigma_c_sq: float
    source: str = "user-supplied"  # or "estimated"

    def __post_init__(self):
        if not np.isfinite(self.sigma_sq) or self.sigma_sq <= 0:
            raise NonPositiveSigma(f"sigma_sq must be positive, got {self.sigma_sq}")
        if not np.isfinite(self.sigma_c_sq) or self.sigma_c_sq < 0:
            raise NonPositiveSigma(
                f"sigma_c_sq must be nonnegative, got {self.sigma_c_sq}"
            )


def omega_inv_sqrt(vc: VarianceComponents, T: int) -> np.ndarray:
    """Omega^{-1/2} via the spectral closed form.

    Omega = sigma^2 I + sigma_c^2 11' has eigenvalue sigma^2 + T*sigma_c^2 on
    the constant vector and sigma^2 on its complement, so with J = 11'/T:

        Omega^{-1/2} = (1/sigma)(I - J) + (sigma^2 + T*sigma_c^2)^{-1/2} J.
    """
    sigma = np.sqrt(vc.sigma_sq)
    J = np.full((T, T), 1.0 / T)
    return (np.eye(T) - J) / sigma + J / np.sqrt(vc.sigma_sq + T * vc.sigma_c_sq)


def whitening_block(vc: VarianceComponents, T: int) -> np.ndarray:
    """The per-unit transform sigma * Omega^{-1/2}; identity when sigma_c = 0."""
    return np.sqrt(vc.sigma_sq) * omega_inv_sqrt(vc, T)


def gls_transform(
    design: np.ndarray, response: np.ndarray, vc: VarianceComponents, T: int
) -> tuple[np.ndarray, np.ndarray]:
    """Apply sigma * Omega^{-1/2} to every unit's T-row block.

    Rows must be unit-major with T consecutive rows per unit. The full
    NT x NT transform is never materialized.
    """
    if design.shape[0] % T != 0:
        raise ValueError("row count is not a multiple of T")
    if vc.sigma_c_sq == 0.0:
        return design.copy(), np.asarray(response, dtype=float).copy()
    M = whitening_block(vc, T)
    N = design.shape[0] // T
    zt = np.einsum("ab,nbp->nap", M, design.reshape(N, T, -1))
    yt = np.einsum("ab,nb->na", M, np.asarray(response, dtype=float).reshape(N, T))
    return zt.reshape(design.shape), yt.reshape(-1)


def estimate_variance_components(
    data: PanelDataset,
    design: DesignMatrix,
    ridge_penalty: float | None = None,
) -> VarianceComponents:
    """Estimate (sigma^2, sigma_c^2) from pooled ridge residuals.

    Fits a ridge regression of the centered untransformed response on the
    centered untransformed design (default penalty 1e-3 * tr(Z'Z)/p), then
    decomposes the residuals e_it into within-unit and between-unit
    variation:

        sigma^2_hat   = sum_it (e_it - ebar_i)^2 / (N(T-1))
        sigma_c^2_hat = max(0, sum_i ebar_i^2 / N - sigma^2_hat / T).

    Negative between-unit estimates are truncated at zero. All-zero within-
    unit variation raises :class:`DegenerateResiduals`; supply known
    components in that case.
    """
    Z = design.values
    y = data.response.reshape(-1)
    Zc, yc, _, _ = center_response_and_columns(Z, y)
    p = Zc.shape[1]
    gram = Zc.T @ Zc
    if ridge_penalty is None:
        ridge_penalty = 1e-3 * float(np.trace(gram)) / max(p, 1)
    if ridge_penalty < 0:
        raise ValueError("ridge_penalty must be nonnegative")
    coef = np.linalg.solve(gram + ridge_penalty * np.eye(p), Zc.T @ yc)
    resid = (yc - Zc @ coef).reshape(data.n_units, data.n_times)
    return decompose_residuals(resid, scale=float(np.mean(yc**2)))


def decompose_residuals(resid: np.ndarray, scale: float = 1.0) -> VarianceComponents:
    """Within/between decomposition of N x T residuals.

    Degenerate when the within-unit variation is zero relative to `scale`
    (all-zero or purely unit-level residuals cannot identify sigma^2).
    """
    resid = np.asarray(resid, dtype=float)
    N, T = resid.shape
    unit_means = resid.mean(axis=1)
    within = resid - unit_means[:, None]
    sigma_sq = float(np.sum(within**2)) / (N * (T - 1))
    if sigma_sq <= 1e-12 * max(scale, 1.0):
        raise DegenerateResiduals(
            "within-unit residual variation is zero; supply sigma_sq and "
            "sigma_c_sq explicitly"
        )
    sigma_c_sq = max(0.0, float(np.mean(unit_means**2)) - sigma_sq / T)
    return VarianceComponents(sigma_sq, sigma_c_sq, source="estimated")
