"""Named coefficient blocks and treatment-effect aggregation.

Point estimates come straight from the fitted coefficient vector: the
average effect for cohort r at time t is the corresponding treatment
coefficient, cohort averages weight its times equally, and the overall
average weights cohorts by their observed treated shares N_r / N_tau.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .design import DesignLayout
from .errors import (
    CohortTimeOutOfRange,
    LayoutMismatch,
    NoTreatedUnits,
    UnknownKey,
)
from .panel import CohortCounts
from .solver import BridgeFit


@dataclass(frozen=True)
class CoefficientBlocks:
    """beta_hat partitioned by the canonical column layout."""

    nu: np.ndarray  # cohort fixed effects, R
    gamma: np.ndarray  # time fixed effects, T-1
    kappa: np.ndarray  # covariate main effects, d
    zeta: np.ndarray  # d x R cohort-covariate interactions
    xi: np.ndarray  # d x (T-1) time-covariate interactions
    tau: dict  # (r, t) -> treatment effect
    rho: dict  # (r, t) -> length-d interaction vector


def recover_beta_blocks(fit: BridgeFit, layout: DesignLayout) -> CoefficientBlocks:
    """Split beta_hat = D^{-1} theta_hat into its named blocks."""
    beta = fit.beta_hat
    if beta.shape[0] != layout.p:
        raise LayoutMismatch(
            f"fit has {beta.shape[0]} coefficients, layout expects {layout.p}"
        )
    T, R, d = layout.n_times, layout.R, layout.d
    nu = beta[layout.off_cohort : layout.off_cohort + R].copy()
    gamma = beta[layout.off_time : layout.off_time + (T - 1)].copy()
    kappa = beta[layout.off_cov : layout.off_cov + d].copy()
    zeta = beta[layout.off_cohort_cov : layout.off_cohort_cov + d * R].reshape(d, R)
    xi = beta[layout.off_time_cov : layout.off_time_cov + d * (T - 1)].reshape(
        d, T - 1
    )
    tau = {cell: float(beta[layout.tau_index(*cell)]) for cell in layout.treated_cells()}
    rho = {
        (r, t): np.array([beta[layout.rho_index(r, t, j)] for j in range(d)])
        for r, t in layout.treated_cells()
    }
    return CoefficientBlocks(
        nu=nu, gamma=gamma, kappa=kappa, zeta=zeta.copy(), xi=xi.copy(), tau=tau, rho=rho
    )


def att_point(fit: BridgeFit, layout: DesignLayout) -> dict:
    """Point estimates: (r, t) -> estimated average effect on cohort r at t."""
    beta = fit.beta_hat
    if beta.shape[0] != layout.p:
        raise LayoutMismatch(
            f"fit has {beta.shape[0]} coefficients, layout expects {layout.p}"
        )
    return {cell: float(beta[layout.tau_index(*cell)]) for cell in layout.treated_cells()}


def cohort_weights(layout: DesignLayout, r: int) -> dict:
    """Equal-time weights 1/(T-r+1) on cohort r's cells, 0 elsewhere."""
    if r not in layout.cohorts:
        raise CohortTimeOutOfRange(f"{r} is not a treatment cohort")
    w = 1.0 / (layout.n_times - r + 1)
    return {(r, t): w for t in range(r, layout.n_times + 1)}


def aggregate_fixed(att: dict, weights: dict) -> float:
    """Fixed-weight aggregation sum_rt psi_rt * att[(r, t)]."""
    total = 0.0
    for key, psi in weights.items():
        if key not in att:
            raise UnknownKey(f"weight refers to unknown cell {key}")
        total += psi * att[key]
    return float(total)


def default_shares(counts: CohortCounts) -> dict:
    """Treated-conditional cohort shares N_r / N_tau."""
    if counts.n_tau <= 0:
        raise NoTreatedUnits("cohort shares need at least one treated unit")
    return {r: n / counts.n_tau for r, n in counts.n_r.items()}


def aggregate_weighted(
    att: dict,
    counts: CohortCounts,
    share_fn: Callable[[CohortCounts], dict] | None = None,
) -> float:
    """Cohort-share-weighted aggregation over equal-time cohort averages.

    sum_r f_r(counts) * mean_t att[(r, t)], with f_r = N_r / N_tau by
    default. Pass counts from an independent sample for split-sample
    weighting.
    """
    shares = (share_fn or default_shares)(counts)
    total = 0.0
    for r, share in shares.items():
        cells = sorted(key for key in att if key[0] == r)
        if not cells:
            raise UnknownKey(f"no estimates for cohort {r}")
        total += share * float(np.mean([att[c] for c in cells]))
    return float(total)


def cohort_att(fit: BridgeFit, layout: DesignLayout) -> dict:
    """r -> equal-time-weighted average of the cohort's effects."""
    att = att_point(fit, layout)
    return {
        r: aggregate_fixed(att, cohort_weights(layout, r)) for r in layout.cohorts
    }


def catt_point(
    fit: BridgeFit, layout: DesignLayout, r: int, t: int, x: np.ndarray
) -> float:
    """Conditional effect at covariates x: tau_rt + (x - Xbar_r)' rho_rt."""
    if r not in layout.cohorts or not (r <= t <= layout.n_times):
        raise CohortTimeOutOfRange(f"({r}, {t}) is not a treated cell")
    x = np.asarray(x, dtype=float)
    if x.shape != (layout.d,):
        raise CohortTimeOutOfRange(f"x must have length d = {layout.d}")
    beta = fit.beta_hat
    tau = float(beta[layout.tau_index(r, t)])
    k = layout.cohorts.index(r)
    centered = x - layout.cohort_means[k]
    rho = np.array([beta[layout.rho_index(r, t, j)] for j in range(layout.d)])
    return tau + float(centered @ rho)


def catt_weighted(
    fit: BridgeFit,
    layout: DesignLayout,
    x: np.ndarray,
    pi_hat: dict,
    weights: dict | None = None,
) -> float:
    """Propensity-weighted conditional aggregation.

    `pi_hat` maps each cohort r to a user-supplied propensity value
    pi_r(x) > 0; the weights are normalized within the treated cohorts. No
    propensity model is bundled; any estimator's output plugs in here.
    `weights` defaults to the equal-time cohort weights 1/(T-r+1).
    """
    denom = sum(pi_hat[r] for r in layout.cohorts)
    if denom <= 0:
        raise NoTreatedUnits("propensity values must sum to a positive total")
    if weights is None:
        weights = {}
        for r in layout.cohorts:
            weights.update(cohort_weights(layout, r))
    total = 0.0
    for (r, t), psi in weights.items():
        total += psi * (pi_hat[r] / denom) * catt_point(fit, layout, r, t, x)
    return float(total)


def ciun_diagnostic(fit: BridgeFit, layout: DesignLayout) -> tuple[bool, list]:
    """Selection-based trends diagnostic.

    True iff every time-by-covariate coefficient is exactly zero, i.e. the
    fit found no evidence that untreated trends depend on covariates. The
    list enumerates nonzero (t, j) entries.
    """
    blocks = recover_beta_blocks(fit, layout)
    violations = [
        (t, j)
        for j in range(layout.d)
        for t in range(2, layout.n_times + 1)
        if blocks.xi[j, t - 2] != 0.0
    ]
    return (len(violations) == 0, violations)


@dataclass
class EffectsReport:
    """Point estimates with inference fields attached by the caller."""

    att_rt: dict
    cohort_att: dict
    overall_att: float
    ciun_flag: bool
    ciun_violations: list = field(default_factory=list)
    catt_evaluations: list = field(default_factory=list)  # (r, t, x, value)
    att_se: dict = field(default_factory=dict)  # (r, t) -> se or None
    att_ci: dict = field(default_factory=dict)  # (r, t) -> (low, high) or None
    cohort_se: dict = field(default_factory=dict)
    cohort_ci: dict = field(default_factory=dict)
    overall_se: float | None = None
    overall_ci: tuple | None = None
    overall_ci_kind: str | None = None
    sigma_source: str | None = None
    custom_aggregate: dict | None = None
    notes: list = field(default_factory=list)

    def to_dict(self) -> dict:
        att = [
            {
                "r": r,
                "t": t,
                "estimate": self.att_rt[(r, t)],
                "se": self.att_se.get((r, t)),
                "ci_low": (self.att_ci.get((r, t)) or (None, None))[0],
                "ci_high": (self.att_ci.get((r, t)) or (None, None))[1],
            }
            for (r, t) in sorted(self.att_rt)
        ]
        cohorts = [
            {
                "r": r,
                "estimate": self.cohort_att[r],
                "se": self.cohort_se.get(r),
                "ci_low": (self.cohort_ci.get(r) or (None, None))[0],
                "ci_high": (self.cohort_ci.get(r) or (None, None))[1],
            }
            for r in sorted(self.cohort_att)
        ]
        return {
            "att": att,
            "cohort_att": cohorts,
            "overall": {
                "estimate": self.overall_att,
                "se": self.overall_se,
                "ci_low": (self.overall_ci or (None, None))[0],
                "ci_high": (self.overall_ci or (None, None))[1],
                "ci_kind": self.overall_ci_kind,
                "sigma_source": self.sigma_source,
            },
            "ciun": self.ciun_flag,
            "ciun_violations": [list(v) for v in self.ciun_violations],
            "catt": [
                {"r": r, "t": t, "x": list(map(float, x)), "value": v}
                for (r, t, x, v) in self.catt_evaluations
            ],
            "custom_aggregate": self.custom_aggregate,
            "notes": list(self.notes),
        }


def effects_report(
    fit: BridgeFit, layout: DesignLayout, counts: CohortCounts
) -> EffectsReport:
    """Assemble the point-estimate side of the report."""
    att = att_point(fit, layout)
    per_cohort = cohort_att(fit, layout)
    overall = aggregate_weighted(att, counts)
    flag, violations = ciun_diagnostic(fit, layout)
    return EffectsReport(
        att_rt=att,
        cohort_att=per_cohort,
        overall_att=overall,
        ciun_flag=flag,
        ciun_violations=violations,
    )
