"""End-to-end estimation: panel in, effects report with intervals out."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

from .design import DesignMatrix, build_design, center_response_and_columns
from .effects import EffectsReport, aggregate_fixed, aggregate_weighted, effects_report
from .errors import ConfigError
from .fusion import FusionMatrix, build_fusion, reparameterize
from .gls import VarianceComponents, estimate_variance_components, gls_transform
from .inference import (
    SelectedCovariance,
    conf_interval,
    psi_vector_fixed,
    selected_cov,
    var_conservative,
    var_fixed,
    var_weighted,
)
from .panel import CohortCounts, PanelDataset, cohort_counts
from .solver import BridgeFit, PathPoint, SolverConfig, fit_path_bic, ridge_augment


@dataclass
class EstimateResult:
    report: EffectsReport
    fit: BridgeFit
    design: DesignMatrix
    fusion: FusionMatrix
    vc: VarianceComponents
    counts: CohortCounts
    path: list[PathPoint] = field(default_factory=list)
    nt: int = 0
    cov: SelectedCovariance | None = None


def resolve_variance_components(
    data: PanelDataset,
    design: DesignMatrix,
    sigma_sq: float | None,
    sigma_c_sq: float | None,
) -> VarianceComponents:
    """User-supplied components always override estimation."""
    if (sigma_sq is None) != (sigma_c_sq is None):
        raise ConfigError("supply both sigma-sq and sigma-c-sq, or neither")
    if sigma_sq is not None:
        return VarianceComponents(sigma_sq, sigma_c_sq, source="user-supplied")
    return estimate_variance_components(data, design)


def estimate(
    data: PanelDataset,
    solver: SolverConfig | None = None,
    sigma_sq: float | None = None,
    sigma_c_sq: float | None = None,
    alpha: float = 0.05,
    split_counts: CohortCounts | None = None,
    custom_weights: dict | None = None,
) -> EstimateResult:
    """Run the full pipeline on a validated panel.

    With `split_counts`, the overall effect is weighted by the independent
    counts and gets an exact (normal) interval; otherwise the same-sample
    counts are used with the conservative interval. `custom_weights` maps
    (r, t) to a fixed weight and adds one extra aggregate to the report.
    """
    solver = solver or SolverConfig()
    design = build_design(data, escalate_rank=True)
    # variance components are estimated on the raw design, before whitening
    vc = resolve_variance_components(data, design, sigma_sq, sigma_c_sq)
    zt, yt = gls_transform(design.values, data.response.reshape(-1), vc, data.n_times)
    zc, yc, _, _ = center_response_and_columns(zt, yt)
    fusion = build_fusion(design.layout)
    bridge_design = reparameterize(zc, fusion)
    bridge_response = yc
    if solver.ridge_lambda2 > 0:
        bridge_design, bridge_response = ridge_augment(
            bridge_design, yc, fusion, solver.ridge_lambda2
        )
    fit, path = fit_path_bic(bridge_design, bridge_response, solver, d_inv=fusion.d_inv)

    counts = cohort_counts(data)
    report = effects_report(fit, design.layout, counts)
    report.sigma_source = vc.source
    nt = data.n_units * data.n_times

    cov = None
    if fit.selected.size:
        cov = selected_cov(zc, fusion, fit.selected)
        _attach_intervals(
            report, fit, design, fusion, cov, counts, vc, alpha, nt, split_counts
        )
    else:
        report.notes.append(
            "every coefficient was penalized to zero; intervals are degenerate"
        )
        report.overall_ci_kind = "degenerate"

    if custom_weights:
        att = report.att_rt
        value = aggregate_fixed(att, custom_weights)
        entry = {"estimate": value, "se": None, "ci_low": None, "ci_high": None}
        if cov is not None:
            psi = psi_vector_fixed(custom_weights, fusion, design.layout)
            var = var_fixed(psi, cov, vc.sigma_sq)
            ci = conf_interval(value, var, nt, alpha)
            if not ci.degenerate:
                entry.update(
                    se=math.sqrt(var.value / nt), ci_low=ci.low, ci_high=ci.high
                )
        report.custom_aggregate = entry

    if any(v == 0.0 for v in report.cohort_att.values()):
        report.notes.append("at least one cohort-level estimate is exactly 0")
    else:
        report.notes.append("no restriction zeroed a cohort-level estimate")

    return EstimateResult(
        report=report,
        fit=fit,
        design=design,
        fusion=fusion,
        vc=vc,
        counts=counts,
        path=path,
        nt=nt,
        cov=cov,
    )


def _attach_intervals(
    report: EffectsReport,
    fit: BridgeFit,
    design: DesignMatrix,
    fusion: FusionMatrix,
    cov: SelectedCovariance,
    counts: CohortCounts,
    vc: VarianceComponents,
    alpha: float,
    nt: int,
    split_counts: CohortCounts | None,
) -> None:
    layout = design.layout
    for cell in layout.treated_cells():
        psi = psi_vector_fixed({cell: 1.0}, fusion, layout)
        var = var_fixed(psi, cov, vc.sigma_sq)
        ci = conf_interval(report.att_rt[cell], var, nt, alpha)
        if ci.degenerate:
            report.att_se[cell] = None
            report.att_ci[cell] = None
        else:
            report.att_se[cell] = math.sqrt(var.value / nt)
            report.att_ci[cell] = (ci.low, ci.high)

    for r in layout.cohorts:
        w = 1.0 / (layout.n_times - r + 1)
        weights = {(r, t): w for t in range(r, layout.n_times + 1)}
        psi = psi_vector_fixed(weights, fusion, layout)
        var = var_fixed(psi, cov, vc.sigma_sq)
        ci = conf_interval(report.cohort_att[r], var, nt, alpha)
        if ci.degenerate:
            report.cohort_se[r] = None
            report.cohort_ci[r] = None
        else:
            report.cohort_se[r] = math.sqrt(var.value / nt)
            report.cohort_ci[r] = (ci.low, ci.high)

    all_weights = {}
    for r in layout.cohorts:
        w = 1.0 / (layout.n_times - r + 1)
        all_weights.update({(r, t): w for t in range(r, layout.n_times + 1)})

    if split_counts is not None:
        report.overall_att = aggregate_weighted(report.att_rt, split_counts)
        var = var_weighted(
            fit, layout, fusion, cov, split_counts, all_weights, vc.sigma_sq
        )
        kind = "split-exact"
    else:
        var_w = var_weighted(fit, layout, fusion, cov, counts, all_weights, vc.sigma_sq)
        var = replace(var_conservative(*var_w.components), degenerate=var_w.degenerate)
        kind = "conservative"
    ci = conf_interval(report.overall_att, var, nt, alpha)
    if ci.degenerate:
        report.overall_se = None
        report.overall_ci = None
        report.overall_ci_kind = "degenerate"
        report.notes.append(
            "all selected treatment coefficients are zero; the overall "
            "interval is degenerate"
        )
    else:
        report.overall_se = math.sqrt(var.value / nt)
        report.overall_ci = (ci.low, ci.high)
        report.overall_ci_kind = kind
