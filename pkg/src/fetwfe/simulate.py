"""Monte Carlo studies: data generation, competitor estimators, metrics.

Each study draws one sparse coefficient vector in difference coordinates,
then repeatedly generates panels from it, fits the fused estimator plus
three competitors on the same whitened centered data, and aggregates
squared errors, restriction-selection accuracy, and interval coverage.
Replicates use independently derived RNG streams, so runs are
order-independent and reproducible from the base seed alone.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .design import (
    DesignLayout,
    build_design,
    build_layout,
    center_response_and_columns,
    count_params,
)
from .effects import aggregate_weighted, att_point, cohort_att
from .errors import ConfigError, FetwfeError, RedrawLimitExceeded
from .fusion import FusionMatrix, build_fusion, reparameterize
from .gls import VarianceComponents, gls_transform
from .inference import (
    conf_interval,
    psi_vector_fixed,
    selected_cov,
    var_conservative,
    var_fixed,
    var_weighted,
)
from .panel import CohortCounts, PanelDataset, cohort_counts
from .solver import SolverConfig, bridge_fit, fit_path_bic

REDRAW_LIMIT = 10**6

METHODS = ("FETWFE", "ETWFE", "BETWFE", "TWFE_COVS")


@dataclass(frozen=True)
class SimConfig:
    """Study configuration; defaults follow the benchmark DGP constants."""

    n_units: int
    n_times: int
    cohorts: tuple[int, ...]
    d: int
    replications: int
    base_seed: int = 1
    theta_density: float = 0.1
    theta_magnitude: float = 2.0
    sign_positive_prob: float = 0.6
    sigma_c_sq: float = 5.0
    sigma_sq: float = 5.0
    assignment_probs: tuple[float, ...] | None = None  # (never, cohort...) order
    competitors_raw: bool = False
    alpha: float = 0.05
    solver: SolverConfig = field(default_factory=SolverConfig)

    def __post_init__(self):
        if self.replications < 1:
            raise ConfigError("replications must be at least 1")
        if not (0.0 <= self.theta_density <= 1.0):
            raise ConfigError("theta_density must lie in [0, 1]")
        if not (0.0 <= self.sign_positive_prob <= 1.0):
            raise ConfigError("sign_positive_prob must lie in [0, 1]")
        count_params(self.n_times, self.cohorts, self.d)  # validates cohorts
        probs = self.probs()
        if len(probs) != len(self.cohorts) + 1:
            raise ConfigError("assignment_probs needs one entry per group")
        if any(p <= 0 for p in probs) or abs(sum(probs) - 1.0) > 1e-9:
            raise ConfigError("assignment probabilities must be positive and sum to 1")

    def probs(self) -> tuple[float, ...]:
        if self.assignment_probs is not None:
            return tuple(self.assignment_probs)
        k = len(self.cohorts) + 1
        return tuple([1.0 / k] * k)


@dataclass(frozen=True)
class TruthRecord:
    """True coefficients and the causal quantities they imply."""

    theta_star: np.ndarray
    beta_star: np.ndarray
    att_rt: dict
    cohort_att: dict
    overall_att: float  # weighted by the true treated-conditional shares


def gen_coefficients(
    layout: DesignLayout, config: SimConfig, seed
) -> tuple[np.ndarray, np.ndarray]:
    """Draw the sparse difference-coordinate truth and map it back.

    Each entry is +/- magnitude with probability theta_density (positive
    with sign_positive_prob), else exactly 0; beta_star applies the inverse
    differences matrix.
    """
    rng = np.random.default_rng(seed)
    nonzero = rng.random(layout.p) < config.theta_density
    signs = np.where(
        rng.random(layout.p) < config.sign_positive_prob, 1.0, -1.0
    )
    theta = np.where(nonzero, config.theta_magnitude * signs, 0.0)
    fusion = build_fusion(layout)
    return theta, np.asarray(fusion.d_inv @ theta)


def _draw_assignment(rng, config: SimConfig) -> np.ndarray:
    """Group labels with redraws until every group is nonempty."""
    probs = np.array(config.probs())
    labels = np.array([0] + list(config.cohorts))
    for _ in range(REDRAW_LIMIT):
        idx = rng.choice(len(labels), size=config.n_units, p=probs)
        counts = np.bincount(idx, minlength=len(labels))
        if np.all(counts > 0):
            return labels[idx]
    raise RedrawLimitExceeded(
        f"no admissible assignment after {REDRAW_LIMIT} redraws"
    )


def _truth_from_beta(layout: DesignLayout, config: SimConfig, theta, beta) -> TruthRecord:
    att = {cell: float(beta[layout.tau_index(*cell)]) for cell in layout.treated_cells()}
    per_cohort = {
        r: float(np.mean([att[(r, t)] for t in range(r, layout.n_times + 1)]))
        for r in layout.cohorts
    }
    probs = config.probs()
    treated = sum(probs[1:])
    overall = sum(
        (probs[1 + k] / treated) * per_cohort[r] for k, r in enumerate(layout.cohorts)
    )
    return TruthRecord(
        theta_star=theta,
        beta_star=beta,
        att_rt=att,
        cohort_att=per_cohort,
        overall_att=float(overall),
    )


def gen_panel(
    config: SimConfig,
    theta_star: np.ndarray,
    seed,
    fusion: FusionMatrix | None = None,
) -> tuple[PanelDataset, TruthRecord]:
    """One synthetic panel: X ~ N(0, I), multinomial cohorts, composite noise.

    The design is constructed first (with its cohort-mean-centered
    interactions) and the response is generated from it, so each treatment
    coefficient equals the realized average effect on its cohort exactly.
    """
    layout = build_layout(config.n_times, config.cohorts, config.d)
    if fusion is None:
        fusion = build_fusion(layout)
    beta_star = np.asarray(fusion.d_inv @ np.asarray(theta_star, dtype=float))
    truth = _truth_from_beta(layout, config, np.asarray(theta_star, float), beta_star)

    rng = np.random.default_rng(seed)
    X = rng.standard_normal((config.n_units, config.d))
    assignment = _draw_assignment(rng, config)
    shell = PanelDataset(
        n_units=config.n_units,
        n_times=config.n_times,
        cohorts=config.cohorts,
        assignment=assignment,
        covariates=X,
        response=np.zeros((config.n_units, config.n_times)),
    )
    design = build_design(shell)
    mean_y = design.values @ beta_star
    c = rng.normal(0.0, np.sqrt(config.sigma_c_sq), size=config.n_units)
    u = rng.normal(
        0.0, np.sqrt(config.sigma_sq), size=config.n_units * config.n_times
    )
    y = mean_y + np.repeat(c, config.n_times) + u
    panel = replace(shell, response=y.reshape(config.n_units, config.n_times))
    return panel, truth


@dataclass(frozen=True)
class CompetitorEffects:
    method: str
    att_rt: dict
    cohort_att: dict
    overall_att: float
    rho_hat: np.ndarray | None  # treatment-interaction block, or None


def _whitened_centered(panel, vc, raw):
    design = build_design(panel)
    y = panel.response.reshape(-1)
    if raw:
        zt, yt = design.values, y.astype(float)
    else:
        zt, yt = gls_transform(design.values, y, vc, panel.n_times)
    zc, yc, _, _ = center_response_and_columns(zt, yt)
    return design, zc, yc


def competitor_fit(
    method: str,
    panel: PanelDataset,
    vc: VarianceComponents,
    solver: SolverConfig,
    raw: bool = False,
) -> CompetitorEffects:
    """Fit one competitor on the same whitened centered data.

    ETWFE: unpenalized least squares on the full design. BETWFE: the same
    bridge path but penalizing the coefficients directly (identity
    differences matrix). TWFE_COVS: least squares on cohort and time fixed
    effects, covariates, and one post-treatment dummy per cohort.
    """
    design, zc, yc = _whitened_centered(panel, vc, raw)
    layout = design.layout
    counts = cohort_counts(panel)
    if method in ("ETWFE", "BETWFE"):
        if method == "ETWFE":
            fit = bridge_fit(zc, yc, 0.0, solver)
        else:
            fit, _ = fit_path_bic(zc, yc, solver)
        att = att_point(fit, layout)
        per_cohort = cohort_att(fit, layout)
        overall = aggregate_weighted(att, counts)
        rho = fit.beta_hat[layout.off_treat_cov :].copy()
        return CompetitorEffects(method, att, per_cohort, overall, rho)
    if method == "TWFE_COVS":
        return _twfe_covs(panel, layout, zc, yc, counts)
    raise ConfigError(f"unknown competitor '{method}'")


def _twfe_covs(panel, layout, zc, yc, counts) -> CompetitorEffects:
    """Static per-cohort effects: one post-treatment dummy per cohort."""
    T = layout.n_times
    keep = list(range(layout.off_cov + layout.d))  # cohort FE, time FE, covariates
    base = zc[:, keep]
    post = np.zeros((zc.shape[0], layout.R))
    for k, r in enumerate(layout.cohorts):
        for t in range(r, T + 1):
            post[:, k] += zc[:, layout.tau_index(r, t)]
    design = np.hstack([base, post])
    fit = bridge_fit(design, yc, 0.0, SolverConfig(q=1.0))
    tau_r = fit.theta_hat[len(keep) :]
    att = {}
    per_cohort = {}
    for k, r in enumerate(layout.cohorts):
        per_cohort[r] = float(tau_r[k])
        for t in range(r, T + 1):
            att[(r, t)] = float(tau_r[k])
    overall = aggregate_weighted(att, counts)
    return CompetitorEffects("TWFE_COVS", att, per_cohort, overall, None)


def selection_accuracy(theta_hat: np.ndarray, theta_star: np.ndarray) -> tuple[float, float]:
    """(overall agreement of zero patterns, recall of true restrictions)."""
    theta_hat = np.asarray(theta_hat)
    theta_star = np.asarray(theta_star)
    if theta_hat.shape != theta_star.shape:
        raise ValueError("dimension mismatch")
    est_nz = theta_hat != 0.0
    true_nz = theta_star != 0.0
    overall = float(np.mean(est_nz == true_nz))
    zeros = ~true_nz
    recall = float(np.mean(~est_nz[zeros])) if zeros.any() else 1.0
    return overall, recall


@dataclass
class StudyMetrics:
    """Aggregated study results; rates are over non-degenerate intervals."""

    config: SimConfig
    n_replicates: int
    n_skipped: int
    skip_messages: list
    att_sq_err: dict  # method -> (mean, se)
    cohort_sq_err: dict  # method -> {r: (mean, se)}
    rho_sq_err: dict  # method -> (mean, se); methods with interactions only
    selection_overall: tuple
    selection_recall: tuple
    coverage_cohort: dict  # r -> (rate, n_used, n_degenerate)
    coverage_conservative: tuple  # (rate, n_used, n_degenerate)
    coverage_exact: tuple

    def to_dict(self) -> dict:
        cfg = asdict(self.config)
        cfg["solver"] = asdict(self.config.solver)
        return {
            "config": cfg,
            "n_replicates": self.n_replicates,
            "n_skipped": self.n_skipped,
            "skip_messages": self.skip_messages,
            "att_sq_err": {m: list(v) for m, v in self.att_sq_err.items()},
            "cohort_sq_err": {
                m: {str(r): list(v) for r, v in d.items()}
                for m, d in self.cohort_sq_err.items()
            },
            "rho_sq_err": {m: list(v) for m, v in self.rho_sq_err.items()},
            "selection_overall": list(self.selection_overall),
            "selection_recall": list(self.selection_recall),
            "coverage_cohort": {str(r): list(v) for r, v in self.coverage_cohort.items()},
            "coverage_conservative": list(self.coverage_conservative),
            "coverage_exact": list(self.coverage_exact),
        }

    def to_csv_rows(self) -> list[list]:
        rows = [["metric", "method", "cohort", "value", "se_or_count"]]
        for m, (mean, se) in self.att_sq_err.items():
            rows.append(["att_sq_err", m, "", mean, se])
        for m, d in self.cohort_sq_err.items():
            for r, (mean, se) in d.items():
                rows.append(["cohort_sq_err", m, r, mean, se])
        for m, (mean, se) in self.rho_sq_err.items():
            rows.append(["rho_sq_err", m, "", mean, se])
        rows.append(["selection_overall", "FETWFE", "", *self.selection_overall])
        rows.append(["selection_recall", "FETWFE", "", *self.selection_recall])
        for r, (rate, used, degen) in self.coverage_cohort.items():
            rows.append(["coverage_cohort", "FETWFE", r, rate, f"{used}/{degen}"])
        rate, used, degen = self.coverage_conservative
        rows.append(["coverage_conservative", "FETWFE", "", rate, f"{used}/{degen}"])
        rate, used, degen = self.coverage_exact
        rows.append(["coverage_exact", "FETWFE", "", rate, f"{used}/{degen}"])
        rows.append(["skipped", "", "", self.n_skipped, ""])
        return rows


def _replicate_seed(base_seed: int, index: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(entropy=(base_seed, 0, index))


def _coef_seed(base_seed: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(entropy=(base_seed, 1))


def _split_counts(rng, config: SimConfig) -> CohortCounts:
    """Assignment-only independent draw used for the exact overall interval."""
    assignment = _draw_assignment(rng, config)
    n_r = {r: int(np.sum(assignment == r)) for r in config.cohorts}
    return CohortCounts(
        n_0=int(np.sum(assignment == 0)), n_r=n_r, n_tau=sum(n_r.values())
    )


def _run_replicate(config: SimConfig, theta_star, fusion, truth, index):
    seed = _replicate_seed(config.base_seed, index)
    panel, _ = gen_panel(config, theta_star, seed, fusion=fusion)
    split_rng = np.random.default_rng(
        np.random.SeedSequence(entropy=(config.base_seed, 2, index))
    )
    split = _split_counts(split_rng, config)

    vc = VarianceComponents(config.sigma_sq, config.sigma_c_sq)
    layout = fusion.layout
    counts = cohort_counts(panel)
    nt = config.n_units * config.n_times

    design, zc, yc = _whitened_centered(panel, vc, raw=False)
    bridge_design = reparameterize(zc, fusion)
    fit, _ = fit_path_bic(bridge_design, yc, config.solver, d_inv=fusion.d_inv)

    att = att_point(fit, design.layout)
    per_cohort = cohort_att(fit, design.layout)
    overall = aggregate_weighted(att, counts)

    rec = {
        "att_sq_err": {},
        "cohort_sq_err": {},
        "rho_sq_err": {},
    }
    rho_star = truth.beta_star[layout.off_treat_cov :]

    def record(method, per_cohort_m, overall_m, rho_m):
        rec["att_sq_err"][method] = (overall_m - truth.overall_att) ** 2
        rec["cohort_sq_err"][method] = {
            r: (per_cohort_m[r] - truth.cohort_att[r]) ** 2 for r in layout.cohorts
        }
        if rho_m is not None and rho_star.size:
            rec["rho_sq_err"][method] = float(np.sum((rho_m - rho_star) ** 2))

    record("FETWFE", per_cohort, overall, fit.beta_hat[layout.off_treat_cov :])
    for method in ("ETWFE", "BETWFE", "TWFE_COVS"):
        eff = competitor_fit(method, panel, vc, config.solver, raw=config.competitors_raw)
        record(method, eff.cohort_att, eff.overall_att, eff.rho_hat)

    rec["selection"] = selection_accuracy(fit.theta_hat, theta_star)

    # interval coverage (fused estimator only)
    rec["cover_cohort"] = {}
    rec["cover_cons"] = None
    rec["cover_exact"] = None
    if fit.selected.size:
        cov = selected_cov(zc, fusion, fit.selected)
        for r in layout.cohorts:
            w = 1.0 / (layout.n_times - r + 1)
            weights = {(r, t): w for t in range(r, layout.n_times + 1)}
            var = var_fixed(psi_vector_fixed(weights, fusion, layout), cov, vc.sigma_sq)
            ci = conf_interval(per_cohort[r], var, nt, config.alpha)
            rec["cover_cohort"][r] = (
                None if ci.degenerate else ci.contains(truth.cohort_att[r])
            )
        all_w = {}
        for r in layout.cohorts:
            w = 1.0 / (layout.n_times - r + 1)
            all_w.update({(r, t): w for t in range(r, layout.n_times + 1)})
        var_same = var_weighted(fit, layout, fusion, cov, counts, all_w, vc.sigma_sq)
        if not var_same.degenerate:
            cons = var_conservative(*var_same.components)
            ci = conf_interval(overall, cons, nt, config.alpha)
            rec["cover_cons"] = ci.contains(truth.overall_att)
        var_split = var_weighted(fit, layout, fusion, cov, split, all_w, vc.sigma_sq)
        if not var_split.degenerate:
            overall_split = aggregate_weighted(att, split)
            ci = conf_interval(overall_split, var_split, nt, config.alpha)
            rec["cover_exact"] = ci.contains(truth.overall_att)
    else:
        for r in layout.cohorts:
            rec["cover_cohort"][r] = None
    return rec


def _mean_se(values) -> tuple[float, float]:
    arr = np.asarray(values, dtype=float)
    if arr.size == 0:
        return (float("nan"), float("nan"))
    se = float(arr.std(ddof=1) / np.sqrt(arr.size)) if arr.size > 1 else 0.0
    return (float(arr.mean()), se)


def _rate(values) -> tuple[float, int, int]:
    used = [v for v in values if v is not None]
    degen = len(values) - len(used)
    rate = float(np.mean([bool(v) for v in used])) if used else float("nan")
    return (rate, len(used), degen)


def run_study(config: SimConfig, threads: int = 1) -> StudyMetrics:
    """Run a full study; deterministic for a given config (incl. seed)."""
    layout = build_layout(config.n_times, config.cohorts, config.d)
    fusion = build_fusion(layout)
    theta_star, beta_star = gen_coefficients(
        layout, config, _coef_seed(config.base_seed)
    )
    truth = _truth_from_beta(layout, config, theta_star, beta_star)

    results: list = [None] * config.replications
    skips: list = []

    def runner(i):
        try:
            return i, _run_replicate(config, theta_star, fusion, truth, i), None
        except (FetwfeError, np.linalg.LinAlgError) as exc:
            return i, None, f"replicate {i}: {type(exc).__name__}: {exc}"

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            outcomes = list(pool.map(runner, range(config.replications)))
    else:
        outcomes = [runner(i) for i in range(config.replications)]
    for i, rec, err in sorted(outcomes, key=lambda o: o[0]):
        if err is None:
            results[i] = rec
        else:
            skips.append(err)
    used = [r for r in results if r is not None]

    att_sq = {
        m: _mean_se([r["att_sq_err"][m] for r in used])
        for m in METHODS
    }
    cohort_sq = {
        m: {
            r: _mean_se([rec["cohort_sq_err"][m][r] for rec in used])
            for r in config.cohorts
        }
        for m in METHODS
    }
    rho_sq = {
        m: _mean_se([rec["rho_sq_err"][m] for rec in used])
        for m in METHODS
        if used and m in used[0]["rho_sq_err"]
    }
    return StudyMetrics(
        config=config,
        n_replicates=len(used),
        n_skipped=len(skips),
        skip_messages=skips,
        att_sq_err=att_sq,
        cohort_sq_err=cohort_sq,
        rho_sq_err=rho_sq,
        selection_overall=_mean_se([r["selection"][0] for r in used]),
        selection_recall=_mean_se([r["selection"][1] for r in used]),
        coverage_cohort={
            r: _rate([rec["cover_cohort"][r] for rec in used]) for r in config.cohorts
        },
        coverage_conservative=_rate([r["cover_cons"] for r in used]),
        coverage_exact=_rate([r["cover_exact"] for r in used]),
    )


# -- configuration files and presets -----------------------------------------

PRESETS = {
    "study1": dict(
        n_units=120, n_times=30, cohorts=(2, 3, 4, 5, 6), d=12,
        theta_density=0.1, replications=700,
    ),
    "study2": dict(
        n_units=1200, n_times=5, cohorts=(2, 3, 4), d=2,
        theta_density=0.5, replications=700,
    ),
    "study2-desk": dict(
        n_units=300, n_times=5, cohorts=(2, 3, 4), d=2,
        theta_density=0.5, replications=200, base_seed=6,
    ),
}


def preset_config(name: str, **overrides) -> SimConfig:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset '{name}'; choose from {sorted(PRESETS)}")
    kwargs = dict(PRESETS[name])
    kwargs.update(overrides)
    kwargs.setdefault("base_seed", 1)
    return SimConfig(**kwargs)


def load_sim_config(path) -> SimConfig:
    """Read a SimConfig from a TOML or JSON file."""
    text = open(path, "rb").read()
    if str(path).endswith(".json"):
        raw = json.loads(text.decode("utf-8"))
    else:
        try:
            import tomllib  # py311+
        except ModuleNotFoundError:
            import tomli as tomllib
        raw = tomllib.loads(text.decode("utf-8"))
    solver = SolverConfig(**raw.pop("solver", {}))
    raw["cohorts"] = tuple(raw.get("cohorts", ()))
    if raw.get("assignment_probs") is not None:
        raw["assignment_probs"] = tuple(raw["assignment_probs"])
    try:
        return SimConfig(solver=solver, **raw)
    except TypeError as exc:
        raise ConfigError(f"bad simulation config: {exc}") from None


def metrics_to_json(metrics: StudyMetrics, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(metrics.to_dict(), fh, indent=2)


def metrics_to_csv(metrics: StudyMetrics, path) -> None:
    import csv

    with open(path, "w", newline="", encoding="utf-8") as fh:
        csv.writer(fh).writerows(metrics.to_csv_rows())
