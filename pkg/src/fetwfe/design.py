"""Extended two-way fixed-effects design matrix construction.

Column blocks, in canonical order:

    [cohort FE (R)] [time FE (T-1)] [covariates (d)]
    [cohort x cov (d*R, grouped by covariate)]
    [time x cov (d*(T-1), grouped by covariate)]
    [treatment (W, cohort-major then time)]
    [treatment x cov (W*d, grouped by covariate)]

with W = sum_{r in cohorts} (T - r + 1). This order makes the differences
matrix exactly block diagonal, so no permutation layer is needed anywhere
downstream. Treatment-by-covariate interactions use covariates centered by
their cohort sample means.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .errors import CohortOutOfRange, RankPrecondition
from .panel import PanelDataset, validate_rank_preconditions


def count_params(T: int, cohorts, d: int) -> tuple[int, int]:
    """Total column count p and treatment-dummy count W.

    p = R + (T-1) + W + d*(1 + R + (T-1) + W).
    """
    cohorts = tuple(cohorts)
    if T < 2:
        raise CohortOutOfRange("T must be at least 2")
    if d < 0:
        raise CohortOutOfRange("d must be nonnegative")
    if list(cohorts) != sorted(set(cohorts)):
        raise CohortOutOfRange("cohorts must be distinct and sorted")
    if any(r < 2 or r > T for r in cohorts):
        raise CohortOutOfRange(f"cohorts must lie in {{2..{T}}}, got {cohorts}")
    R = len(cohorts)
    w = sum(T - r + 1 for r in cohorts)
    base = R + (T - 1) + w
    return base + d * (1 + base), w


@dataclass(frozen=True)
class DesignLayout:
    """Column bookkeeping for the p-column design matrix."""

    n_times: int
    cohorts: tuple[int, ...]
    d: int
    p: int
    w_count: int
    cohort_means: np.ndarray  # R x d, row per cohort in `cohorts` order

    @property
    def R(self) -> int:
        return len(self.cohorts)

    # Block offsets; each block is [offset, offset + size).
    @property
    def off_cohort(self) -> int:
        return 0

    @property
    def off_time(self) -> int:
        return self.R

    @property
    def off_cov(self) -> int:
        return self.R + (self.n_times - 1)

    @property
    def off_cohort_cov(self) -> int:
        return self.off_cov + self.d

    @property
    def off_time_cov(self) -> int:
        return self.off_cohort_cov + self.d * self.R

    @property
    def off_treat(self) -> int:
        return self.off_time_cov + self.d * (self.n_times - 1)

    @property
    def off_treat_cov(self) -> int:
        return self.off_treat + self.w_count

    def block_sizes(self) -> dict[str, int]:
        T, R, d, w = self.n_times, self.R, self.d, self.w_count
        return {
            "cohort": R,
            "time": T - 1,
            "cov": d,
            "cohort_cov": d * R,
            "time_cov": d * (T - 1),
            "treat": w,
            "treat_cov": w * d,
        }

    def _treat_offset(self, r: int, t: int) -> int:
        if r not in self.cohorts or not (r <= t <= self.n_times):
            raise KeyError((r, t))
        off = 0
        for rk in self.cohorts:
            if rk == r:
                return off + (t - r)
            off += self.n_times - rk + 1
        raise KeyError((r, t))

    def cohort_index(self, r: int) -> int:
        return self.off_cohort + self.cohorts.index(r)

    def time_index(self, t: int) -> int:
        if not (2 <= t <= self.n_times):
            raise KeyError(t)
        return self.off_time + (t - 2)

    def cov_index(self, j: int) -> int:
        return self.off_cov + j

    def zeta_index(self, r: int, j: int) -> int:
        return self.off_cohort_cov + j * self.R + self.cohorts.index(r)

    def xi_index(self, t: int, j: int) -> int:
        if not (2 <= t <= self.n_times):
            raise KeyError((t, j))
        return self.off_time_cov + j * (self.n_times - 1) + (t - 2)

    def tau_index(self, r: int, t: int) -> int:
        return self.off_treat + self._treat_offset(r, t)

    def rho_index(self, r: int, t: int, j: int) -> int:
        return self.off_treat_cov + j * self.w_count + self._treat_offset(r, t)

    def treated_cells(self) -> list[tuple[int, int]]:
        """All (r, t) with r in cohorts and r <= t <= T, in column order."""
        return [(r, t) for r in self.cohorts for t in range(r, self.n_times + 1)]

    def column_names(self) -> list[str]:
        names = [f"nu_r{r}" for r in self.cohorts]
        names += [f"gamma_t{t}" for t in range(2, self.n_times + 1)]
        names += [f"kappa_x{j + 1}" for j in range(self.d)]
        for j in range(self.d):
            names += [f"zeta_r{r}_x{j + 1}" for r in self.cohorts]
        for j in range(self.d):
            names += [f"xi_t{t}_x{j + 1}" for t in range(2, self.n_times + 1)]
        names += [f"tau_r{r}_t{t}" for r, t in self.treated_cells()]
        for j in range(self.d):
            names += [f"rho_r{r}_t{t}_x{j + 1}" for r, t in self.treated_cells()]
        assert len(names) == self.p
        return names


@dataclass(frozen=True)
class DesignMatrix:
    """NT x p design with unit-major rows (T consecutive rows per unit)."""

    values: np.ndarray
    layout: DesignLayout

    @property
    def n_rows(self) -> int:
        return self.values.shape[0]


def build_layout(
    T: int, cohorts, d: int, cohort_means: np.ndarray | None = None
) -> DesignLayout:
    cohorts = tuple(cohorts)
    p, w = count_params(T, cohorts, d)
    if cohort_means is None:
        cohort_means = np.zeros((len(cohorts), d))
    cohort_means = np.asarray(cohort_means, dtype=float).reshape(len(cohorts), d)
    return DesignLayout(
        n_times=T, cohorts=cohorts, d=d, p=p, w_count=w, cohort_means=cohort_means
    )


def build_design(
    data: PanelDataset,
    cohort_means: np.ndarray | None = None,
    escalate_rank: bool = False,
) -> DesignMatrix:
    """Assemble the NT x p design matrix for a validated panel.

    Parameters
    ----------
    cohort_means : optional R x d array
        Covariate means used to center the treatment interactions. Defaults
        to the sample means of this panel; pass means from an independent
        split for split-sample effect estimation.
    escalate_rank : bool
        Raise :class:`RankPrecondition` on hard validation failures instead
        of leaving escalation to the caller.
    """
    if escalate_rank:
        report = validate_rank_preconditions(data)
        if not report.ok:
            bad = "; ".join(f.message for f in report.findings if f.severity == "error")
            raise RankPrecondition(bad)

    T, d = data.n_times, data.n_covariates
    cohorts = data.cohorts
    X = data.covariates
    if cohort_means is None:
        cohort_means = np.array(
            [X[data.assignment == r].mean(axis=0) for r in cohorts]
        ).reshape(len(cohorts), d)
    layout = build_layout(T, cohorts, d, cohort_means)

    N = data.n_units
    Z = np.zeros((N * T, layout.p))
    rows_t = np.tile(np.arange(1, T + 1), N)  # normalized time per row
    unit_of_row = np.repeat(np.arange(N), T)
    w_row = data.assignment[unit_of_row]

    for k, r in enumerate(cohorts):
        Z[:, layout.cohort_index(r)] = (w_row == r).astype(float)
    for t in range(2, T + 1):
        Z[:, layout.time_index(t)] = (rows_t == t).astype(float)
    for j in range(d):
        xj = X[unit_of_row, j]
        Z[:, layout.cov_index(j)] = xj
        for r in cohorts:
            Z[:, layout.zeta_index(r, j)] = (w_row == r) * xj
        for t in range(2, T + 1):
            Z[:, layout.xi_index(t, j)] = (rows_t == t) * xj
    for k, r in enumerate(cohorts):
        in_cohort = w_row == r
        for t in range(r, T + 1):
            dummy = (in_cohort & (rows_t == t)).astype(float)
            Z[:, layout.tau_index(r, t)] = dummy
            for j in range(d):
                centered = X[unit_of_row, j] - cohort_means[k, j]
                Z[:, layout.rho_index(r, t, j)] = dummy * centered

    return DesignMatrix(values=Z, layout=layout)


def center_response_and_columns(
    design: np.ndarray, response: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray, float]:
    """Center each design column and the response to exact mean zero.

    Returns (centered design, centered response, column means, response mean);
    the means support back-transformation of fitted values.
    """
    col_means = design.mean(axis=0)
    y_mean = float(response.mean())
    return design - col_means, response - y_mean, col_means, y_mean


def dump_design_csv(design: DesignMatrix, path) -> None:
    """Debug dump with layout-derived column headers."""
    names = design.layout.column_names()
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(names)
        writer.writerows(design.values.tolist())
