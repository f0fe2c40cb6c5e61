"""Balanced staggered-adoption panel ingestion and validation.

A panel holds N units observed at all of T times. Each unit carries a
treatment label: 0 for never treated, otherwise the first treated time.
Time indices are normalized internally to 1..T; the source labels are kept
for reporting.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    CohortAtTimeOne,
    InconsistentTreatmentTime,
    MissingCell,
    NoNeverTreated,
    ParseError,
    ZeroVarianceCovariate,
)

CSV_BASE_COLUMNS = ("unit", "time", "response", "cohort")


@dataclass(frozen=True)
class PanelDataset:
    """Immutable balanced panel.

    Attributes
    ----------
    n_units, n_times : int
        Panel dimensions (N and T, with T >= 2).
    cohorts : tuple[int, ...]
        Sorted distinct treatment-start times, each in {2..T} (normalized).
    assignment : np.ndarray
        Length-N int array; entry is 0 (never treated) or a cohort time.
    covariates : np.ndarray
        N x d float array of time-invariant covariates.
    response : np.ndarray
        N x T float array, column t-1 holds the response at normalized time t.
    unit_labels : tuple[str, ...]
        Source unit identifiers, in row order.
    time_labels : tuple[float, ...]
        Source time labels; time_labels[t-1] is normalized time t.
    covariate_names : tuple[str, ...]
    """

    n_units: int
    n_times: int
    cohorts: tuple[int, ...]
    assignment: np.ndarray
    covariates: np.ndarray
    response: np.ndarray
    unit_labels: tuple[str, ...] = ()
    time_labels: tuple[float, ...] = ()
    covariate_names: tuple[str, ...] = ()

    def __post_init__(self):
        if self.n_times < 2:
            raise ParseError("panel needs at least two time periods")
        if self.response.shape != (self.n_units, self.n_times):
            raise ParseError("response must be N x T")
        if self.covariates.shape[0] != self.n_units:
            raise ParseError("covariates must have one row per unit")
        if any(r < 2 or r > self.n_times for r in self.cohorts):
            raise CohortAtTimeOne(
                "cohorts must start in {2..T}; units treated at t=1 must be "
                "dropped explicitly (--drop-always-treated)"
            )
        labels = set(self.assignment.tolist())
        if 0 not in labels:
            raise NoNeverTreated("at least one never-treated unit is required")
        for r in self.cohorts:
            if r not in labels:
                raise ParseError(f"cohort {r} has no assigned units")
        if labels - {0} - set(self.cohorts):
            raise ParseError("assignment contains a label outside the cohort list")

    @property
    def n_covariates(self) -> int:
        return self.covariates.shape[1]

    def source_cohort_label(self, r: int) -> float:
        """Source time label for normalized cohort time r."""
        return self.time_labels[r - 1] if self.time_labels else float(r)


@dataclass(frozen=True)
class CohortCounts:
    """Unit counts by treatment status: never treated, per cohort, treated total."""

    n_0: int
    n_r: dict[int, int]
    n_tau: int

    @property
    def total(self) -> int:
        return self.n_0 + self.n_tau

    def share(self, r: int) -> float:
        """Treated-conditional share N_r / N_tau."""
        return self.n_r[r] / self.n_tau


@dataclass
class ValidationFinding:
    severity: str  # "warning" | "error"
    code: str
    message: str


@dataclass
class ValidationReport:
    findings: list[ValidationFinding] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not any(f.severity == "error" for f in self.findings)

    def add(self, severity: str, code: str, message: str) -> None:
        self.findings.append(ValidationFinding(severity, code, message))

    def to_dict(self) -> dict:
        return {
            "ok": self.ok,
            "findings": [vars(f) for f in self.findings],
        }


def _parse_float(text: str, row: int, col: str) -> float:
    text = text.strip()
    if text == "" or text.lower() in ("na", "nan"):
        raise ParseError(f"row {row}: missing value in column '{col}'")
    try:
        return float(text)
    except ValueError:
        raise ParseError(f"row {row}: cannot parse '{text}' in column '{col}'") from None


def load_panel(source, drop_always_treated: bool = False) -> PanelDataset:
    """Build a :class:`PanelDataset` from long-format records.

    Parameters
    ----------
    source : str | os.PathLike | io.TextIOBase | Sequence[dict]
        CSV path/handle with header ``unit,time,response,cohort,x1,...,xd``,
        or an equivalent sequence of dict records. ``cohort`` is 0 for never
        treated, otherwise the first treated time in source time labels.
    drop_always_treated : bool
        Drop units whose first treated time equals the earliest observed
        time instead of rejecting them.

    Rows with missing covariate values are rejected (no imputation policy).
    """
    records = _read_records(source)
    if not records:
        raise ParseError("no data rows")
    cov_names = tuple(k for k in records[0] if k not in CSV_BASE_COLUMNS)

    units: list[str] = []
    per_unit: dict[str, dict] = {}
    time_label_set = set()
    for idx, rec in enumerate(records, start=1):
        try:
            unit = str(rec["unit"]).strip()
            t_label = _parse_float(str(rec["time"]), idx, "time")
            y = _parse_float(str(rec["response"]), idx, "response")
            cohort_label = _parse_float(str(rec["cohort"]), idx, "cohort")
            x = np.array([_parse_float(str(rec[c]), idx, c) for c in cov_names])
        except KeyError as exc:
            raise ParseError(f"row {idx}: missing column {exc}") from None
        time_label_set.add(t_label)
        if unit not in per_unit:
            units.append(unit)
            per_unit[unit] = {"cohort": cohort_label, "x": x, "rows": {}}
        else:
            info = per_unit[unit]
            if info["cohort"] != cohort_label:
                raise InconsistentTreatmentTime(
                    f"row {idx}: unit '{unit}' reports first-treatment time "
                    f"{cohort_label}, earlier rows said {info['cohort']}"
                )
            if not np.array_equal(info["x"], x):
                raise ParseError(
                    f"row {idx}: unit '{unit}' has time-varying covariates; "
                    "covariates must be time-invariant"
                )
        if t_label in per_unit[unit]["rows"]:
            raise ParseError(f"row {idx}: duplicate time {t_label} for unit '{unit}'")
        per_unit[unit]["rows"][t_label] = y

    time_labels = tuple(sorted(time_label_set))
    n_times = len(time_labels)
    time_index = {lab: i + 1 for i, lab in enumerate(time_labels)}

    if drop_always_treated:
        dropped = [u for u in units if per_unit[u]["cohort"] == time_labels[0]]
        for u in dropped:
            del per_unit[u]
        units = [u for u in units if u not in dropped]
        if not units:
            raise ParseError("every unit was treated at the first time period")

    for unit in units:
        rows = per_unit[unit]["rows"]
        for lab in time_labels:
            if lab not in rows:
                raise MissingCell(f"unit '{unit}' is missing time {lab}")
        if len(rows) != n_times:
            raise MissingCell(f"unit '{unit}' has times outside the common range")

    assignment = np.zeros(len(units), dtype=np.int64)
    for i, unit in enumerate(units):
        cohort_label = per_unit[unit]["cohort"]
        if cohort_label == 0:
            continue
        if cohort_label not in time_index:
            raise ParseError(
                f"unit '{unit}': first-treatment time {cohort_label} is not "
                "an observed time"
            )
        r = time_index[cohort_label]
        if r == 1:
            raise CohortAtTimeOne(
                f"unit '{unit}' is treated at the first time period; rerun "
                "with --drop-always-treated to remove such units"
            )
        assignment[i] = r

    cohorts = tuple(sorted(set(assignment.tolist()) - {0}))
    response = np.array(
        [[per_unit[u]["rows"][lab] for lab in time_labels] for u in units]
    )
    covariates = (
        np.array([per_unit[u]["x"] for u in units])
        if cov_names
        else np.zeros((len(units), 0))
    )
    for j, name in enumerate(cov_names):
        if np.ptp(covariates[:, j]) == 0.0:
            raise ZeroVarianceCovariate(
                f"covariate '{name}' is constant across units"
            )

    return PanelDataset(
        n_units=len(units),
        n_times=n_times,
        cohorts=cohorts,
        assignment=assignment,
        covariates=covariates,
        response=response,
        unit_labels=tuple(units),
        time_labels=time_labels,
        covariate_names=cov_names,
    )


def _read_records(source) -> list[dict]:
    if isinstance(source, (list, tuple)):
        return [dict(rec) for rec in source]
    if isinstance(source, io.TextIOBase):
        return list(csv.DictReader(source))
    with open(source, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def to_records(data: PanelDataset) -> list[dict]:
    """Long-format records; inverse of :func:`load_panel` on valid panels."""
    out = []
    time_labels = data.time_labels or tuple(float(t) for t in range(1, data.n_times + 1))
    unit_labels = data.unit_labels or tuple(str(i) for i in range(data.n_units))
    cov_names = data.covariate_names or tuple(
        f"x{j + 1}" for j in range(data.n_covariates)
    )
    for i in range(data.n_units):
        r = int(data.assignment[i])
        cohort_label = 0.0 if r == 0 else time_labels[r - 1]
        for t in range(data.n_times):
            rec = {
                "unit": unit_labels[i],
                "time": time_labels[t],
                "response": data.response[i, t],
                "cohort": cohort_label,
            }
            for j, name in enumerate(cov_names):
                rec[name] = data.covariates[i, j]
            out.append(rec)
    return out


def write_csv(data: PanelDataset, path) -> None:
    records = to_records(data)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(records[0].keys()))
        writer.writeheader()
        writer.writerows(records)


def cohort_counts(data: PanelDataset) -> CohortCounts:
    """Exact unit counts per treatment status."""
    n_r = {r: int(np.sum(data.assignment == r)) for r in data.cohorts}
    n_tau = sum(n_r.values())
    return CohortCounts(n_0=int(np.sum(data.assignment == 0)), n_r=n_r, n_tau=n_tau)


def validate_rank_preconditions(data: PanelDataset) -> ValidationReport:
    """Flag configurations that cannot satisfy the full-rank assumption.

    Any group (never-treated or a cohort) with fewer than d+1 units is a
    rank-deficiency risk; p > NT is a hard failure.
    """
    from .design import count_params  # local import to avoid a cycle

    report = ValidationReport()
    d = data.n_covariates
    counts = cohort_counts(data)
    groups = [(0, counts.n_0)] + [(r, counts.n_r[r]) for r in data.cohorts]
    for r, n in groups:
        if n < d + 1:
            if r == 0:
                msg = (
                    f"never-treated group has {n} unit(s), fewer than d+1 = "
                    f"{d + 1}; the design matrix is at risk of rank deficiency"
                )
            else:
                msg = (
                    f"cohort {r} has {n} unit(s), fewer than d+1 = {d + 1}; "
                    "the design matrix cannot have full column rank"
                )
            report.add("warning", "cohort-smaller-than-d-plus-1", msg)
    p, _ = count_params(data.n_times, data.cohorts, d)
    nt = data.n_units * data.n_times
    if p > nt:
        report.add(
            "error",
            "p-exceeds-nt",
            f"p = {p} exceeds NT = {nt}; estimation requires p <= NT",
        )
    return report
