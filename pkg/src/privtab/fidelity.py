"""Privacy-utility fidelity metrics: distribution tests, moment and correlation deltas.

Statistics are reported raw, with sample sizes; there are no p-values and no
pass/fail judgments. Missing values are excluded listwise within each
univariate metric and pairwise (complete cases) for correlations, with
exclusion counts always reported.
"""

from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .errors import InputError
from .pii import information_loss
from .table import ColumnKind, Table
from .transforms import BinningScheme, bin_column


def _finite(values) -> tuple[np.ndarray, int]:
    """Finite float array plus the count of excluded (missing/non-finite) cells."""
    kept = [v for v in values if isinstance(v, (int, float)) and math.isfinite(v)]
    return np.asarray(kept, dtype=np.float64), len(values) - len(kept)


def ks_two_sample(a, b) -> float:
    """Exact two-sample Kolmogorov-Smirnov statistic: sup |ECDF_a - ECDF_b|.

    Computed by merging the sorted samples; symmetric in its arguments, 0 for
    identical samples, 1 exactly when the supports are disjoint.
    """
    a_arr, _ = _finite(a)
    b_arr, _ = _finite(b)
    if a_arr.size == 0 or b_arr.size == 0:
        raise InputError("ks_two_sample needs nonempty samples after missing-value exclusion")
    a_sorted = np.sort(a_arr)
    b_sorted = np.sort(b_arr)
    grid = np.concatenate([a_sorted, b_sorted])
    cdf_a = np.searchsorted(a_sorted, grid, side="right") / a_sorted.size
    cdf_b = np.searchsorted(b_sorted, grid, side="right") / b_sorted.size
    return float(np.max(np.abs(cdf_a - cdf_b)))


def chi2_categorical(a, b) -> tuple[float, int]:
    """Pearson chi-squared of b's counts against expectations from a's distribution.

    Expected counts are a's frequencies scaled to b's size. Categories absent
    from a (zero expected count) are pooled into one "other" bucket; if that
    bucket holds observations, the statistic is +inf (b has mass where a
    predicts none). Returns (statistic, degrees of freedom = buckets - 1).
    """
    a_counts = Counter(v for v in a if v is not None)
    b_counts = Counter(v for v in b if v is not None)
    if not a_counts and not b_counts:
        raise InputError("chi2_categorical needs at least one non-missing label")
    if not a_counts:
        raise InputError("chi2_categorical needs a nonempty baseline sample")
    n_a = sum(a_counts.values())
    n_b = sum(b_counts.values())
    statistic = 0.0
    buckets = 0
    other_observed = 0
    for category in set(a_counts) | set(b_counts):
        expected = a_counts.get(category, 0) / n_a * n_b
        observed = b_counts.get(category, 0)
        if expected == 0.0:
            other_observed += observed
            continue
        statistic += (observed - expected) ** 2 / expected
        buckets += 1
    if other_observed > 0:
        statistic = math.inf
        buckets += 1
    dof = max(buckets - 1, 0)
    return float(statistic), dof


@dataclass(frozen=True)
class MomentDeltas:
    mean_delta: float
    variance_ratio: float | None  # None marks var(a) == 0 (undefined ratio)


def moment_deltas(a, b) -> MomentDeltas:
    """mean(b) - mean(a) and var(b)/var(a) with unbiased variance estimators."""
    a_arr, _ = _finite(a)
    b_arr, _ = _finite(b)
    if a_arr.size < 2 or b_arr.size < 2:
        raise InputError("moment_deltas needs >= 2 finite values on each side")
    mean_delta = float(b_arr.mean() - a_arr.mean())
    var_a = float(a_arr.var(ddof=1))
    var_b = float(b_arr.var(ddof=1))
    ratio = None if var_a == 0.0 else var_b / var_a
    return MomentDeltas(mean_delta=mean_delta, variance_ratio=ratio)


def _complete_case_matrix(table: Table, names: list[str]) -> np.ndarray:
    cols = []
    for name in names:
        cols.append([
            v if isinstance(v, (int, float)) and math.isfinite(v) else math.nan
            for v in table.column(name).cells
        ])
    mat = np.asarray(cols, dtype=np.float64)
    keep = ~np.isnan(mat).any(axis=0)
    return mat[:, keep]


def correlation_delta(
    original: Table, processed: Table, columns: list[str] | None = None
) -> tuple[float, list[str]]:
    """Max absolute entrywise difference between the Pearson correlation matrices.

    Computed over complete-case rows per table. Constant columns carry no
    correlation and are excluded; their names are returned alongside the delta.
    """
    if columns is None:
        columns = [
            c.name
            for c in original.columns
            if c.schema.kind is ColumnKind.NUMERIC
            and processed.has_column(c.name)
            and processed.column(c.name).schema.kind is ColumnKind.NUMERIC
        ]
    excluded = []
    usable = []
    mat_o = _complete_case_matrix(original, columns)
    mat_p = _complete_case_matrix(processed, columns)
    for i, name in enumerate(columns):
        if mat_o[i].size < 2 or mat_p[i].size < 2 or mat_o[i].std() == 0.0 or mat_p[i].std() == 0.0:
            excluded.append(name)
        else:
            usable.append(i)
    if len(usable) < 2:
        raise InputError("correlation_delta needs >= 2 usable numeric columns")
    corr_o = np.corrcoef(mat_o[usable])
    corr_p = np.corrcoef(mat_p[usable])
    return float(np.max(np.abs(corr_o - corr_p))), excluded


@dataclass
class NumericColumnStats:
    ks_statistic: float
    mean_delta: float
    variance_ratio: float | None
    min_delta: float
    max_delta: float
    excluded_original: int
    excluded_processed: int


@dataclass
class CategoricalColumnStats:
    chi2_statistic: float
    dof: int
    category_count_delta: int


@dataclass
class TextColumnStats:
    information_loss: float


@dataclass
class FidelityReport:
    """Per-column and table-level utility statistics for original vs processed data."""

    numeric: dict[str, NumericColumnStats] = field(default_factory=dict)
    categorical: dict[str, CategoricalColumnStats] = field(default_factory=dict)
    text: dict[str, TextColumnStats] = field(default_factory=dict)
    correlation_delta: float | None = None
    correlation_excluded: list[str] = field(default_factory=list)
    row_count_original: int = 0
    row_count_processed: int = 0
    manifest_digest: str | None = None
    # reserved for externally supplied ML-utility metrics; never populated here
    external_model_metrics: dict = field(default_factory=dict)

    def to_json(self) -> str:
        def encode(value):
            if value is None:
                return None
            if isinstance(value, float) and math.isinf(value):
                return "inf"
            return value

        payload = {
            "numeric": {
                name: {
                    "ks_statistic": s.ks_statistic,
                    "mean_delta": s.mean_delta,
                    "variance_ratio": encode(s.variance_ratio),
                    "min_delta": s.min_delta,
                    "max_delta": s.max_delta,
                    "excluded_original": s.excluded_original,
                    "excluded_processed": s.excluded_processed,
                }
                for name, s in sorted(self.numeric.items())
            },
            "categorical": {
                name: {
                    "chi2_statistic": encode(s.chi2_statistic),
                    "dof": s.dof,
                    "category_count_delta": s.category_count_delta,
                }
                for name, s in sorted(self.categorical.items())
            },
            "text": {
                name: {"information_loss": s.information_loss}
                for name, s in sorted(self.text.items())
            },
            "correlation_delta": self.correlation_delta,
            "correlation_excluded": sorted(self.correlation_excluded),
            "row_count_original": self.row_count_original,
            "row_count_processed": self.row_count_processed,
            "manifest_digest": self.manifest_digest,
            "external_model_metrics": self.external_model_metrics,
        }
        return json.dumps(payload, indent=2, sort_keys=True)

    def to_text(self) -> str:
        lines = [
            f"fidelity report  rows: {self.row_count_original} original / "
            f"{self.row_count_processed} processed"
        ]
        if self.manifest_digest:
            lines.append(f"manifest digest: {self.manifest_digest}")
        for name, s in sorted(self.numeric.items()):
            ratio = "undefined" if s.variance_ratio is None else f"{s.variance_ratio:.6g}"
            lines.append(
                f"  numeric {name}: ks={s.ks_statistic:.6g} mean_delta={s.mean_delta:.6g} "
                f"variance_ratio={ratio} min_delta={s.min_delta:.6g} max_delta={s.max_delta:.6g} "
                f"excluded={s.excluded_original}/{s.excluded_processed}"
            )
        for name, s in sorted(self.categorical.items()):
            lines.append(
                f"  categorical {name}: chi2={s.chi2_statistic:.6g} dof={s.dof} "
                f"category_count_delta={s.category_count_delta}"
            )
        for name, s in sorted(self.text.items()):
            lines.append(f"  text {name}: information_loss={s.information_loss:.6g}")
        if self.correlation_delta is not None:
            lines.append(f"  correlation delta (max abs): {self.correlation_delta:.6g}")
        if self.correlation_excluded:
            lines.append(f"  correlation excluded columns: {', '.join(sorted(self.correlation_excluded))}")
        return "\n".join(lines) + "\n"


def _category_count(values) -> int:
    return len({v for v in values if v is not None})


def build_report(
    original: Table,
    processed: Table,
    binnings: dict[str, BinningScheme] | None = None,
    manifest_digest: str | None = None,
) -> FidelityReport:
    """Consolidated fidelity report comparing processed against original.

    Columns that binning converted from numeric to categorical are compared
    on the categorical side after applying the same scheme to the original
    (pass the schemes via ``binnings``). Any other schema mismatch is an
    error.
    """
    binnings = binnings or {}
    missing = [n for n in original.column_names() if not processed.has_column(n)]
    if missing:
        raise InputError(f"processed table is missing columns: {missing}")
    extra = [n for n in processed.column_names() if not original.has_column(n)]
    if extra:
        raise InputError(f"processed table has unknown columns: {extra}")

    report = FidelityReport(
        row_count_original=original.row_count,
        row_count_processed=processed.row_count,
        manifest_digest=manifest_digest,
    )
    numeric_pairs = []
    for col in original.columns:
        name = col.name
        kind_o = col.schema.kind
        kind_p = processed.column(name).schema.kind
        cells_o = col.cells
        cells_p = processed.column(name).cells
        # CSV round-trips cannot distinguish categorical from text, so a
        # label-valued column loaded from disk infers as text
        label_kinds = (ColumnKind.CATEGORICAL, ColumnKind.TEXT)
        if kind_o is ColumnKind.NUMERIC and kind_p is ColumnKind.NUMERIC:
            a_arr, excl_a = _finite(cells_o)
            b_arr, excl_b = _finite(cells_p)
            if a_arr.size < 2 or b_arr.size < 2:
                raise InputError(f"column {name!r} has too few finite values to compare")
            deltas = moment_deltas(cells_o, cells_p)
            report.numeric[name] = NumericColumnStats(
                ks_statistic=ks_two_sample(cells_o, cells_p),
                mean_delta=deltas.mean_delta,
                variance_ratio=deltas.variance_ratio,
                min_delta=float(b_arr.min() - a_arr.min()),
                max_delta=float(b_arr.max() - a_arr.max()),
                excluded_original=excl_a,
                excluded_processed=excl_b,
            )
            numeric_pairs.append(name)
        elif kind_o is ColumnKind.NUMERIC and kind_p in label_kinds:
            scheme = binnings.get(name)
            if scheme is None:
                raise InputError(
                    f"column {name!r} became categorical but no binning scheme was supplied"
                )
            binned = bin_column(cells_o, scheme)
            stat, dof = chi2_categorical(binned, cells_p)
            report.categorical[name] = CategoricalColumnStats(
                chi2_statistic=stat,
                dof=dof,
                category_count_delta=_category_count(cells_p) - _category_count(binned),
            )
        elif kind_o is ColumnKind.CATEGORICAL and kind_p in label_kinds:
            stat, dof = chi2_categorical(cells_o, cells_p)
            report.categorical[name] = CategoricalColumnStats(
                chi2_statistic=stat,
                dof=dof,
                category_count_delta=_category_count(cells_p) - _category_count(cells_o),
            )
        elif kind_o is ColumnKind.TEXT and kind_p is ColumnKind.TEXT:
            report.text[name] = TextColumnStats(information_loss=information_loss(cells_o, cells_p))
        else:
            raise InputError(
                f"column {name!r} changed kind {kind_o.value} -> {kind_p.value}; "
                "only numeric -> categorical (binning) conversions are comparable"
            )
    if len(numeric_pairs) >= 2:
        try:
            delta, excluded = correlation_delta(original, processed, numeric_pairs)
            report.correlation_delta = delta
            report.correlation_excluded = excluded
        except InputError:
            report.correlation_delta = None
    return report
