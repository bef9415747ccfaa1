"""One-shot differentially private queries over a table: count, sum, mean, histogram.

Every query charges the ledger before touching the data; a refused charge
raises before the true value is even computed, so failures carry nothing
data-dependent. Sum and mean clip cells into declared bounds first, which is
what defines their sensitivity (hi - lo). Mean divides the noisy sum by the
selection size, treating the row count as public.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

from .errors import InputError, ParameterError
from .mechanisms import PrivacyLedger, PrivacyParams, gaussian_sigma
from .rng import RandomSource, sample_gaussian, sample_laplace, sample_two_sided_geometric
from .table import ColumnKind, Table
from .transforms import OUT_OF_RANGE, BinningScheme

MISSING_BUCKET = "<missing>"

_COMPARATORS = {
    "==": lambda a, b: a == b,
    "!=": lambda a, b: a != b,
    "<": lambda a, b: a < b,
    "<=": lambda a, b: a <= b,
    ">": lambda a, b: a > b,
    ">=": lambda a, b: a >= b,
}


class QueryKind(str, Enum):
    COUNT = "count"
    SUM = "sum"
    MEAN = "mean"
    HISTOGRAM = "histogram"


class QueryMechanism(str, Enum):
    LAPLACE = "laplace"
    GAUSSIAN = "gaussian"
    GEOMETRIC = "geometric"


@dataclass(frozen=True)
class Predicate:
    """Single comparator clause over one column; missing cells never match."""

    column: str
    op: str
    value: float | str

    def __post_init__(self):
        if self.op not in _COMPARATORS:
            raise ParameterError(f"unknown comparator {self.op!r}; use one of {sorted(_COMPARATORS)}")

    def mask(self, table: Table) -> list[bool]:
        cells = table.column(self.column).cells
        compare = _COMPARATORS[self.op]
        out = []
        for cell in cells:
            if cell is None:
                out.append(False)
                continue
            try:
                out.append(bool(compare(cell, self.value)))
            except TypeError:
                out.append(False)
        return out


@dataclass
class QuerySpec:
    kind: QueryKind
    column: str = ""
    predicate: Predicate | None = None
    value_bounds: tuple[float, float] | None = None
    bins: BinningScheme | None = None
    mechanism: QueryMechanism = QueryMechanism.LAPLACE
    params: PrivacyParams = field(default_factory=lambda: PrivacyParams(epsilon=1.0))
    clamp_nonnegative: bool = False

    def __post_init__(self):
        self.kind = QueryKind(self.kind)
        self.mechanism = QueryMechanism(self.mechanism)
        if self.kind in (QueryKind.SUM, QueryKind.MEAN):
            if self.value_bounds is None:
                raise ParameterError(f"{self.kind.value} queries require value_bounds")
            lo, hi = self.value_bounds
            if not (math.isfinite(lo) and math.isfinite(hi) and lo < hi):
                raise ParameterError(f"value_bounds must be finite with lo < hi, got {self.value_bounds}")
            if not self.column:
                raise ParameterError(f"{self.kind.value} queries require a column")
            if self.mechanism is QueryMechanism.GEOMETRIC:
                raise ParameterError("geometric mechanism only applies to count/histogram queries")
        if self.kind is QueryKind.HISTOGRAM:
            if self.bins is None:
                raise ParameterError("histogram queries require a binning scheme")
            if not self.column:
                raise ParameterError("histogram queries require a column")
            if self.mechanism is QueryMechanism.GAUSSIAN:
                raise ParameterError("histogram supports laplace or geometric noise")
        if self.mechanism is QueryMechanism.GAUSSIAN and self.params.delta == 0:
            raise ParameterError("gaussian mechanism requires delta > 0")
        if self.mechanism in (QueryMechanism.LAPLACE, QueryMechanism.GEOMETRIC) and self.params.delta != 0:
            raise ParameterError(f"{self.mechanism.value} mechanism is pure-DP; delta must be 0")


@dataclass
class QueryResult:
    """Noisy answer plus the public parameters that produced it.

    ``noise_params`` echoes only calibration values (scale, sigma, epsilon,
    sensitivity, public n); true values are never echoed.
    """

    kind: QueryKind
    label: str
    value: float | int | None = None
    bins: list[tuple[str, float]] | None = None
    epsilon_charged: float = 0.0
    delta_charged: float = 0.0
    mechanism: QueryMechanism = QueryMechanism.LAPLACE
    noise_params: dict = field(default_factory=dict)

    def to_text(self) -> str:
        lines = [f"query: {self.label}"]
        if self.bins is not None:
            for label, count in self.bins:
                lines.append(f"  {label}\t{count}")
        else:
            lines.append(f"  result: {self.value}")
        lines.append(f"  mechanism: {self.mechanism.value}  noise: {self.noise_params}")
        lines.append(f"  charged: epsilon={self.epsilon_charged} delta={self.delta_charged}")
        return "\n".join(lines) + "\n"


def _selection(table: Table, spec: QuerySpec) -> list:
    """Cells of the target column for rows passing the predicate, missing excluded."""
    cells = table.column(spec.column).cells
    if spec.predicate is not None:
        mask = spec.predicate.mask(table)
        cells = [c for c, keep in zip(cells, mask) if keep]
    return [c for c in cells if c is not None]


def _count_noise(spec: QuerySpec, src: RandomSource) -> tuple[float, dict]:
    params = spec.params
    if spec.mechanism is QueryMechanism.LAPLACE:
        b = 1.0 / params.epsilon
        return float(sample_laplace(src, 0.0, b, 1)[0]), {"scale": b, "sensitivity": 1}
    if spec.mechanism is QueryMechanism.GAUSSIAN:
        sigma = gaussian_sigma(PrivacyParams(params.epsilon, params.delta, 1.0))
        return float(sample_gaussian(src, 0.0, sigma, 1)[0]), {"sigma": sigma, "sensitivity": 1}
    return int(sample_two_sided_geometric(src, params.epsilon, 1)[0]), {
        "epsilon": params.epsilon,
        "sensitivity": 1,
    }


def dp_count(table: Table, spec: QuerySpec, ledger: PrivacyLedger, src: RandomSource) -> QueryResult:
    """Noisy row count (predicate matches, or all rows) at sensitivity 1."""
    if spec.kind is not QueryKind.COUNT:
        raise ParameterError(f"expected a count spec, got {spec.kind.value}")
    label = f"count({spec.predicate.column if spec.predicate else '*'})"
    entry = ledger.charge(label, spec.params.epsilon, spec.params.delta)
    if spec.predicate is not None:
        true_count = sum(spec.predicate.mask(table))
    else:
        true_count = table.row_count
    noise, noise_params = _count_noise(spec, src)
    value = true_count + noise
    if spec.mechanism is QueryMechanism.GEOMETRIC:
        value = int(value)
    if spec.clamp_nonnegative:
        value = max(0, value)
    return QueryResult(
        kind=spec.kind,
        label=label,
        value=value,
        epsilon_charged=entry.epsilon,
        delta_charged=entry.delta,
        mechanism=spec.mechanism,
        noise_params=noise_params,
    )


def _clipped(values, bounds: tuple[float, float]) -> list[float]:
    lo, hi = bounds
    return [min(max(float(v), lo), hi) for v in values if isinstance(v, (int, float)) and math.isfinite(v)]


def _sum_noise(spec: QuerySpec, src: RandomSource) -> tuple[float, dict]:
    lo, hi = spec.value_bounds
    sensitivity = hi - lo
    params = spec.params
    if spec.mechanism is QueryMechanism.LAPLACE:
        b = sensitivity / params.epsilon
        return float(sample_laplace(src, 0.0, b, 1)[0]), {"scale": b, "sensitivity": sensitivity}
    sigma = gaussian_sigma(PrivacyParams(params.epsilon, params.delta, sensitivity))
    return float(sample_gaussian(src, 0.0, sigma, 1)[0]), {"sigma": sigma, "sensitivity": sensitivity}


def dp_sum(table: Table, spec: QuerySpec, ledger: PrivacyLedger, src: RandomSource) -> QueryResult:
    """Noisy sum of cells clipped into value_bounds (sensitivity hi - lo)."""
    if spec.kind is not QueryKind.SUM:
        raise ParameterError(f"expected a sum spec, got {spec.kind.value}")
    label = f"sum({spec.column})"
    entry = ledger.charge(label, spec.params.epsilon, spec.params.delta)
    clipped = _clipped(_selection(table, spec), spec.value_bounds)
    noise, noise_params = _sum_noise(spec, src)
    return QueryResult(
        kind=spec.kind,
        label=label,
        value=sum(clipped) + noise,
        epsilon_charged=entry.epsilon,
        delta_charged=entry.delta,
        mechanism=spec.mechanism,
        noise_params=noise_params,
    )


def dp_mean(table: Table, spec: QuerySpec, ledger: PrivacyLedger, src: RandomSource) -> QueryResult:
    """Noisy clipped sum divided by the public selection size; one charge."""
    if spec.kind is not QueryKind.MEAN:
        raise ParameterError(f"expected a mean spec, got {spec.kind.value}")
    label = f"mean({spec.column})"
    entry = ledger.charge(label, spec.params.epsilon, spec.params.delta)
    clipped = _clipped(_selection(table, spec), spec.value_bounds)
    if not clipped:
        raise InputError(f"mean({spec.column}): empty selection")
    noise, noise_params = _sum_noise(spec, src)
    noise_params["public_n"] = len(clipped)
    return QueryResult(
        kind=spec.kind,
        label=label,
        value=(sum(clipped) + noise) / len(clipped),
        epsilon_charged=entry.epsilon,
        delta_charged=entry.delta,
        mechanism=spec.mechanism,
        noise_params=noise_params,
    )


def dp_histogram(table: Table, spec: QuerySpec, ledger: PrivacyLedger, src: RandomSource) -> QueryResult:
    """Per-bin noisy counts at sensitivity 1, one epsilon charge for the whole histogram.

    Bins are disjoint and cover every row (scheme labels, an out-of-range
    bucket, and a missing bucket), so parallel composition applies. Bucket
    labels and order are data-independent.
    """
    if spec.kind is not QueryKind.HISTOGRAM:
        raise ParameterError(f"expected a histogram spec, got {spec.kind.value}")
    label = f"histogram({spec.column})"
    entry = ledger.charge(label, spec.params.epsilon, spec.params.delta)
    cells = table.column(spec.column).cells
    if spec.predicate is not None:
        mask = spec.predicate.mask(table)
        cells = [c for c, keep in zip(cells, mask) if keep]
    buckets = list(spec.bins.labels) + [OUT_OF_RANGE, MISSING_BUCKET]
    counts = {name: 0 for name in buckets}
    for cell in cells:
        if cell is None:
            counts[MISSING_BUCKET] += 1
        else:
            counts[spec.bins.assign(float(cell))] += 1
    if spec.mechanism is QueryMechanism.LAPLACE:
        b = 1.0 / spec.params.epsilon
        noise = sample_laplace(src, 0.0, b, len(buckets))
        noise_params = {"scale": b, "sensitivity": 1}
        noisy = [counts[name] + float(noise[i]) for i, name in enumerate(buckets)]
    else:
        noise = sample_two_sided_geometric(src, spec.params.epsilon, len(buckets))
        noise_params = {"epsilon": spec.params.epsilon, "sensitivity": 1}
        noisy = [counts[name] + int(noise[i]) for i, name in enumerate(buckets)]
    if spec.clamp_nonnegative:
        noisy = [max(0, v) for v in noisy]
    return QueryResult(
        kind=spec.kind,
        label=label,
        bins=list(zip(buckets, noisy)),
        epsilon_charged=entry.epsilon,
        delta_charged=entry.delta,
        mechanism=spec.mechanism,
        noise_params=noise_params,
    )


_RUNNERS = {
    QueryKind.COUNT: dp_count,
    QueryKind.SUM: dp_sum,
    QueryKind.MEAN: dp_mean,
    QueryKind.HISTOGRAM: dp_histogram,
}


def run_query(table: Table, spec: QuerySpec, ledger: PrivacyLedger, src: RandomSource) -> QueryResult:
    if spec.kind in (QueryKind.SUM, QueryKind.MEAN, QueryKind.HISTOGRAM):
        if table.column(spec.column).schema.kind is not ColumnKind.NUMERIC:
            raise InputError(f"column {spec.column!r} is not numeric")
    return _RUNNERS[spec.kind](table, spec, ledger, src)
