"""Per-column perturbation transforms: noise, scaling, binning, clipping, masking.

Columns are plain sequences with ``None`` marking missing cells; sentinel
numbers are never used. Every transform passes missing cells through
untouched and never fabricates values for them. Transforms are pure per
column, so distinct columns can be processed concurrently.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from enum import Enum
from importlib import resources
from pathlib import Path

import numpy as np

from .errors import InputError, InternalConsistencyError, ParameterError
from .rng import (
    CONTINUOUS_FAMILIES,
    NoiseSpec,
    RandomSource,
    sample as sample_noise,
    sample_laplace,
    sample_uniform,
)

MISSING = None
OUT_OF_RANGE = "<out-of-range>"

# narrowest factor range accepted by the multiplicative samplers
MIN_FACTOR_WIDTH = 1e-12


def _is_missing(cell) -> bool:
    return cell is None


def _is_finite_number(cell) -> bool:
    return isinstance(cell, (int, float)) and math.isfinite(cell)


def additive_noise(
    column, spec: NoiseSpec, src: RandomSource
) -> tuple[list, list[int]]:
    """Add one noise draw to every finite cell: out[i] = column[i] + eta_i.

    Missing cells stay missing. Non-finite cells pass through unchanged and
    their row indices are returned as flagged.
    """
    if spec.family not in CONTINUOUS_FAMILIES:
        raise ParameterError(
            f"additive_noise needs a continuous noise family, got {spec.family.value}"
        )
    usable = [i for i, c in enumerate(column) if not _is_missing(c) and _is_finite_number(c)]
    flagged = [i for i, c in enumerate(column) if not _is_missing(c) and not _is_finite_number(c)]
    noise = sample_noise(spec, src, len(usable)) if usable else np.empty(0)
    out = list(column)
    for j, i in enumerate(usable):
        out[i] = float(column[i] + noise[j])
    return out, flagged


def scale_by_factors(column, factors) -> list:
    """Apply out[i] = column[i] * factors[i] exactly; missing stays missing."""
    if len(factors) != len(column):
        raise InputError(f"need one factor per cell: {len(factors)} factors, {len(column)} cells")
    out = []
    for cell, k in zip(column, factors):
        out.append(None if _is_missing(cell) else float(cell * k))
    return out


def _check_factor_range(lo: float, hi: float) -> None:
    if lo <= 0:
        raise ParameterError(f"multiplicative factors must be positive, got lo={lo}")
    if not lo < hi:
        raise ParameterError(f"factor bounds must satisfy lo < hi, got [{lo}, {hi})")
    if hi - lo < MIN_FACTOR_WIDTH:
        raise ParameterError(
            f"factor range [{lo}, {hi}) is degenerate (width < {MIN_FACTOR_WIDTH})"
        )


def multiplicative_perturbation(
    column, lo: float, hi: float, src: RandomSource
) -> tuple[list, list[int]]:
    """Scale each positive cell by an independent factor drawn from U(lo, hi).

    Intended for positive-valued data where scaling preserves proportional
    relationships. Non-positive or non-finite cells pass through unchanged
    with their row indices flagged; missing stays missing.
    """
    _check_factor_range(lo, hi)
    usable = [
        i
        for i, c in enumerate(column)
        if not _is_missing(c) and _is_finite_number(c) and c > 0
    ]
    flagged = [
        i
        for i, c in enumerate(column)
        if not _is_missing(c) and not (_is_finite_number(c) and c > 0)
    ]
    factors = sample_uniform(src, lo, hi, len(usable)) if usable else np.empty(0)
    out = list(column)
    for j, i in enumerate(usable):
        out[i] = float(column[i] * factors[j])
    return out, flagged


def hybrid_perturbation(
    column,
    lo: float,
    hi: float,
    sensitivity: float,
    epsilon: float,
    src: RandomSource,
) -> tuple[list, list[int]]:
    """Multiplicative scaling plus Laplace noise: out[i] = x_i * k_i + Lap(0, sensitivity/epsilon)."""
    _check_factor_range(lo, hi)
    if sensitivity <= 0:
        raise ParameterError(f"sensitivity must be positive, got {sensitivity}")
    if epsilon <= 0:
        raise ParameterError(f"epsilon must be positive, got {epsilon}")
    scaled, flagged = multiplicative_perturbation(column, lo, hi, src)
    b = sensitivity / epsilon
    flagged_set = set(flagged)
    usable = [
        i for i, c in enumerate(column) if not _is_missing(c) and i not in flagged_set
    ]
    noise = sample_laplace(src, 0.0, b, len(usable)) if usable else np.empty(0)
    out = list(scaled)
    for j, i in enumerate(usable):
        out[i] = float(scaled[i] + noise[j])
    return out, flagged


@dataclass(frozen=True)
class BinningScheme:
    """Labeled intervals over the reals.

    Intervals are left-closed/right-open, except the final interval which is
    closed on both ends, so with edges (580, 670) a value of 669 falls in the
    lower bin and 670 in the upper one.
    """

    edges: tuple[float, ...]
    labels: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "edges", tuple(float(e) for e in self.edges))
        object.__setattr__(self, "labels", tuple(str(l) for l in self.labels))
        if len(self.edges) < 2:
            raise ParameterError("binning needs at least two edges")
        if any(a >= b for a, b in zip(self.edges, self.edges[1:])):
            raise ParameterError(f"edges must be strictly increasing, got {self.edges}")
        if len(self.labels) != len(self.edges) - 1:
            raise ParameterError(
                f"need one label per interval: {len(self.edges) - 1} intervals, "
                f"{len(self.labels)} labels"
            )
        if len(set(self.labels)) != len(self.labels):
            raise ParameterError("bin labels must be unique")

    def assign(self, value: float) -> str:
        """Label for a single value; OUT_OF_RANGE outside [first_edge, last_edge]."""
        if not math.isfinite(value):
            return OUT_OF_RANGE
        if value < self.edges[0] or value > self.edges[-1]:
            return OUT_OF_RANGE
        if value == self.edges[-1]:
            return self.labels[-1]
        idx = int(np.searchsorted(self.edges, value, side="right")) - 1
        return self.labels[idx]


def bin_column(column, scheme: BinningScheme) -> list:
    """Map each cell to its interval label; missing stays missing."""
    return [None if _is_missing(c) else scheme.assign(c) for c in column]


class BoundsDerivation(str, Enum):
    EXPLICIT = "explicit"
    MEAN_PM_3SIGMA = "mean_pm_3sigma"
    QUANTILE = "quantile"


@dataclass(frozen=True)
class ClipBounds:
    """Clipping range, either explicit or derived from the column itself."""

    derivation: BoundsDerivation
    lo: float | None = None
    hi: float | None = None
    p_lo: float | None = None
    p_hi: float | None = None

    @classmethod
    def explicit(cls, lo: float, hi: float) -> "ClipBounds":
        if not lo < hi:
            raise ParameterError(f"clip bounds must satisfy lo < hi, got [{lo}, {hi}]")
        return cls(BoundsDerivation.EXPLICIT, lo=float(lo), hi=float(hi))

    @classmethod
    def mean_pm_3sigma(cls) -> "ClipBounds":
        return cls(BoundsDerivation.MEAN_PM_3SIGMA)

    @classmethod
    def quantile(cls, p_lo: float, p_hi: float) -> "ClipBounds":
        if not 0.0 <= p_lo < p_hi <= 1.0:
            raise ParameterError(f"quantile levels must satisfy 0 <= p_lo < p_hi <= 1, got ({p_lo}, {p_hi})")
        return cls(BoundsDerivation.QUANTILE, p_lo=float(p_lo), p_hi=float(p_hi))


@dataclass(frozen=True)
class ClipReport:
    """How many cells hit each bound (dense clip concentrations are a risk signal)."""

    low: int
    high: int


def resolve_clip_bounds(column, bounds: ClipBounds, name: str = "column") -> tuple[float, float]:
    """Concrete (lo, hi) for the column; derives from finite cells when needed."""
    if bounds.derivation is BoundsDerivation.EXPLICIT:
        return bounds.lo, bounds.hi
    finite = np.array([c for c in column if not _is_missing(c) and _is_finite_number(c)], dtype=float)
    if finite.size < 2:
        raise ParameterError(f"derived clip bounds need >= 2 finite values in {name!r}")
    if bounds.derivation is BoundsDerivation.MEAN_PM_3SIGMA:
        mu = float(finite.mean())
        sigma = float(finite.std(ddof=1))
        if sigma == 0.0:
            raise ParameterError(f"cannot derive mean +/- 3 sigma bounds for {name!r}: sigma is 0")
        return mu - 3.0 * sigma, mu + 3.0 * sigma
    lo, hi = (float(q) for q in np.quantile(finite, [bounds.p_lo, bounds.p_hi]))
    if not lo < hi:
        raise ParameterError(f"derived quantile bounds for {name!r} are degenerate: [{lo}, {hi}]")
    return lo, hi


def clip(column, bounds: ClipBounds, name: str = "column") -> tuple[list, ClipReport]:
    """Clamp each cell into [lo, hi]; idempotent. Missing and NaN pass through."""
    lo, hi = resolve_clip_bounds(column, bounds, name)
    out = []
    low = high = 0
    for c in column:
        if _is_missing(c) or (isinstance(c, float) and math.isnan(c)):
            out.append(c)
        elif c < lo:
            out.append(float(lo))
            low += 1
        elif c > hi:
            out.append(float(hi))
            high += 1
        else:
            out.append(float(c))
    return out, ClipReport(low=low, high=high)


_TEMPLATE_TOKEN = re.compile(r"\\(g|m)<(\d+)>|\\\\|.", re.DOTALL)


@dataclass(frozen=True)
class MaskRule:
    r"""A regex masking rule.

    The template is rendered per match: ``\g<n>`` keeps group n verbatim,
    ``\m<n>`` rewrites group n to 'X' repeated to the group's length, any
    other character (including literal X runs) is copied as-is. A rendered
    replacement must preserve the matched substring's total length.
    """

    name: str
    pattern: str
    template: str

    def __post_init__(self):
        object.__setattr__(self, "_compiled", re.compile(self.pattern))

    def render(self, match: re.Match) -> str:
        parts = []
        for tok in _TEMPLATE_TOKEN.finditer(self.template):
            kind, group = tok.group(1), tok.group(2)
            if kind is None:
                parts.append("\\" if tok.group(0) == "\\\\" else tok.group(0))
                continue
            text = match.group(int(group))
            if text is None:
                raise InternalConsistencyError(
                    f"mask rule {self.name!r}: group {group} did not participate in the match"
                )
            parts.append(text if kind == "g" else "X" * len(text))
        replacement = "".join(parts)
        if len(replacement) != len(match.group(0)):
            raise InternalConsistencyError(
                f"mask rule {self.name!r} changed length on {match.group(0)!r}: "
                f"{len(match.group(0))} -> {len(replacement)}"
            )
        return replacement


@dataclass(frozen=True)
class MaskReport:
    matched_cells: int
    unmatched_cells: int


def mask(column, rule: MaskRule) -> tuple[list, MaskReport]:
    """Rewrite every match in every cell per the rule; unmatched cells are counted."""
    out = []
    matched = unmatched = 0
    for cell in column:
        if _is_missing(cell):
            out.append(None)
            continue
        text = str(cell)
        new_text, n = rule._compiled.subn(rule.render, text)
        if n > 0:
            matched += 1
        else:
            unmatched += 1
        out.append(new_text)
    return out, MaskReport(matched_cells=matched, unmatched_cells=unmatched)


_RULE_LINE = re.compile(r"^(?P<name>[A-Za-z0-9_.-]+)\s*=\s*(?P<pattern>.+?)\s*=>\s*(?P<template>.*)$")


def load_mask_rules(path: str | Path | None = None) -> dict[str, MaskRule]:
    """Load named rules from a ``name = pattern => template`` text file.

    Blank lines and '#' comments are ignored. Defaults to the bundled rule
    library (phone, credit card, street number).
    """
    if path is None:
        text = resources.files("privtab.data").joinpath("mask_rules.txt").read_text("utf-8")
    else:
        text = Path(path).read_text("utf-8")
    rules: dict[str, MaskRule] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        m = _RULE_LINE.match(line)
        if m is None:
            raise InputError(f"mask rules line {lineno}: expected 'name = pattern => template'")
        name = m.group("name")
        if name in rules:
            raise InputError(f"mask rules line {lineno}: duplicate rule name {name!r}")
        try:
            rules[name] = MaskRule(name, m.group("pattern"), m.group("template"))
        except re.error as exc:
            raise InputError(f"mask rules line {lineno}: bad pattern: {exc}") from exc
    return rules


def reflect_threshold(original, perturbed, threshold: float) -> tuple[list, int]:
    """Reflect perturbed values back across a critical threshold.

    Where the original and perturbed value fall on opposite sides of the
    threshold (side = value >= threshold), the perturbed value is replaced by
    2*threshold - perturbed. Utility heuristic only; carries no DP guarantee
    and must be recorded as non-DP post-processing.
    """
    if len(original) != len(perturbed):
        raise InputError(
            f"column length mismatch: {len(original)} original vs {len(perturbed)} perturbed"
        )
    out = []
    reflected = 0
    for orig, pert in zip(original, perturbed):
        if not (_is_finite_number(orig) and _is_finite_number(pert)):
            out.append(pert)
            continue
        if (orig >= threshold) != (pert >= threshold):
            out.append(float(2.0 * threshold - pert))
            reflected += 1
        else:
            out.append(pert)
    return out, reflected
