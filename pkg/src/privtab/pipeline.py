"""Config-driven executor: binds transform chains to columns, charges the
budget ledger, and emits the processed table plus an execution manifest.

Budget decisions happen in a single-threaded planning pass in config
declaration order, before any (possibly parallel) column work starts, so
they are deterministic regardless of worker count. Per-step noise streams
are keyed by (column name, step index), so neither column order in the file
nor parallelism can change any output value.
"""

from __future__ import annotations

import json
import hashlib
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path

from .errors import InputError, ParameterError
from .mechanisms import PrivacyLedger, PrivacyParams, gaussian_sigma
from .pii import FauxMapping, FauxMode, preassign, transform_cell
from .rng import NoiseSpec, RandomSource, derive_stream_id, sample_laplace, sample_gaussian, sample_two_sided_geometric
from .table import Column, ColumnKind, Table
from .transforms import (
    BinningScheme,
    BoundsDerivation,
    ClipBounds,
    MaskRule,
    additive_noise,
    bin_column,
    clip,
    hybrid_perturbation,
    load_mask_rules,
    mask,
    multiplicative_perturbation,
    reflect_threshold,
)

CONFIG_VERSION = 1


class Technique(str, Enum):
    ADDITIVE_NOISE = "additive_noise"
    DP_LAPLACE = "dp_laplace"
    DP_GAUSSIAN = "dp_gaussian"
    DP_GEOMETRIC = "dp_geometric"
    MULTIPLICATIVE = "multiplicative"
    HYBRID = "hybrid"
    BIN = "bin"
    CLIP = "clip"
    MASK = "mask"
    PII = "pii"


# allowed parameter keys per technique (used for unknown-key checking)
_TECH_PARAMS: dict[Technique, frozenset] = {
    Technique.ADDITIVE_NOISE: frozenset({"family", "location", "scale", "lo", "hi"}),
    Technique.DP_LAPLACE: frozenset({"sensitivity", "epsilon"}),
    Technique.DP_GAUSSIAN: frozenset({"sensitivity", "epsilon", "delta"}),
    Technique.DP_GEOMETRIC: frozenset({"epsilon"}),
    Technique.MULTIPLICATIVE: frozenset({"lo", "hi"}),
    Technique.HYBRID: frozenset({"lo", "hi", "sensitivity", "epsilon"}),
    Technique.BIN: frozenset({"edges", "labels"}),
    Technique.CLIP: frozenset({"lo", "hi", "derivation", "p_lo", "p_hi"}),
    Technique.MASK: frozenset({"rule", "pattern", "template", "rules_file"}),
    Technique.PII: frozenset({"mode"}),
}

_NUMERIC_IN = {
    Technique.ADDITIVE_NOISE,
    Technique.DP_LAPLACE,
    Technique.DP_GAUSSIAN,
    Technique.DP_GEOMETRIC,
    Technique.MULTIPLICATIVE,
    Technique.HYBRID,
    Technique.BIN,
    Technique.CLIP,
}
_TEXT_IN = {Technique.MASK, Technique.PII}
_CHARGING = {Technique.DP_LAPLACE, Technique.DP_GAUSSIAN, Technique.DP_GEOMETRIC, Technique.HYBRID}


@dataclass
class TransformSpec:
    """One configured technique bound to one column."""

    technique: Technique
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        self.technique = Technique(self.technique)

    def charge(self) -> tuple[float, float] | None:
        """(epsilon, delta) this step spends, or None for unbudgeted steps."""
        if self.technique not in _CHARGING:
            return None
        epsilon = float(self.params.get("epsilon", 0.0))
        delta = float(self.params.get("delta", 0.0)) if self.technique is Technique.DP_GAUSSIAN else 0.0
        return (epsilon, delta)


@dataclass
class PipelineConfig:
    """Declarative pipeline: global seed/budget plus ordered per-column specs."""

    master_seed: int
    columns: dict[str, list[TransformSpec]] = field(default_factory=dict)
    budget: PrivacyParams | None = None
    thresholds: dict[str, float] = field(default_factory=dict)
    strict: bool = True
    version: int = CONFIG_VERSION
    warnings: list[str] = field(default_factory=list)

    def charging_steps(self) -> list[tuple[str, int, TransformSpec, tuple[float, float]]]:
        out = []
        for name, specs in self.columns.items():
            for idx, spec in enumerate(specs):
                charge = spec.charge()
                if charge is not None:
                    out.append((name, idx, spec, charge))
        return out

    @classmethod
    def from_dict(cls, data: dict, strict: bool | None = None) -> "PipelineConfig":
        if not isinstance(data, dict):
            raise InputError("config must be a JSON object")
        strict_mode = bool(data.get("strict", True)) if strict is None else strict
        warnings: list[str] = []

        def unknown(keys, allowed, where):
            extra = sorted(set(keys) - set(allowed))
            if not extra:
                return
            message = f"unknown key(s) in {where}: {extra}"
            if strict_mode:
                raise InputError(message)
            warnings.append(message)

        unknown(data.keys(), {"version", "seed", "strict", "budget", "columns", "thresholds"}, "config")
        version = data.get("version", CONFIG_VERSION)
        if version != CONFIG_VERSION:
            raise InputError(f"unsupported config version {version!r}; expected {CONFIG_VERSION}")
        if "seed" not in data:
            raise InputError("config requires a 'seed' (reproducibility is not optional)")
        seed = data["seed"]
        if not isinstance(seed, int) or isinstance(seed, bool) or seed < 0:
            raise InputError(f"config key 'seed' must be a non-negative integer, got {seed!r}")

        budget = None
        if "budget" in data:
            raw = data["budget"]
            if not isinstance(raw, dict):
                raise InputError("config key 'budget' must be an object")
            unknown(raw.keys(), {"epsilon", "delta"}, "budget")
            try:
                budget = PrivacyParams(
                    epsilon=float(raw.get("epsilon", 0.0)), delta=float(raw.get("delta", 0.0))
                )
            except (ParameterError, TypeError, ValueError) as exc:
                raise InputError(f"bad budget: {exc}") from exc

        columns: dict[str, list[TransformSpec]] = {}
        raw_columns = data.get("columns", {})
        if not isinstance(raw_columns, dict):
            raise InputError("config key 'columns' must map column names to step lists")
        for name, steps in raw_columns.items():
            if not isinstance(steps, list):
                raise InputError(f"column {name!r}: steps must be a list")
            specs = []
            for pos, step in enumerate(steps):
                if not isinstance(step, dict) or "technique" not in step:
                    raise InputError(f"column {name!r} step {pos}: need an object with a 'technique' key")
                try:
                    technique = Technique(step["technique"])
                except ValueError:
                    raise InputError(
                        f"column {name!r} step {pos}: unknown technique {step['technique']!r}"
                    ) from None
                params = {k: v for k, v in step.items() if k != "technique"}
                unknown(params.keys(), _TECH_PARAMS[technique], f"column {name!r} step {pos} ({technique.value})")
                params = {k: v for k, v in params.items() if k in _TECH_PARAMS[technique]}
                specs.append(TransformSpec(technique, params))
            columns[name] = specs

        thresholds = {}
        raw_thresholds = data.get("thresholds", {})
        if not isinstance(raw_thresholds, dict):
            raise InputError("config key 'thresholds' must map column names to critical values")
        for name, value in raw_thresholds.items():
            if not isinstance(value, (int, float)) or isinstance(value, bool):
                raise InputError(f"threshold for {name!r} must be a number, got {value!r}")
            thresholds[name] = float(value)

        return cls(
            master_seed=seed,
            columns=columns,
            budget=budget,
            thresholds=thresholds,
            strict=strict_mode,
            version=version,
            warnings=warnings,
        )

    @classmethod
    def from_file(cls, path: str | Path, strict: bool | None = None) -> "PipelineConfig":
        try:
            data = json.loads(Path(path).read_text("utf-8"))
        except json.JSONDecodeError as exc:
            raise InputError(f"config {path}: invalid JSON: {exc}") from exc
        return cls.from_dict(data, strict=strict)


@dataclass(frozen=True)
class Violation:
    kind: str  # unknown-column | type | params | budget
    message: str

    def __str__(self) -> str:
        return f"[{self.kind}] {self.message}"


def _build_noise_spec(params: dict) -> NoiseSpec:
    family = params.get("family", "laplace")
    if family == "uniform":
        if "lo" not in params or "hi" not in params:
            raise ParameterError("uniform additive noise needs 'lo' and 'hi'")
        return NoiseSpec(family=family, bounds=(float(params["lo"]), float(params["hi"])))
    try:
        return NoiseSpec(
            family=family,
            location=float(params.get("location", 0.0)),
            scale=float(params.get("scale", 1.0)),
        )
    except ValueError as exc:
        raise ParameterError(str(exc)) from exc


def _build_clip_bounds(params: dict) -> ClipBounds:
    derivation = params.get("derivation")
    if derivation in (None, "explicit"):
        if "lo" not in params or "hi" not in params:
            raise ParameterError("explicit clip needs 'lo' and 'hi'")
        return ClipBounds.explicit(float(params["lo"]), float(params["hi"]))
    derivation = BoundsDerivation(derivation)
    if derivation is BoundsDerivation.MEAN_PM_3SIGMA:
        return ClipBounds.mean_pm_3sigma()
    return ClipBounds.quantile(float(params.get("p_lo", 0.0)), float(params.get("p_hi", 1.0)))


def _build_mask_rule(params: dict) -> MaskRule:
    if "pattern" in params or "template" in params:
        if not ("pattern" in params and "template" in params):
            raise ParameterError("inline mask needs both 'pattern' and 'template'")
        return MaskRule("inline", str(params["pattern"]), str(params["template"]))
    rules = load_mask_rules(params.get("rules_file"))
    name = params.get("rule")
    if name not in rules:
        raise ParameterError(f"unknown mask rule {name!r}; available: {sorted(rules)}")
    return rules[name]


def _check_step_params(spec: TransformSpec) -> None:
    """Raise ParameterError when a step's parameters cannot build its transform."""
    t = spec.technique
    p = spec.params
    if t is Technique.ADDITIVE_NOISE:
        _build_noise_spec(p)
    elif t is Technique.DP_LAPLACE:
        PrivacyParams(epsilon=float(p.get("epsilon", 0.0)), sensitivity=float(p.get("sensitivity", 0.0)))
    elif t is Technique.DP_GAUSSIAN:
        PrivacyParams(
            epsilon=float(p.get("epsilon", 0.0)),
            delta=float(p.get("delta", 0.0)),
            sensitivity=float(p.get("sensitivity", 0.0)),
        )
        if float(p.get("delta", 0.0)) == 0.0:
            raise ParameterError("dp_gaussian needs delta > 0")
    elif t is Technique.DP_GEOMETRIC:
        if float(p.get("epsilon", 0.0)) <= 0:
            raise ParameterError("dp_geometric needs epsilon > 0")
    elif t in (Technique.MULTIPLICATIVE, Technique.HYBRID):
        lo, hi = float(p.get("lo", 0.0)), float(p.get("hi", 0.0))
        if not 0 < lo < hi:
            raise ParameterError(f"factor bounds must satisfy 0 < lo < hi, got [{lo}, {hi})")
        if t is Technique.HYBRID:
            if float(p.get("sensitivity", 0.0)) <= 0 or float(p.get("epsilon", 0.0)) <= 0:
                raise ParameterError("hybrid needs sensitivity > 0 and epsilon > 0")
    elif t is Technique.BIN:
        BinningScheme(tuple(p.get("edges", ())), tuple(p.get("labels", ())))
    elif t is Technique.CLIP:
        _build_clip_bounds(p)
    elif t is Technique.MASK:
        _build_mask_rule(p)
    elif t is Technique.PII:
        FauxMode(p.get("mode", "consistent"))


def validate(config: PipelineConfig, table: Table) -> list[Violation]:
    """Pre-flight findings: unknown columns, bad params, type-incompatible
    chains, and budget-infeasible declared totals. Empty list = runnable."""
    violations: list[Violation] = []
    for name, specs in config.columns.items():
        if not table.has_column(name):
            violations.append(Violation("unknown-column", f"config names absent column {name!r}"))
            continue
        kind = table.column(name).schema.kind
        for idx, spec in enumerate(specs):
            where = f"column {name!r} step {idx} ({spec.technique.value})"
            try:
                _check_step_params(spec)
            except (ParameterError, InputError, TypeError, ValueError, OSError) as exc:
                violations.append(Violation("params", f"{where}: {exc}"))
            if (
                config.strict
                and spec.technique is Technique.DP_GAUSSIAN
                and float(spec.params.get("epsilon", 0.0)) > 1.0
            ):
                violations.append(
                    Violation(
                        "params",
                        f"{where}: classical gaussian calibration requires epsilon <= 1 "
                        "(disable strict mode to allow)",
                    )
                )
            if spec.technique in _NUMERIC_IN and kind is not ColumnKind.NUMERIC:
                violations.append(
                    Violation("type", f"{where}: needs a numeric column but sees {kind.value}")
                )
            elif spec.technique in _TEXT_IN and kind is not ColumnKind.TEXT:
                violations.append(
                    Violation("type", f"{where}: needs a text column but sees {kind.value}")
                )
            if spec.technique is Technique.BIN:
                kind = ColumnKind.CATEGORICAL
    for name in config.thresholds:
        if not table.has_column(name):
            violations.append(Violation("unknown-column", f"threshold names absent column {name!r}"))

    charging = config.charging_steps()
    if charging:
        if config.budget is None:
            violations.append(Violation("budget", "config has DP steps but no budget"))
        else:
            total_eps = sum(c[3][0] for c in charging)
            total_delta = sum(c[3][1] for c in charging)
            if total_eps > config.budget.epsilon or total_delta > config.budget.delta:
                violations.append(
                    Violation(
                        "budget",
                        f"declared charges (epsilon={total_eps:.6g}, delta={total_delta:.6g}) "
                        f"exceed budget (epsilon={config.budget.epsilon:.6g}, "
                        f"delta={config.budget.delta:.6g})",
                    )
                )
    return violations


@dataclass
class StepRecord:
    column: str
    technique: str
    params: dict
    stream_id: int | None
    cells_affected: int
    details: dict = field(default_factory=dict)


@dataclass
class ExecutionManifest:
    """Auditable record of one pipeline run; replaying it reproduces the output digest."""

    master_seed: int
    seed_source: str = "config"
    input_digest: str = ""
    output_digest: str = ""
    budget_epsilon: float | None = None
    budget_delta: float | None = None
    steps: list[StepRecord] = field(default_factory=list)
    ledger_entries: list[tuple[str, float, float]] = field(default_factory=list)

    def to_json(self) -> str:
        payload = {
            "master_seed": self.master_seed,
            "seed_source": self.seed_source,
            "input_digest": self.input_digest,
            "output_digest": self.output_digest,
            "budget": {"epsilon": self.budget_epsilon, "delta": self.budget_delta},
            "steps": [
                {
                    "column": s.column,
                    "technique": s.technique,
                    "params": s.params,
                    "stream_id": s.stream_id,
                    "cells_affected": s.cells_affected,
                    "details": s.details,
                }
                for s in self.steps
            ],
            "ledger": [
                {"label": label, "epsilon": eps, "delta": delta}
                for label, eps, delta in self.ledger_entries
            ],
        }
        return json.dumps(payload, indent=2, sort_keys=True)

    def to_text(self) -> str:
        lines = [
            f"seed: {self.master_seed} (source: {self.seed_source})",
            f"input digest:  {self.input_digest}",
            f"output digest: {self.output_digest}",
        ]
        if self.budget_epsilon is not None:
            lines.append(f"budget: epsilon={self.budget_epsilon} delta={self.budget_delta}")
        for s in self.steps:
            detail = " ".join(f"{k}={v}" for k, v in sorted(s.details.items()))
            lines.append(
                f"step {s.column}/{s.technique} stream={s.stream_id} "
                f"affected={s.cells_affected}{(' ' + detail) if detail else ''}"
            )
        spent_eps = sum(e for _, e, _ in self.ledger_entries)
        spent_delta = sum(d for _, _, d in self.ledger_entries)
        for label, eps, delta in self.ledger_entries:
            lines.append(f"charge {label}: epsilon={eps} delta={delta}")
        lines.append(f"total spend: epsilon={spent_eps} delta={spent_delta}")
        return "\n".join(lines) + "\n"

    def digest(self) -> str:
        return hashlib.sha256(self.to_json().encode("utf-8")).hexdigest()

    def binnings(self) -> dict[str, BinningScheme]:
        """Binning schemes applied per column, recovered from recorded steps."""
        out = {}
        for s in self.steps:
            if s.technique == Technique.BIN.value:
                out[s.column] = BinningScheme(tuple(s.params["edges"]), tuple(s.params["labels"]))
        return out


def _public_params(spec: TransformSpec) -> dict:
    return dict(spec.params)


def _run_step(
    spec: TransformSpec,
    column_name: str,
    step_index: int,
    cells: list,
    kind: ColumnKind,
    master_seed: int,
    pii_mappings: dict[FauxMode, FauxMapping],
) -> tuple[list, ColumnKind, StepRecord]:
    stream_id = derive_stream_id(column_name, step_index)
    src = RandomSource(master_seed, stream_id)
    t = spec.technique
    p = spec.params
    details: dict = {}
    charge = spec.charge()
    if charge is not None:
        details["charged_epsilon"], details["charged_delta"] = charge

    if t is Technique.ADDITIVE_NOISE:
        out, flagged = additive_noise(cells, _build_noise_spec(p), src)
        affected = sum(1 for c in cells if c is not None) - len(flagged)
        details["flagged_rows"] = len(flagged)
    elif t in (Technique.DP_LAPLACE, Technique.HYBRID, Technique.DP_GAUSSIAN, Technique.DP_GEOMETRIC):
        if t is Technique.HYBRID:
            out, flagged = hybrid_perturbation(
                cells,
                float(p["lo"]),
                float(p["hi"]),
                float(p["sensitivity"]),
                float(p["epsilon"]),
                src,
            )
            details["flagged_rows"] = len(flagged)
            affected = sum(1 for c in cells if c is not None) - len(flagged)
        else:
            usable = [
                i
                for i, c in enumerate(cells)
                if isinstance(c, (int, float)) and math.isfinite(c)
            ]
            usable_set = set(usable)
            flagged = [
                i for i, c in enumerate(cells) if c is not None and i not in usable_set
            ]
            if t is Technique.DP_LAPLACE:
                b = float(p["sensitivity"]) / float(p["epsilon"])
                noise = sample_laplace(src, 0.0, b, len(usable)) if usable else []
                details["scale"] = b
            elif t is Technique.DP_GAUSSIAN:
                sigma = gaussian_sigma(
                    PrivacyParams(float(p["epsilon"]), float(p["delta"]), float(p["sensitivity"]))
                )
                noise = sample_gaussian(src, 0.0, sigma, len(usable)) if usable else []
                details["sigma"] = sigma
            else:
                noise = sample_two_sided_geometric(src, float(p["epsilon"]), len(usable)) if usable else []
            out = list(cells)
            for j, i in enumerate(usable):
                out[i] = float(cells[i] + noise[j])
            details["flagged_rows"] = len(flagged)
            affected = len(usable)
    elif t is Technique.MULTIPLICATIVE:
        out, flagged = multiplicative_perturbation(cells, float(p["lo"]), float(p["hi"]), src)
        details["flagged_rows"] = len(flagged)
        affected = sum(1 for c in cells if c is not None) - len(flagged)
    elif t is Technique.BIN:
        scheme = BinningScheme(tuple(p["edges"]), tuple(p["labels"]))
        out = bin_column(cells, scheme)
        kind = ColumnKind.CATEGORICAL
        affected = sum(1 for c in cells if c is not None)
    elif t is Technique.CLIP:
        out, report = clip(cells, _build_clip_bounds(p), name=column_name)
        details["clipped_low"] = report.low
        details["clipped_high"] = report.high
        affected = report.low + report.high
    elif t is Technique.MASK:
        rule = _build_mask_rule(p)
        out, report = mask(cells, rule)
        details["matched_cells"] = report.matched_cells
        details["unmatched_cells"] = report.unmatched_cells
        affected = report.matched_cells
    elif t is Technique.PII:
        mode = FauxMode(p.get("mode", "consistent"))
        mapping = pii_mappings[mode]
        out = []
        affected = 0
        entity_count = 0
        for cell in cells:
            new_cell, audit = transform_cell(cell, mapping, src)
            out.append(new_cell)
            if audit:
                affected += 1
                entity_count += len(audit)
        details["entities"] = entity_count
    else:
        raise ParameterError(f"unhandled technique {t}")

    record = StepRecord(
        column=column_name,
        technique=t.value,
        params=_public_params(spec),
        stream_id=stream_id,
        cells_affected=affected,
        details=details,
    )
    return out, kind, record


def execute(
    config: PipelineConfig,
    table: Table,
    workers: int = 1,
    pii_key: bytes | None = None,
) -> tuple[Table, ExecutionManifest, PrivacyLedger]:
    """Run all column chains; all-or-nothing (any failure leaves no output).

    Charges the ledger for every DP step in declaration order before any
    column work; raises BudgetExhaustedError (and produces nothing) if the
    budget cannot cover them.
    """
    violations = [v for v in validate(config, table) if v.kind != "budget"]
    if violations:
        raise InputError("config failed validation: " + "; ".join(str(v) for v in violations))

    budget = config.budget if config.budget is not None else PrivacyParams(epsilon=math.inf)
    ledger = PrivacyLedger(budget)
    for name, idx, spec, (eps, delta) in config.charging_steps():
        ledger.charge(f"{spec.technique.value}({name})[{idx}]", eps, delta)

    pii_mappings: dict[FauxMode, FauxMapping] = {}
    pii_modes = {
        FauxMode(spec.params.get("mode", "consistent"))
        for specs in config.columns.values()
        for spec in specs
        if spec.technique is Technique.PII
    }
    if pii_modes:
        if pii_key is None:
            raise ParameterError(
                "pipeline has PII steps but no key was provided (environment or key file)"
            )
        for mode in pii_modes:
            pii_mappings[mode] = FauxMapping(pii_key, mode)
        if FauxMode.CONSISTENT in pii_mappings:
            consistent_columns = [
                table.column(name).cells
                for name, specs in config.columns.items()
                if table.has_column(name)
                and any(
                    s.technique is Technique.PII
                    and FauxMode(s.params.get("mode", "consistent")) is FauxMode.CONSISTENT
                    for s in specs
                )
            ]
            preassign(pii_mappings[FauxMode.CONSISTENT], consistent_columns)

    input_digest = table.digest()

    def run_column(name: str) -> tuple[str, list, ColumnKind, list[StepRecord]]:
        column = table.column(name)
        cells = list(column.cells)
        kind = column.schema.kind
        records = []
        for idx, spec in enumerate(config.columns[name]):
            cells, kind, record = _run_step(
                spec, name, idx, cells, kind, config.master_seed, pii_mappings
            )
            records.append(record)
        threshold = config.thresholds.get(name)
        if threshold is not None and kind is ColumnKind.NUMERIC:
            cells, reflected = reflect_threshold(column.cells, cells, threshold)
            records.append(
                StepRecord(
                    column=name,
                    technique="threshold_reflect",
                    params={"threshold": threshold},
                    stream_id=None,
                    cells_affected=reflected,
                    details={"dp": False, "post_processing": True},
                )
            )
        return name, cells, kind, records

    names = [n for n in config.columns if config.columns[n]]
    if workers > 1 and len(names) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = {r[0]: r for r in pool.map(run_column, names)}
    else:
        results = {name: run_column(name) for name in names}

    out_columns = []
    for column in table.columns:
        if column.name in results:
            _, cells, kind, _ = results[column.name]
            schema = replace(column.schema, kind=kind)
            out_columns.append(Column(schema, cells))
        else:
            out_columns.append(Column(column.schema, list(column.cells)))
    out_table = Table(out_columns)
    steps: list[StepRecord] = []
    for name in names:  # config order, independent of completion order
        steps.extend(results[name][3])

    manifest = ExecutionManifest(
        master_seed=config.master_seed,
        input_digest=input_digest,
        output_digest=out_table.digest(),
        budget_epsilon=None if config.budget is None else config.budget.epsilon,
        budget_delta=None if config.budget is None else config.budget.delta,
        steps=steps,
        ledger_entries=[(e.label, e.epsilon, e.delta) for e in ledger.entries()],
    )
    return out_table, manifest, ledger
