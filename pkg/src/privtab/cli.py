"""Batch command-line frontend: perturb, query, report, pii-scan, validate.

Exit codes are stable API: 0 ok, 2 validation/parse failure, 3 privacy
budget exhausted, 4 I/O failure (including ledger lock contention). Errors
go to stderr; data and reports go to stdout or files. Input files are never
modified; outputs are written via a temp file and an atomic rename, so an
aborted run leaves no artifact.

The PII secret is read from the PRIVTAB_PII_KEY environment variable or a
key file, never from a command-line flag (shell-history hygiene).
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import tempfile
from pathlib import Path

from .errors import BudgetExhaustedError, InputError, ParameterError, PrivtabError
from .fidelity import build_report
from .mechanisms import PrivacyLedger, PrivacyParams
from .pii import DEFAULT_KEY_ENV, FauxMapping, default_detectors, detect_pii
from .pipeline import PipelineConfig, execute, validate
from .queries import Predicate, QuerySpec, run_query
from .rng import RandomSource, derive_stream_id
from .table import load_csv, to_csv_bytes
from .transforms import BinningScheme

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_BUDGET = 3
EXIT_IO = 4


def _fail(message: str, code: int) -> int:
    print(f"privtab: error: {message}", file=sys.stderr)
    return code


def _resolve_pii_key(key_file: str | None) -> bytes | None:
    if key_file:
        return FauxMapping.from_key_file(key_file).key
    if os.environ.get(DEFAULT_KEY_ENV):
        return FauxMapping.from_env().key
    return None


def _atomic_write(path: Path, data: bytes) -> None:
    fd, tmp = tempfile.mkstemp(dir=path.parent or Path("."), prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _check_distinct_output(inputs: list[str], output: str) -> None:
    out = Path(output).resolve()
    for inp in inputs:
        if Path(inp).resolve() == out:
            raise InputError(f"output path {output!r} must be distinct from input path {inp!r}")


def cmd_perturb(args) -> int:
    try:
        _check_distinct_output([args.input, args.config], args.output)
        config = PipelineConfig.from_file(args.config)
        seed_source = "config"
        if args.seed is not None:
            config.master_seed = args.seed
            seed_source = "override"
        table = load_csv(args.input)
    except (InputError, ParameterError) as exc:
        return _fail(str(exc), EXIT_VALIDATION)
    except OSError as exc:
        return _fail(str(exc), EXIT_IO)

    for warning in config.warnings:
        print(f"privtab: warning: {warning}", file=sys.stderr)

    violations = validate(config, table)
    if violations:
        for v in violations:
            print(f"privtab: {v}", file=sys.stderr)
        only_budget = all(v.kind == "budget" for v in violations)
        return EXIT_BUDGET if only_budget else EXIT_VALIDATION

    try:
        pii_key = _resolve_pii_key(args.key_file)
        processed, manifest, ledger = execute(
            config, table, workers=args.workers, pii_key=pii_key
        )
        manifest.seed_source = seed_source
    except BudgetExhaustedError as exc:
        return _fail(str(exc), EXIT_BUDGET)
    except (InputError, ParameterError) as exc:
        return _fail(str(exc), EXIT_VALIDATION)
    except OSError as exc:
        return _fail(str(exc), EXIT_IO)

    out_path = Path(args.output)
    manifest_path = Path(args.manifest) if args.manifest else out_path.with_suffix(out_path.suffix + ".manifest.json")
    report_path = Path(args.report) if args.report else out_path.with_suffix(out_path.suffix + ".report.json")
    try:
        report = build_report(
            table, processed, binnings=manifest.binnings(), manifest_digest=manifest.digest()
        )
        # render everything before touching disk so a failure emits nothing
        artifacts = [
            (out_path, to_csv_bytes(processed)),
            (manifest_path, manifest.to_json().encode("utf-8")),
            (manifest_path.with_suffix(".txt"), manifest.to_text().encode("utf-8")),
            (report_path, report.to_json().encode("utf-8")),
            (report_path.with_suffix(".txt"), report.to_text().encode("utf-8")),
        ]
        for path, data in artifacts:
            _atomic_write(path, data)
    except OSError as exc:
        return _fail(str(exc), EXIT_IO)

    print(f"wrote {out_path} (digest {manifest.output_digest})")
    print(
        f"privacy spend: epsilon={ledger.spent_epsilon:.6g} delta={ledger.spent_delta:.6g} "
        f"of budget epsilon={ledger.budget.epsilon:.6g} delta={ledger.budget.delta:.6g}"
    )
    if ledger.entries():
        print(ledger.audit_log())
    return EXIT_OK


def _parse_query_file(path: str) -> tuple[QuerySpec, PrivacyParams | None]:
    try:
        data = json.loads(Path(path).read_text("utf-8"))
    except json.JSONDecodeError as exc:
        raise InputError(f"query file {path}: invalid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise InputError("query file must hold a JSON object")
    allowed = {"budget", "kind", "column", "predicate", "bounds", "bins", "mechanism",
               "epsilon", "delta", "sensitivity", "clamp_nonnegative"}
    unknown = sorted(set(data) - allowed)
    if unknown:
        raise InputError(f"query file has unknown key(s): {unknown}")
    if "kind" not in data:
        raise InputError("query file is missing the 'kind' key")
    try:
        return _build_query_spec(data)
    except InputError:
        raise
    except (TypeError, ValueError, KeyError) as exc:
        raise InputError(f"bad query spec: {exc}") from exc


def _build_query_spec(data: dict) -> tuple[QuerySpec, PrivacyParams | None]:
    budget = None
    if "budget" in data:
        raw = data["budget"]
        if not isinstance(raw, dict) or "epsilon" not in raw:
            raise InputError("query key 'budget' must be an object with at least 'epsilon'")
        budget = PrivacyParams(epsilon=float(raw["epsilon"]), delta=float(raw.get("delta", 0.0)))

    predicate = None
    if data.get("predicate") is not None:
        raw = data["predicate"]
        for key in ("column", "op", "value"):
            if key not in raw:
                raise InputError(f"query key 'predicate' is missing {key!r}")
        predicate = Predicate(raw["column"], raw["op"], raw["value"])

    bins = None
    if data.get("bins") is not None:
        raw = data["bins"]
        if not isinstance(raw, dict) or "edges" not in raw or "labels" not in raw:
            raise InputError("query key 'bins' must be an object with 'edges' and 'labels'")
        bins = BinningScheme(tuple(raw["edges"]), tuple(raw["labels"]))

    bounds = None
    if data.get("bounds") is not None:
        raw = data["bounds"]
        if not isinstance(raw, (list, tuple)) or len(raw) != 2:
            raise InputError("query key 'bounds' must be a [lo, hi] pair")
        bounds = (float(raw[0]), float(raw[1]))

    params = PrivacyParams(
        epsilon=float(data.get("epsilon", 1.0)),
        delta=float(data.get("delta", 0.0)),
        sensitivity=float(data.get("sensitivity", 1.0)),
    )
    spec = QuerySpec(
        kind=data["kind"],
        column=data.get("column", ""),
        predicate=predicate,
        value_bounds=bounds,
        bins=bins,
        mechanism=data.get("mechanism", "laplace"),
        params=params,
        clamp_nonnegative=bool(data.get("clamp_nonnegative", False)),
    )
    return spec, budget


class _LedgerFile:
    """Persisted ledger with an advisory lock serializing CLI invocations."""

    def __init__(self, path: Path, default_budget: PrivacyParams | None):
        self.path = path
        self.default_budget = default_budget
        self._lock_handle = None

    def __enter__(self) -> PrivacyLedger:
        import fcntl

        self._lock_handle = open(self.path.with_suffix(self.path.suffix + ".lock"), "w")
        try:
            fcntl.flock(self._lock_handle, fcntl.LOCK_EX | fcntl.LOCK_NB)
        except OSError:
            self._lock_handle.close()
            self._lock_handle = None
            raise OSError(f"ledger {self.path} is locked by another invocation")
        try:
            if self.path.exists():
                try:
                    data = json.loads(self.path.read_text("utf-8"))
                    budget = PrivacyParams(
                        epsilon=float(data["budget"]["epsilon"]),
                        delta=float(data["budget"].get("delta", 0.0)),
                    )
                    ledger = PrivacyLedger(budget)
                    for entry in data.get("entries", []):
                        ledger.charge(entry["label"], float(entry["epsilon"]), float(entry["delta"]))
                except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                    raise InputError(f"ledger file {self.path} is not a valid ledger: {exc}") from exc
            else:
                if self.default_budget is None:
                    raise InputError(
                        f"ledger {self.path} does not exist; the query file must declare a budget"
                    )
                ledger = PrivacyLedger(self.default_budget)
        except BaseException:
            self._lock_handle.close()
            self._lock_handle = None
            raise
        self.ledger = ledger
        return ledger

    def save(self) -> None:
        payload = {
            "budget": {"epsilon": self.ledger.budget.epsilon, "delta": self.ledger.budget.delta},
            "entries": [
                {"label": e.label, "epsilon": e.epsilon, "delta": e.delta}
                for e in self.ledger.entries()
            ],
        }
        _atomic_write(self.path, json.dumps(payload, indent=2).encode("utf-8"))

    def __exit__(self, *exc_info) -> None:
        if self._lock_handle is not None:
            self._lock_handle.close()
            self._lock_handle = None


def cmd_query(args) -> int:
    try:
        if args.ledger:
            _check_distinct_output([args.input, args.query], args.ledger)
        spec, budget = _parse_query_file(args.query)
        table = load_csv(args.input)
    except (InputError, ParameterError) as exc:
        return _fail(str(exc), EXIT_VALIDATION)
    except OSError as exc:
        return _fail(str(exc), EXIT_IO)

    seed = args.seed if args.seed is not None else 0
    src = RandomSource(seed, derive_stream_id(f"query:{spec.kind.value}:{spec.column}", 0))

    try:
        if args.ledger:
            ledger_file = _LedgerFile(Path(args.ledger), budget)
            with ledger_file as ledger:
                result = run_query(table, spec, ledger, src)
                ledger_file.save()
        else:
            if budget is None:
                budget = spec.params
            ledger = PrivacyLedger(budget)
            result = run_query(table, spec, ledger, src)
    except BudgetExhaustedError as exc:
        return _fail(str(exc), EXIT_BUDGET)
    except (InputError, ParameterError) as exc:
        return _fail(str(exc), EXIT_VALIDATION)
    except OSError as exc:
        return _fail(str(exc), EXIT_IO)

    sys.stdout.write(result.to_text())
    return EXIT_OK


def cmd_report(args) -> int:
    try:
        inputs = [args.original, args.processed]
        for out in (args.json, args.text):
            if out:
                _check_distinct_output(inputs, out)
        original = load_csv(args.original)
        processed = load_csv(args.processed)
        binnings = {}
        manifest_digest = None
        if args.manifest:
            raw = Path(args.manifest).read_bytes()
            data = json.loads(raw.decode("utf-8"))
            for step in data.get("steps", []):
                if step.get("technique") == "bin":
                    binnings[step["column"]] = BinningScheme(
                        tuple(step["params"]["edges"]), tuple(step["params"]["labels"])
                    )
            manifest_digest = hashlib.sha256(raw).hexdigest()
        report = build_report(original, processed, binnings=binnings, manifest_digest=manifest_digest)
    except (InputError, ParameterError, json.JSONDecodeError, KeyError, TypeError) as exc:
        return _fail(f"cannot build report: {exc}", EXIT_VALIDATION)
    except OSError as exc:
        return _fail(str(exc), EXIT_IO)

    try:
        if args.json:
            _atomic_write(Path(args.json), report.to_json().encode("utf-8"))
        if args.text:
            _atomic_write(Path(args.text), report.to_text().encode("utf-8"))
    except OSError as exc:
        return _fail(str(exc), EXIT_IO)
    sys.stdout.write(report.to_text())
    return EXIT_OK


def cmd_pii_scan(args) -> int:
    try:
        table = load_csv(args.input)
    except (InputError, ParameterError) as exc:
        return _fail(str(exc), EXIT_VALIDATION)
    except OSError as exc:
        return _fail(str(exc), EXIT_IO)
    wanted = args.columns.split(",") if args.columns else table.column_names()
    detectors = default_detectors()
    for name in wanted:
        if not table.has_column(name):
            return _fail(f"no such column: {name!r}", EXIT_VALIDATION)
        counts: dict[str, int] = {}
        cells_with_pii = 0
        for cell in table.column(name).cells:
            if cell is None:
                continue
            entities = detect_pii(str(cell), detectors)
            if entities:
                cells_with_pii += 1
            for ent in entities:
                counts[ent.kind.value] = counts.get(ent.kind.value, 0) + 1
        summary = " ".join(f"{k}={v}" for k, v in sorted(counts.items())) or "none"
        print(f"{name}: cells_with_pii={cells_with_pii} {summary}")
    return EXIT_OK


def cmd_validate(args) -> int:
    try:
        config = PipelineConfig.from_file(args.config)
        table = load_csv(args.input)
    except (InputError, ParameterError) as exc:
        return _fail(str(exc), EXIT_VALIDATION)
    except OSError as exc:
        return _fail(str(exc), EXIT_IO)
    for warning in config.warnings:
        print(f"privtab: warning: {warning}", file=sys.stderr)
    violations = validate(config, table)
    for v in violations:
        print(str(v))
    if violations:
        return EXIT_VALIDATION
    print("ok")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="privtab",
        description="Deterministic privacy-preserving perturbation for tabular CSV data.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("perturb", help="run a perturbation pipeline over a CSV")
    p.add_argument("--config", required=True, help="pipeline config (JSON)")
    p.add_argument("--input", required=True, help="input CSV (never modified)")
    p.add_argument("--output", required=True, help="output CSV path")
    p.add_argument("--manifest", help="manifest path (default: <output>.manifest.json)")
    p.add_argument("--report", help="fidelity report path (default: <output>.report.json)")
    p.add_argument("--seed", type=int, help="override the config's master seed")
    p.add_argument("--workers", type=int, default=1, help="parallel column workers")
    p.add_argument("--key-file", help="file holding the PII secret (or set PRIVTAB_PII_KEY)")
    p.set_defaults(func=cmd_perturb)

    q = sub.add_parser("query", help="run one differentially private query")
    q.add_argument("--input", required=True, help="input CSV")
    q.add_argument("--query", required=True, help="query spec (JSON)")
    q.add_argument("--ledger", help="persisted ledger file (advisory-locked)")
    q.add_argument("--seed", type=int, help="seed for the query's noise stream")
    q.set_defaults(func=cmd_query)

    r = sub.add_parser("report", help="fidelity report comparing two CSVs")
    r.add_argument("--original", required=True)
    r.add_argument("--processed", required=True)
    r.add_argument("--manifest", help="manifest from the perturb run (recovers bin schemes)")
    r.add_argument("--json", help="write the machine-readable report here")
    r.add_argument("--text", help="write the human-readable report here")
    r.set_defaults(func=cmd_report)

    s = sub.add_parser("pii-scan", help="count detected PII per column (prints no surfaces)")
    s.add_argument("--input", required=True)
    s.add_argument("--columns", help="comma-separated subset of columns")
    s.set_defaults(func=cmd_pii_scan)

    v = sub.add_parser("validate", help="check a config against a CSV without running it")
    v.add_argument("--config", required=True)
    v.add_argument("--input", required=True)
    v.set_defaults(func=cmd_validate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except PrivtabError as exc:
        return _fail(str(exc), EXIT_VALIDATION)


if __name__ == "__main__":
    raise SystemExit(main())
