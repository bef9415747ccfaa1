"""Deterministic privacy-preserving perturbation engine for tabular data.

Library surface: seedable noise samplers, differential-privacy mechanisms
with a budget ledger, per-column transforms, format-preserving PII
substitution, a config-driven pipeline, fidelity metrics, and one-shot DP
queries. The ``privtab`` command exposes the batch frontend.
"""

from .errors import (
    BudgetExhaustedError,
    CsvFormatError,
    FactorizationError,
    InputError,
    InternalConsistencyError,
    MechanismMismatchError,
    ParameterError,
    PrivtabError,
)
from .fidelity import (
    FidelityReport,
    build_report,
    chi2_categorical,
    correlation_delta,
    ks_two_sample,
    moment_deltas,
)
from .mechanisms import (
    LedgerEntry,
    PrivacyLedger,
    PrivacyParams,
    RandomizedResponseResult,
    ScoredCandidate,
    exponential_mechanism,
    gaussian_mechanism,
    gaussian_sigma,
    geometric_mechanism,
    laplace_mechanism,
    randomized_response,
)
from .pii import (
    FauxMapping,
    FauxMode,
    PiiEntity,
    PiiKind,
    default_detectors,
    detect_pii,
    generate_faux,
    information_loss,
    load_regex_detectors,
    luhn_valid,
    preassign,
    transform_cell,
)
from .pipeline import (
    ExecutionManifest,
    PipelineConfig,
    Technique,
    TransformSpec,
    Violation,
    execute,
    validate,
)
from .queries import Predicate, QueryKind, QueryMechanism, QueryResult, QuerySpec, run_query
from .rng import (
    NoiseFamily,
    NoiseSpec,
    RandomSource,
    cholesky_correlated_noise,
    derive_stream_id,
    sample_cauchy,
    sample_gaussian,
    sample_laplace,
    sample_two_sided_geometric,
    sample_uniform,
)
from .table import Column, ColumnKind, ColumnSchema, Table, load_csv, write_csv
from .transforms import (
    OUT_OF_RANGE,
    BinningScheme,
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
    scale_by_factors,
)

__version__ = "0.1.0"
