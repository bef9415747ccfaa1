"""Differential-privacy mechanisms and a sequential-composition budget ledger.

Mechanisms are pure functions of (inputs, RandomSource); the ledger is the
single mutable object and serializes charges under a lock. Composition is
basic sequential composition: total spend is the coordinate-wise sum of
per-operation (epsilon, delta) charges.
"""

from __future__ import annotations

import logging
import math
import threading
from dataclasses import dataclass

import numpy as np

from .errors import (
    BudgetExhaustedError,
    InputError,
    MechanismMismatchError,
    ParameterError,
)
from .rng import RandomSource, sample_laplace, sample_two_sided_geometric

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class PrivacyParams:
    """Formal privacy parameters: budget (epsilon, delta) and query sensitivity."""

    epsilon: float
    delta: float = 0.0
    sensitivity: float = 1.0

    def __post_init__(self):
        if self.epsilon <= 0:
            raise ParameterError(f"epsilon must be positive, got {self.epsilon}")
        if not 0.0 <= self.delta < 1.0:
            raise ParameterError(f"delta must lie in [0, 1), got {self.delta}")
        if self.sensitivity <= 0:
            raise ParameterError(f"sensitivity must be positive, got {self.sensitivity}")


@dataclass(frozen=True)
class LedgerEntry:
    label: str
    epsilon: float
    delta: float


class PrivacyLedger:
    """Running account of privacy spend under sequential composition.

    A charge is appended iff the cumulative spend stays within the budget in
    both coordinates; otherwise it is rejected atomically (the ledger is left
    unchanged). Charges must be serialized; this class locks internally.
    """

    def __init__(self, budget: PrivacyParams):
        self.budget = budget
        self._entries: list[LedgerEntry] = []
        self._spent_epsilon = 0.0
        self._spent_delta = 0.0
        self._lock = threading.Lock()

    @property
    def spent_epsilon(self) -> float:
        return self._spent_epsilon

    @property
    def spent_delta(self) -> float:
        return self._spent_delta

    @property
    def remaining_epsilon(self) -> float:
        return self.budget.epsilon - self.spent_epsilon

    @property
    def remaining_delta(self) -> float:
        return self.budget.delta - self.spent_delta

    def entries(self) -> tuple[LedgerEntry, ...]:
        return tuple(self._entries)

    def charge(self, label: str, epsilon: float, delta: float = 0.0) -> LedgerEntry:
        """Record a spend of (epsilon, delta) for the labeled operation.

        Raises BudgetExhaustedError (naming only the label and the remaining
        budget) when the charge would overrun either coordinate.
        """
        if epsilon < 0 or delta < 0:
            raise ParameterError(f"charges must be non-negative, got ({epsilon}, {delta})")
        with self._lock:
            if (
                self._spent_epsilon + epsilon > self.budget.epsilon
                or self._spent_delta + delta > self.budget.delta
            ):
                raise BudgetExhaustedError(
                    label,
                    self.budget.epsilon - self._spent_epsilon,
                    self.budget.delta - self._spent_delta,
                )
            entry = LedgerEntry(label, epsilon, delta)
            self._entries.append(entry)
            self._spent_epsilon += epsilon
            self._spent_delta += delta
            return entry

    def audit_log(self) -> str:
        """Tab-separated audit lines: label, charge, and cumulative spend."""
        lines = []
        cum_eps = 0.0
        cum_del = 0.0
        for e in self._entries:
            cum_eps += e.epsilon
            cum_del += e.delta
            lines.append(f"{e.label}\t{e.epsilon!r}\t{e.delta!r}\t{cum_eps!r}\t{cum_del!r}")
        return "\n".join(lines)


def laplace_mechanism(true_value: float, params: PrivacyParams, src: RandomSource) -> float:
    """true_value + Laplace(0, sensitivity/epsilon); pure epsilon-DP."""
    if params.delta != 0:
        raise MechanismMismatchError(
            f"laplace mechanism is pure-DP; delta must be 0, got {params.delta}"
        )
    b = params.sensitivity / params.epsilon
    return float(true_value + sample_laplace(src, 0.0, b, 1)[0])


def gaussian_sigma(params: PrivacyParams) -> float:
    """Calibrated standard deviation: sensitivity * sqrt(2 ln(1.25/delta)) / epsilon."""
    if params.delta <= 0:
        raise MechanismMismatchError(
            f"gaussian mechanism needs delta in (0, 1), got {params.delta}"
        )
    return params.sensitivity * math.sqrt(2.0 * math.log(1.25 / params.delta)) / params.epsilon


def gaussian_mechanism(
    true_value: float, params: PrivacyParams, src: RandomSource, strict: bool = True
) -> float:
    """true_value + N(0, sigma^2) at the calibrated sigma; (epsilon, delta)-DP.

    The classical calibration analysis requires epsilon <= 1. In strict mode
    larger epsilons are rejected; otherwise they are allowed with a warning.
    """
    sigma = gaussian_sigma(params)
    if params.epsilon > 1.0:
        if strict:
            raise ParameterError(
                f"gaussian mechanism calibration requires epsilon <= 1, got {params.epsilon} "
                "(use permissive mode to override)"
            )
        logger.warning(
            "gaussian mechanism used with epsilon=%s > 1; classical calibration bound "
            "does not cover this regime",
            params.epsilon,
        )
    return float(true_value + sigma * src.standard_normal(1)[0])


def geometric_mechanism(true_count: int, epsilon: float, src: RandomSource) -> int:
    """true_count + two-sided geometric noise; epsilon-DP for counts (sensitivity 1).

    Output support is all integers; negative noisy counts are returned as-is
    (clamping is the caller's post-processing choice).
    """
    if epsilon <= 0:
        raise ParameterError(f"epsilon must be positive, got {epsilon}")
    return int(true_count + sample_two_sided_geometric(src, epsilon, 1)[0])


@dataclass(frozen=True)
class ScoredCandidate:
    """A candidate output together with its utility score."""

    value: object
    score: float


def _selection_weights(candidates: list[ScoredCandidate], params: PrivacyParams) -> list[float]:
    if not candidates:
        raise InputError("candidate list must be nonempty")
    scores = [c.score for c in candidates]
    top = max(scores)
    if not math.isfinite(top) or not math.isfinite(min(scores)):
        raise InputError("candidate scores must all be finite")
    k = params.epsilon / (2.0 * params.sensitivity)
    return [math.exp(k * (s - top)) for s in scores]


def selection_probabilities(
    candidates: list[ScoredCandidate], params: PrivacyParams
) -> np.ndarray:
    """Normalized selection weights exp(epsilon * score / (2 * sensitivity)).

    Uses max-score subtraction, so the result is shift-invariant and stable
    for large scores.
    """
    weights = np.asarray(_selection_weights(candidates, params))
    return weights / weights.sum()


def exponential_mechanism(
    candidates: list[ScoredCandidate], params: PrivacyParams, src: RandomSource
) -> ScoredCandidate:
    """Select one candidate with probability proportional to exp(eps*q/(2*dq))."""
    weights = _selection_weights(candidates, params)
    u = float(src.uniform01(1)[0]) * sum(weights)
    acc = 0.0
    for candidate, weight in zip(candidates, weights):
        acc += weight
        if u < acc:
            return candidate
    return candidates[-1]


@dataclass
class RandomizedResponseResult:
    """Perturbed responses plus the de-randomized prevalence estimate.

    ``estimate`` is clamped to [0, 1] for reporting; ``raw_estimate`` keeps
    the unclamped unbiased value.
    """

    responses: np.ndarray
    estimate: float
    raw_estimate: float


def randomized_response(
    true_answers, p_truth: float, src: RandomSource
) -> RandomizedResponseResult:
    """Forced-response randomized response over boolean answers.

    Each respondent answers truthfully with probability p_truth and otherwise
    gives a fair random answer. With lam the observed "yes" fraction, the
    unbiased prevalence estimate is (lam - (1 - p_truth)/2) / p_truth.
    """
    if not 0.5 < p_truth <= 1.0:
        raise ParameterError(
            f"p_truth must lie in (0.5, 1]; got {p_truth} (estimator degenerates at or below 1/2)"
        )
    answers = np.asarray(true_answers, dtype=bool)
    if answers.size == 0:
        raise InputError("true_answers must be nonempty")
    n = answers.size
    tell_truth = src.uniform01(n) < p_truth
    random_answer = src.uniform01(n) < 0.5
    responses = np.where(tell_truth, answers, random_answer)
    lam = float(responses.mean())
    raw = (lam - (1.0 - p_truth) / 2.0) / p_truth
    return RandomizedResponseResult(responses, min(1.0, max(0.0, raw)), raw)
