"""Seedable noise samplers with independent per-column streams.

All randomness flows through :class:`RandomSource`, a thin wrapper around
numpy's counter-based Philox generator keyed by (master_seed, stream_id).
Identical keys reproduce identical sequences bit for bit; distinct stream
ids yield statistically independent streams, so per-column work can run in
parallel without changing results.

Continuous samplers are not hardened against floating-point side channels
(no snapping or discretization); this is a documented limitation.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .errors import FactorizationError, ParameterError

_U64 = 2**64
_TINY = np.finfo(np.float64).tiny


def derive_stream_id(column_name: str, op_index: int) -> int:
    """Stable 64-bit stream id for (column, step).

    Depends only on the column name and step index, never on column order,
    so reordering columns in a file cannot change any sampled noise.
    """
    h = hashlib.blake2b(digest_size=8)
    h.update(column_name.encode("utf-8"))
    h.update(b"\x00")
    h.update(int(op_index).to_bytes(8, "little", signed=False))
    return int.from_bytes(h.digest(), "little")


class RandomSource:
    """Deterministic random stream keyed by (master_seed, stream_id).

    Immutable after construction except for the stream cursor: drawing
    samples advances internal state. Do not share one instance between
    threads concurrently; create per-stream instances instead.
    """

    def __init__(self, master_seed: int, stream_id: int = 0):
        if not 0 <= int(master_seed) < _U64:
            raise ParameterError(f"master_seed must be a 64-bit unsigned integer, got {master_seed}")
        if not 0 <= int(stream_id) < _U64:
            raise ParameterError(f"stream_id must be a 64-bit unsigned integer, got {stream_id}")
        self.master_seed = int(master_seed)
        self.stream_id = int(stream_id)
        seq = np.random.SeedSequence(entropy=self.master_seed, spawn_key=(self.stream_id,))
        self._gen = np.random.Generator(np.random.Philox(seq))

    def stream(self, column_name: str, op_index: int) -> "RandomSource":
        """Fresh source for (column, step) under the same master seed."""
        return RandomSource(self.master_seed, derive_stream_id(column_name, op_index))

    def uniform01(self, n: int | tuple[int, ...]) -> np.ndarray:
        """i.i.d. uniforms in [0, 1)."""
        return self._gen.random(n)

    def standard_normal(self, n: int | tuple[int, ...]) -> np.ndarray:
        return self._gen.standard_normal(n)

    def integers(self, low: int, high: int, n: int) -> np.ndarray:
        """i.i.d. integers in [low, high)."""
        return self._gen.integers(low, high, size=n)

    def __repr__(self) -> str:
        return f"RandomSource(master_seed={self.master_seed}, stream_id={self.stream_id})"


def _require_count(n: int) -> None:
    if n < 1:
        raise ParameterError(f"sample count must be >= 1, got {n}")


def sample_laplace(src: RandomSource, location: float, scale: float, n: int) -> np.ndarray:
    """Draw n i.i.d. Laplace(location, scale) values by inverse CDF.

    With u uniform on (-1/2, 1/2): x = location - scale * sign(u) * ln(1 - 2|u|).
    Branch-free; the log argument is clamped away from zero so the draw at
    the measure-zero endpoint stays finite.
    """
    if scale <= 0:
        raise ParameterError(f"laplace scale must be positive, got {scale}")
    _require_count(n)
    u = src.uniform01(n) - 0.5
    return location - scale * np.sign(u) * np.log(np.maximum(1.0 - 2.0 * np.abs(u), _TINY))


def sample_gaussian(src: RandomSource, mean: float, sigma: float, n: int) -> np.ndarray:
    """Draw n i.i.d. Normal(mean, sigma^2) values."""
    if sigma <= 0:
        raise ParameterError(f"gaussian sigma must be positive, got {sigma}")
    _require_count(n)
    return mean + sigma * src.standard_normal(n)


def sample_uniform(src: RandomSource, lo: float, hi: float, n: int) -> np.ndarray:
    """Draw n i.i.d. uniforms in [lo, hi)."""
    if not lo < hi:
        raise ParameterError(f"uniform bounds must satisfy lo < hi, got [{lo}, {hi})")
    _require_count(n)
    return lo + (hi - lo) * src.uniform01(n)


def sample_cauchy(src: RandomSource, location: float, scale: float, n: int) -> np.ndarray:
    """Draw n i.i.d. Cauchy(location, scale) values via the tangent of a uniform angle.

    Heavy-tailed: no finite mean or variance exists, so downstream code must
    never average these draws as a check.
    """
    if scale <= 0:
        raise ParameterError(f"cauchy scale must be positive, got {scale}")
    _require_count(n)
    u = src.uniform01(n)
    return location + scale * np.tan(np.pi * (u - 0.5))


def sample_two_sided_geometric(src: RandomSource, epsilon: float, n: int) -> np.ndarray:
    """Draw n integers from the two-sided geometric distribution.

    P(k) = (1 - e^-eps) / (1 + e^-eps) * e^(-eps*|k|) over all integers k.
    Sampling inverts the closed-form CDF: with q = e^-eps,
    F(k) = q^(-k) / (1+q) for k <= -1 and F(k) = 1 - q^(k+1) / (1+q) for k >= 0.
    """
    if epsilon <= 0:
        raise ParameterError(f"epsilon must be positive, got {epsilon}")
    _require_count(n)
    q = math.exp(-epsilon)
    u = np.maximum(src.uniform01(n), _TINY)
    if q == 0.0:
        # epsilon so large that all mass sits at zero
        return np.zeros(n, dtype=np.int64)
    lnq = -epsilon
    out = np.empty(n, dtype=np.int64)
    neg = u <= q / (1.0 + q)
    out[neg] = -np.floor(np.log(u[neg] * (1.0 + q)) / lnq).astype(np.int64)
    out[~neg] = np.maximum(
        0, np.ceil(np.log((1.0 - u[~neg]) * (1.0 + q)) / lnq - 1.0)
    ).astype(np.int64)
    return out


def _failing_leading_minor(matrix: np.ndarray) -> int:
    for k in range(1, matrix.shape[0] + 1):
        try:
            np.linalg.cholesky(matrix[:k, :k])
        except np.linalg.LinAlgError:
            return k
    return matrix.shape[0]


def cholesky_factor(covariance: np.ndarray) -> np.ndarray:
    """Lower-triangular L with L @ L.T == covariance.

    Raises FactorizationError naming the first failing leading minor when
    the matrix is not symmetric positive-definite.
    """
    cov = np.asarray(covariance, dtype=np.float64)
    if cov.ndim != 2 or cov.shape[0] != cov.shape[1]:
        raise ParameterError(f"covariance must be a square matrix, got shape {cov.shape}")
    if not np.allclose(cov, cov.T, rtol=0.0, atol=1e-12):
        raise ParameterError("covariance matrix must be symmetric")
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        minor = _failing_leading_minor(cov)
        raise FactorizationError(
            f"covariance is not positive definite: leading minor of order {minor} failed",
            minor=minor,
        ) from None


def cholesky_correlated_noise(src: RandomSource, covariance: np.ndarray, n: int) -> np.ndarray:
    """Draw n rows of zero-mean multivariate normal noise with the given covariance.

    Each row is L @ z with L the Cholesky factor and z standard normal.
    """
    _require_count(n)
    L = cholesky_factor(covariance)
    z = src.standard_normal((n, L.shape[0]))
    return z @ L.T


class NoiseFamily(str, Enum):
    LAPLACE = "laplace"
    GAUSSIAN = "gaussian"
    UNIFORM = "uniform"
    CAUCHY = "cauchy"
    GEOMETRIC_TWO_SIDED = "geometric_two_sided"
    CHOLESKY_CORRELATED = "cholesky_correlated"


CONTINUOUS_FAMILIES = frozenset(
    {NoiseFamily.LAPLACE, NoiseFamily.GAUSSIAN, NoiseFamily.UNIFORM, NoiseFamily.CAUCHY}
)


@dataclass
class NoiseSpec:
    """One configured noise distribution.

    ``scale`` is family-specific: Laplace b, Gaussian sigma, Cauchy scale.
    ``bounds`` applies to the uniform family, ``epsilon`` to the two-sided
    geometric, ``covariance`` to Cholesky-correlated noise.
    """

    family: NoiseFamily
    location: float = 0.0
    scale: float = 1.0
    bounds: tuple[float, float] | None = None
    epsilon: float | None = None
    covariance: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        self.family = NoiseFamily(self.family)
        if self.family in (NoiseFamily.LAPLACE, NoiseFamily.GAUSSIAN, NoiseFamily.CAUCHY):
            if self.scale <= 0:
                raise ParameterError(f"{self.family.value} scale must be positive, got {self.scale}")
        elif self.family is NoiseFamily.UNIFORM:
            if self.bounds is None:
                raise ParameterError("uniform noise requires bounds=(lo, hi)")
            lo, hi = self.bounds
            if not lo < hi:
                raise ParameterError(f"uniform bounds must satisfy lo < hi, got [{lo}, {hi})")
        elif self.family is NoiseFamily.GEOMETRIC_TWO_SIDED:
            if self.epsilon is None or self.epsilon <= 0:
                raise ParameterError(f"geometric noise requires epsilon > 0, got {self.epsilon}")
        elif self.family is NoiseFamily.CHOLESKY_CORRELATED:
            if self.covariance is None:
                raise ParameterError("cholesky noise requires a covariance matrix")
            cholesky_factor(self.covariance)  # validates SPD


def sample(spec: NoiseSpec, src: RandomSource, n: int) -> np.ndarray:
    """Draw n values (or an n x d matrix for correlated noise) from the configured family."""
    if spec.family is NoiseFamily.LAPLACE:
        return sample_laplace(src, spec.location, spec.scale, n)
    if spec.family is NoiseFamily.GAUSSIAN:
        return sample_gaussian(src, spec.location, spec.scale, n)
    if spec.family is NoiseFamily.UNIFORM:
        lo, hi = spec.bounds
        return sample_uniform(src, lo, hi, n)
    if spec.family is NoiseFamily.CAUCHY:
        return sample_cauchy(src, spec.location, spec.scale, n)
    if spec.family is NoiseFamily.GEOMETRIC_TWO_SIDED:
        return sample_two_sided_geometric(src, spec.epsilon, n)
    if spec.family is NoiseFamily.CHOLESKY_CORRELATED:
        return cholesky_correlated_noise(src, spec.covariance, n)
    raise ParameterError(f"unknown noise family: {spec.family}")
