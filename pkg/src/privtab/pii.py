"""PII detection and format-preserving faux substitution.

Detection is deliberately pattern/dictionary based (regex for phone, card,
email and street numbers; curated name lists for person names): deterministic,
dependency-light, with recall measured on a labeled mini-corpus rather than
claimed. Replacement generates plausible fake values that keep the surface
format: per-position character classes for phones/cards/emails, Luhn-valid
digits for cards, dictionary names with the original case pattern.

The secret key never travels on a command line; it is provided via an
environment variable or a key file.
"""

from __future__ import annotations

import hashlib
import os
import re
from dataclasses import dataclass, field
from enum import Enum
from functools import lru_cache
from importlib import resources
from pathlib import Path

from .errors import InputError, ParameterError
from .rng import RandomSource

DEFAULT_KEY_ENV = "PRIVTAB_PII_KEY"

# issuer range reserved for national assignment; never a real card prefix
FAUX_CARD_PREFIX = "9999"


class PiiKind(str, Enum):
    PERSON_NAME = "person_name"
    PHONE = "phone"
    CREDIT_CARD = "credit_card"
    STREET_ADDRESS = "street_address"
    EMAIL = "email"


@dataclass(frozen=True)
class PiiEntity:
    kind: PiiKind
    start: int
    end: int
    surface: str

    @property
    def span(self) -> tuple[int, int]:
        return (self.start, self.end)


@dataclass(frozen=True)
class RegexDetector:
    kind: PiiKind
    pattern: re.Pattern

    def find(self, cell: str) -> list[PiiEntity]:
        return [
            PiiEntity(self.kind, m.start(), m.end(), m.group(0))
            for m in self.pattern.finditer(cell)
        ]


_CAP_WORD = re.compile(r"\b(?:[A-Z][a-z]+|[A-Z]{2,})\b")


class NameDetector:
    """Dictionary lookup of capitalized words; a known first name anchors the
    entity and a following known last name extends it."""

    kind = PiiKind.PERSON_NAME

    def __init__(self, first_names, last_names):
        self.first_names = frozenset(first_names)
        self.last_names = frozenset(last_names)
        self._extend = re.compile(r" ((?:[A-Z][a-z]+|[A-Z]{2,}))\b")

    def find(self, cell: str) -> list[PiiEntity]:
        out = []
        for m in _CAP_WORD.finditer(cell):
            if m.group(0).lower() not in self.first_names:
                continue
            end = m.end()
            follow = self._extend.match(cell, end)
            if follow is not None and follow.group(1).lower() in self.last_names:
                end = follow.end()
            out.append(PiiEntity(self.kind, m.start(), end, cell[m.start():end]))
        return out


@lru_cache(maxsize=None)
def _bundled_names(resource: str) -> tuple[str, ...]:
    text = resources.files("privtab.data").joinpath(resource).read_text("utf-8")
    return tuple(line.strip() for line in text.splitlines() if line.strip())


def default_name_lists() -> tuple[tuple[str, ...], tuple[str, ...]]:
    return _bundled_names("first_names.txt"), _bundled_names("last_names.txt")


_DETECTOR_LINE = re.compile(r"^(?P<kind>[a-z_]+)\s*=\s*(?P<pattern>.+)$")


def load_regex_detectors(path: str | Path | None = None) -> tuple[RegexDetector, ...]:
    """Regex detectors from a ``kind = pattern`` data file, in file order.

    Defaults to the bundled definitions. Blank lines and '#' comments are
    ignored.
    """
    if path is None:
        text = resources.files("privtab.data").joinpath("pii_detectors.txt").read_text("utf-8")
    else:
        text = Path(path).read_text("utf-8")
    detectors = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        m = _DETECTOR_LINE.match(line)
        if m is None:
            raise InputError(f"detector file line {lineno}: expected 'kind = pattern'")
        try:
            kind = PiiKind(m.group("kind"))
        except ValueError:
            raise InputError(
                f"detector file line {lineno}: unknown kind {m.group('kind')!r}"
            ) from None
        try:
            detectors.append(RegexDetector(kind, re.compile(m.group("pattern"))))
        except re.error as exc:
            raise InputError(f"detector file line {lineno}: bad pattern: {exc}") from exc
    return tuple(detectors)


@lru_cache(maxsize=1)
def default_detectors() -> tuple:
    """Ordered detector set; earlier detectors win ties on overlap."""
    first, last = default_name_lists()
    return load_regex_detectors() + (NameDetector(first, last),)


def detect_pii(cell: str, detectors=None) -> list[PiiEntity]:
    """Non-overlapping entities in the cell; earliest-longest match wins.

    Undetected PII is an accepted false-negative risk; recall is measured on
    the labeled corpus in the test suite, not guaranteed here.
    """
    if not cell:
        return []
    if detectors is None:
        detectors = default_detectors()
    candidates = []
    for priority, det in enumerate(detectors):
        for ent in det.find(cell):
            candidates.append((ent.start, -(ent.end - ent.start), priority, ent))
    candidates.sort(key=lambda t: t[:3])
    chosen: list[PiiEntity] = []
    last_end = -1
    for _, _, _, ent in candidates:
        if ent.start >= last_end:
            chosen.append(ent)
            last_end = ent.end
    return chosen


def luhn_check_digit(digits: str) -> int:
    """Check digit that makes digits + d pass the Luhn test."""
    total = 0
    for i, ch in enumerate(reversed(digits)):
        d = int(ch)
        if i % 2 == 0:  # positions counted with the coming check digit appended
            d *= 2
            if d > 9:
                d -= 9
        total += d
    return (10 - total % 10) % 10


def luhn_valid(digits: str) -> bool:
    if not digits.isdigit() or not digits:
        return False
    return luhn_check_digit(digits[:-1]) == int(digits[-1])


class FauxMode(str, Enum):
    CONSISTENT = "consistent"
    INDEPENDENT = "independent"


def _norm_key(kind: PiiKind, surface: str) -> str:
    if kind is PiiKind.PERSON_NAME:
        return " ".join(surface.split()).lower()
    return surface.lower()


@dataclass
class FauxMapping:
    """Keyed faux-value generator.

    Consistent mode derives all randomness from a keyed PRF over
    (kind, normalized surface), so one surface maps to one faux value across
    the whole dataset and across runs, with a deterministic nonce bump
    resolving cross-surface collisions (keeps joins on faux values faithful).
    Independent mode draws fresh values from the caller's RandomSource.
    """

    key: bytes = field(repr=False)  # secret; keep out of logs and tracebacks
    mode: FauxMode = FauxMode.CONSISTENT
    first_names: tuple[str, ...] = field(default=(), repr=False)
    last_names: tuple[str, ...] = field(default=(), repr=False)
    _assigned: dict = field(default_factory=dict, repr=False)
    _owners: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if not isinstance(self.key, bytes) or len(self.key) != 16:
            raise ParameterError("key must be exactly 16 bytes; use FauxMapping.from_secret")
        self.mode = FauxMode(self.mode)
        if not self.first_names or not self.last_names:
            first, last = default_name_lists()
            self.first_names = self.first_names or first
            self.last_names = self.last_names or last

    @classmethod
    def from_secret(cls, secret: str | bytes, mode: FauxMode = FauxMode.CONSISTENT) -> "FauxMapping":
        raw = secret.encode("utf-8") if isinstance(secret, str) else secret
        return cls(hashlib.blake2b(raw, digest_size=16).digest(), mode)

    @classmethod
    def from_env(cls, var: str = DEFAULT_KEY_ENV, mode: FauxMode = FauxMode.CONSISTENT) -> "FauxMapping":
        secret = os.environ.get(var)
        if not secret:
            raise ParameterError(f"environment variable {var} is not set or empty")
        return cls.from_secret(secret, mode)

    @classmethod
    def from_key_file(cls, path: str | Path, mode: FauxMode = FauxMode.CONSISTENT) -> "FauxMapping":
        secret = Path(path).read_bytes().strip()
        if not secret:
            raise ParameterError(f"key file {path} is empty")
        return cls.from_secret(secret, mode)

    def _prf_source(self, kind: PiiKind, norm: str, nonce: int) -> RandomSource:
        h = hashlib.blake2b(key=self.key, digest_size=8)
        h.update(kind.value.encode("utf-8"))
        h.update(b"\x00")
        h.update(norm.encode("utf-8"))
        h.update(b"\x00")
        h.update(nonce.to_bytes(8, "little"))
        return RandomSource(int.from_bytes(h.digest(), "little"))

    # nonce budget for distinct-from-other-surfaces candidates; past it the
    # injectivity preference is dropped (tiny faux spaces would loop forever)
    _UNIQUE_TRIES = 4096
    _TOTAL_TRIES = 8192

    def assign(self, kind: PiiKind, surface: str) -> str:
        """Canonical (lowercase-form) faux value for a surface in consistent mode."""
        norm = _norm_key(kind, surface)
        cached = self._assigned.get((kind, norm))
        if cached is not None:
            return cached
        nonce = 0
        while True:
            rng = self._prf_source(kind, norm, nonce)
            candidate = _generate_canonical(kind, norm, rng, self)
            nonce += 1
            if candidate == norm or (len(norm) >= 4 and norm in candidate):
                if nonce >= self._TOTAL_TRIES:
                    raise ParameterError(
                        f"cannot generate a {kind.value} faux value distinct from the surface"
                    )
                continue
            owner = self._owners.get((kind, candidate))
            if owner is not None and owner != norm and nonce < self._UNIQUE_TRIES:
                continue
            self._owners.setdefault((kind, candidate), norm)
            self._assigned[(kind, norm)] = candidate
            return candidate


_DIGITS = "0123456789"
_LOWER = "abcdefghijklmnopqrstuvwxyz"


def _pick(rng: RandomSource, alphabet: str) -> str:
    return alphabet[int(rng.uniform01(1)[0] * len(alphabet))]


def _rewrite_by_class(structure: str, rng: RandomSource, first_digit_alphabet: str | None = None) -> str:
    """Random rewrite preserving the per-position character class.

    Digits become digits, letters become lowercase letters, everything else
    is kept verbatim. The first digit position may use a restricted alphabet
    (e.g. no leading zero).
    """
    draws = rng.uniform01(len(structure))
    out = []
    first_digit_seen = False
    for ch, u in zip(structure, draws):
        if ch.isdigit():
            alphabet = _DIGITS
            if not first_digit_seen and first_digit_alphabet:
                alphabet = first_digit_alphabet
            first_digit_seen = True
            out.append(alphabet[int(u * len(alphabet))])
        elif ch.isalpha():
            out.append(_LOWER[int(u * len(_LOWER))])
        else:
            out.append(ch)
    return "".join(out)


def _faux_card(structure: str, rng: RandomSource) -> str:
    digit_positions = [i for i, ch in enumerate(structure) if ch.isdigit()]
    n = len(digit_positions)
    draws = rng.uniform01(max(n, 1))
    if n >= 8:
        prefix = FAUX_CARD_PREFIX
        middle = (_DIGITS[int(u * 10)] for u in draws[: n - len(prefix) - 1])
        digits = prefix + "".join(middle)
    else:
        digits = "".join(_DIGITS[int(u * 10)] for u in draws[: n - 1])
    digits += str(luhn_check_digit(digits))
    out = list(structure)
    for pos, d in zip(digit_positions, digits):
        out[pos] = d
    return "".join(out)


def _generate_canonical(kind: PiiKind, norm: str, rng: RandomSource, mapping: FauxMapping) -> str:
    if kind is PiiKind.PHONE:
        return _rewrite_by_class(norm, rng, first_digit_alphabet="23456789")
    if kind is PiiKind.EMAIL:
        return _rewrite_by_class(norm, rng)
    if kind is PiiKind.CREDIT_CARD:
        return _faux_card(norm, rng)
    if kind is PiiKind.STREET_ADDRESS:
        return _rewrite_by_class(norm, rng, first_digit_alphabet="123456789")
    if kind is PiiKind.PERSON_NAME:
        words = norm.split(" ")
        out = [_pick_name(rng, mapping.first_names)]
        for _ in words[1:]:
            out.append(_pick_name(rng, mapping.last_names))
        return " ".join(out)
    raise ParameterError(f"unsupported PII kind: {kind}")


def _pick_name(rng: RandomSource, names: tuple[str, ...]) -> str:
    return names[int(rng.integers(0, len(names), 1)[0])]


def _apply_case(canonical: str, surface: str, kind: PiiKind) -> str:
    if kind is PiiKind.PERSON_NAME:
        surface_words = surface.split()
        out = []
        for i, word in enumerate(canonical.split(" ")):
            ref = surface_words[i] if i < len(surface_words) else surface_words[-1]
            if ref.isupper():
                out.append(word.upper())
            elif ref.islower():
                out.append(word)
            else:
                out.append(word.capitalize())
        return " ".join(out)
    if len(canonical) == len(surface):
        return "".join(
            c.upper() if s.isupper() else c for c, s in zip(canonical, surface)
        )
    return canonical


def generate_faux(entity: PiiEntity, mapping: FauxMapping, src: RandomSource | None = None) -> str:
    """Plausible fake replacement for the entity, preserving its format.

    Consistent mode is a pure function of (key, kind, surface) modulo the
    mapping's collision registry; independent mode consumes draws from src.
    The output never equals the original surface and never contains it as a
    substring (for surfaces of length >= 4).
    """
    if not isinstance(entity.kind, PiiKind):
        raise ParameterError(f"unsupported PII kind: {entity.kind!r}")
    if mapping.mode is FauxMode.CONSISTENT:
        canonical = mapping.assign(entity.kind, entity.surface)
        return _apply_case(canonical, entity.surface, entity.kind)
    if src is None:
        raise ParameterError("independent mode requires a RandomSource")
    norm = _norm_key(entity.kind, entity.surface)
    for _ in range(64):
        candidate = _generate_canonical(entity.kind, norm, src, mapping)
        if candidate != norm and not (len(norm) >= 4 and norm in candidate):
            return _apply_case(candidate, entity.surface, entity.kind)
    raise ParameterError(
        f"could not satisfy the format constraints for a {entity.kind.value} surface"
    )


def transform_cell(
    cell: str | None,
    mapping: FauxMapping,
    src: RandomSource | None = None,
    detectors=None,
) -> tuple[str | None, list[tuple[PiiKind, tuple[int, int]]]]:
    """Replace every detected entity in place.

    Non-entity text is byte-identical in the output. The audit lists entity
    kinds and original-cell spans but never the original surfaces.
    """
    if cell is None:
        return None, []
    entities = detect_pii(cell, detectors)
    if not entities:
        return cell, []
    parts = []
    audit = []
    cursor = 0
    for ent in entities:
        parts.append(cell[cursor:ent.start])
        parts.append(generate_faux(ent, mapping, src))
        audit.append((ent.kind, ent.span))
        cursor = ent.end
    parts.append(cell[cursor:])
    return "".join(parts), audit


def preassign(mapping: FauxMapping, columns, detectors=None) -> int:
    """Assign consistent-mode faux values for all surfaces up front.

    Surfaces are assigned in sorted (kind, surface) order, making the
    collision-avoidance outcome independent of row, column, and worker
    order. Returns the number of distinct surfaces assigned.
    """
    if mapping.mode is not FauxMode.CONSISTENT:
        return 0
    if detectors is None:
        detectors = default_detectors()
    surfaces = set()
    for column in columns:
        for cell in column:
            if cell is None:
                continue
            for ent in detect_pii(str(cell), detectors):
                surfaces.add((ent.kind, _norm_key(ent.kind, ent.surface)))
    for kind, norm in sorted(surfaces, key=lambda t: (t[0].value, t[1])):
        mapping.assign(kind, norm)
    return len(surfaces)


def information_loss(original_col, transformed_col) -> float:
    """Fraction of characters altered across the column, in [0, 1].

    Positional comparison per cell: altered = max(len_o, len_t) minus the
    number of positions with equal characters; the column value is the
    altered total over the total of max lengths. A proxy measure, reported
    per column in the fidelity report.
    """
    if len(original_col) != len(transformed_col):
        raise InputError(
            f"column length mismatch: {len(original_col)} vs {len(transformed_col)}"
        )
    total = 0
    altered = 0
    for o, t in zip(original_col, transformed_col):
        if o is None and t is None:
            continue
        o_s = "" if o is None else str(o)
        t_s = "" if t is None else str(t)
        span = max(len(o_s), len(t_s))
        if span == 0:
            continue
        same = sum(1 for a, b in zip(o_s, t_s) if a == b)
        total += span
        altered += span - same
    return altered / total if total else 0.0
