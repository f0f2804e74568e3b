"""Self-consistency selection among candidate navigation descriptions.

Each candidate is reduced to its directional keywords, its distance values
(in meters) and its word set. Pairs are compared on all three, the scores are
mixed with fixed weights, and the candidate that agrees most with the others
wins.
"""

from __future__ import annotations

import math
import re
import string
from dataclasses import dataclass
from functools import lru_cache
from typing import Sequence

import numpy as np

from .candidates import CandidateSet
from .errors import EmptyCandidateSet, ValidationError

DEFAULT_KEYWORDS = ("left", "right", "straight", "u-turn", "merge", "exit", "roundabout")

UNIT_TO_METERS = {
    "m": 1.0, "meter": 1.0, "meters": 1.0, "metre": 1.0, "metres": 1.0,
    "km": 1000.0, "kilometer": 1000.0, "kilometers": 1000.0,
    "kilometre": 1000.0, "kilometres": 1000.0,
    "mi": 1609.34, "mile": 1609.34, "miles": 1609.34,
    "ft": 0.3048, "foot": 0.3048, "feet": 0.3048,
}

_UNITS = "|".join(sorted(UNIT_TO_METERS, key=len, reverse=True))
_DISTANCE_RE = re.compile(
    rf"(?<![\w.])(\d{{1,3}}(?:,\d{{3}})+(?:\.\d+)?|\d+(?:\.\d+)?|\.\d+)\s*({_UNITS})\b",
    re.IGNORECASE,
)


@lru_cache(maxsize=32)
def _keyword_regex(vocabulary: tuple[str, ...]) -> re.Pattern:
    alts = []
    for word in vocabulary:
        # "u-turn" should also match "U turn" and "uturn"
        alts.append(re.escape(word).replace(r"\-", r"[-\s]?"))
    return re.compile(rf"\b({'|'.join(alts)})s?\b", re.IGNORECASE)


def _canonical(match: str, vocabulary: tuple[str, ...]) -> str:
    flat = re.sub(r"[-\s]", "", match.lower())
    for word in vocabulary:
        if re.sub(r"[-\s]", "", word.lower()) == flat:
            return word
    raise AssertionError(match)


def extract_keywords(text: str, vocabulary: Sequence[str] = DEFAULT_KEYWORDS) -> list[str]:
    """Directional keywords in order of appearance, repeats kept."""
    vocab = tuple(vocabulary)
    return [_canonical(m.group(1), vocab) for m in _keyword_regex(vocab).finditer(text)]


def extract_distances(text: str) -> list[float]:
    """Numbers followed by a length unit, converted to meters, in order of appearance."""
    out = []
    for m in _DISTANCE_RE.finditer(text):
        value = float(m.group(1).replace(",", ""))
        out.append(value * UNIT_TO_METERS[m.group(2).lower()])
    return out


def tokenize(text: str) -> list[str]:
    """Lowercased whitespace tokens with surrounding punctuation stripped."""
    tokens = (tok.strip(string.punctuation) for tok in text.lower().split())
    return [tok for tok in tokens if tok]


def word_set(text: str) -> frozenset[str]:
    return frozenset(tokenize(text))


@dataclass(frozen=True)
class ExtractedFeatures:
    keywords: tuple[str, ...]
    distances_m: tuple[float, ...]
    words: frozenset[str]

    @classmethod
    def from_text(cls, text: str, vocabulary: Sequence[str] = DEFAULT_KEYWORDS) -> ExtractedFeatures:
        return cls(
            tuple(extract_keywords(text, vocabulary)),
            tuple(extract_distances(text)),
            word_set(text),
        )


@dataclass(frozen=True)
class SimilarityWeights:
    eta_inter: float = 0.5
    eta_dist: float = 0.3
    eta_word: float = 0.2

    def __post_init__(self) -> None:
        if not self.eta_word > 0:
            raise ValidationError("similarity weights must be positive")
        if not self.eta_inter > self.eta_dist > self.eta_word:
            raise ValidationError(
                "weights must satisfy eta_inter > eta_dist > eta_word, got "
                f"({self.eta_inter}, {self.eta_dist}, {self.eta_word})"
            )

    @property
    def total(self) -> float:
        return self.eta_inter + self.eta_dist + self.eta_word

    @classmethod
    def parse(cls, text: str) -> SimilarityWeights:
        """Parse ``"0.5,0.3,0.2"``."""
        try:
            parts = [float(p) for p in text.split(",")]
        except ValueError as exc:
            raise ValidationError(f"bad weights {text!r}") from exc
        if len(parts) != 3:
            raise ValidationError(f"expected three weights, got {text!r}")
        return cls(*parts)


def s_inter(a: ExtractedFeatures, b: ExtractedFeatures) -> float:
    return 1.0 if a.keywords == b.keywords else 0.0


def s_dist(a: ExtractedFeatures, b: ExtractedFeatures) -> float:
    if len(a.distances_m) != len(b.distances_m):
        return 0.0
    if not a.distances_m:
        return 1.0
    total = 0.0
    for x, y in zip(a.distances_m, b.distances_m):
        hi = max(x, y)
        total += 1.0 if hi == 0 else 1.0 - abs(x - y) / hi
    return total / len(a.distances_m)


def s_word(a: ExtractedFeatures, b: ExtractedFeatures) -> float:
    union = a.words | b.words
    if not union:
        return 1.0
    return len(a.words & b.words) / len(union)


def s_over(a: ExtractedFeatures, b: ExtractedFeatures, w: SimilarityWeights = SimilarityWeights()) -> float:
    return w.eta_inter * s_inter(a, b) + w.eta_dist * s_dist(a, b) + w.eta_word * s_word(a, b)


@dataclass(frozen=True, eq=False)
class SelectionReport:
    pairwise: np.ndarray
    cumulative: np.ndarray
    winner_index: int
    winner_text: str

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, SelectionReport):
            return NotImplemented
        return (
            self.winner_index == other.winner_index
            and self.winner_text == other.winner_text
            and np.array_equal(self.pairwise, other.pairwise)
            and np.array_equal(self.cumulative, other.cumulative)
        )

    def to_dict(self) -> dict:
        return {
            "pairwise": self.pairwise.tolist(),
            "cumulative": self.cumulative.tolist(),
            "winner": self.winner_index,
        }

    @classmethod
    def from_dict(cls, d: dict, texts: Sequence[str]) -> SelectionReport:
        winner = int(d["winner"])
        return cls(
            np.asarray(d["pairwise"], dtype=float).reshape(len(texts), len(texts)),
            np.asarray(d["cumulative"], dtype=float),
            winner,
            texts[winner],
        )


def select_best(
    candidates: CandidateSet | Sequence[str],
    w: SimilarityWeights = SimilarityWeights(),
    vocabulary: Sequence[str] = DEFAULT_KEYWORDS,
) -> SelectionReport:
    texts = list(candidates.texts if isinstance(candidates, CandidateSet) else candidates)
    if not texts:
        raise EmptyCandidateSet("no candidates to select from")
    feats = [ExtractedFeatures.from_text(t, vocabulary) for t in texts]
    n = len(feats)
    pairwise = np.zeros((n, n))
    for i in range(n):
        for j in range(i, n):
            pairwise[i, j] = pairwise[j, i] = s_over(feats[i], feats[j], w)
    # correctly rounded sums keep genuinely tied candidates tied
    cumulative = np.array([math.fsum(pairwise[i, j] for j in range(n) if j != i) for i in range(n)], dtype=float)
    # np.argmax returns the first maximum, giving the lowest-index tie-break
    winner = int(np.argmax(cumulative))
    return SelectionReport(pairwise, cumulative, winner, texts[winner])
