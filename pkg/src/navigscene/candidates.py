"""Candidate navigation descriptions and the summarisation prompt.

Real deployments plug a vision-language model in through ``GeneratorClient``;
``StubGenerator`` is a deterministic template-based replacement that works off
the maneuver annotations carried by each frame.
"""

from __future__ import annotations

import random
from dataclasses import dataclass
from importlib import resources
from typing import Protocol, Sequence

from .errors import EmptyAnswer, EmptyFrames, ValidationError
from .routesim import RouteFrame

SUMMARY_PROMPT = (
    "Summarize this answer to a driving-relevant question to make it simple "
    "without losing important information."
)
JITTER = 0.2


def concat(first: str, second: str) -> str:
    """Prompt concatenation: the two operands joined by a single newline."""
    return f"{first}\n{second}"


def candidate_prompt_template() -> str:
    return resources.files("navigscene").joinpath("prompts/candidate_generation.txt").read_text("utf-8")


def candidate_prompt(frames: Sequence[RouteFrame]) -> str:
    return candidate_prompt_template().format(num_frames=len(frames))


def summarization_prompt(answer: str) -> str:
    if not answer:
        raise EmptyAnswer("cannot summarise an empty answer")
    return concat(SUMMARY_PROMPT, answer)


class GeneratorClient(Protocol):
    def generate(self, frames: Sequence[RouteFrame], prompt: str, n: int, seed: int) -> list[str]:
        """Return exactly ``n`` non-empty descriptions; deterministic in ``seed``."""
        ...


@dataclass(frozen=True)
class CandidateSet:
    scene_id: str
    texts: tuple[str, ...]
    seed: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(self, "texts", tuple(self.texts))
        if any(not t for t in self.texts):
            raise ValidationError("candidate texts must be non-empty")

    def to_dict(self) -> dict:
        return {"scene_id": self.scene_id, "seed": self.seed, "texts": list(self.texts)}

    @classmethod
    def from_dict(cls, d: dict) -> CandidateSet:
        return cls(str(d["scene_id"]), tuple(d["texts"]), int(d.get("seed", 0)))


_TURN_TEMPLATES = (
    "In {dist}, turn {kind}{onto}{signal}.",
    "After {dist}, make a {kind} turn{onto}{signal}.",
    "Turn {kind}{onto} in {dist}{signal}.",
    "Drive {dist} and then turn {kind}{onto}{signal}.",
)
_UTURN_TEMPLATES = (
    "In {dist}, make a U-turn{signal}.",
    "After {dist}, perform a U-turn{signal}.",
)
_STRAIGHT_TEMPLATES = (
    "Continue straight{along} for {dist}{signal}.",
    "Go straight{along} for {dist}{signal}.",
    "Keep going straight for {dist}{along}{signal}.",
)
_OTHER_TEMPLATES = (
    "In {dist}, take the {kind}{onto}{signal}.",
    "After {dist}, {kind}{onto}{signal}.",
)
_SIGNAL_PHRASES = (" at the traffic light", " at the signalized intersection", " at the lights")
_CONNECTORS = ("Then", "After that,", "Next,")


def format_distance(meters: float, style: int) -> str:
    if meters >= 1000.0 and style % 2 == 1:
        return f"{meters / 1000.0:.2f} km"
    if style == 2:
        return f"{round(meters)} m"
    return f"{round(meters)} meters"


def _visible_maneuvers(frames: Sequence[RouteFrame]) -> list[tuple[str, float, bool, str]]:
    seen: set[tuple] = set()
    out = []
    for f in frames:
        m = f.next_maneuver
        if m is None:
            continue
        key = (m.node_id, m.kind, m.distance_from_prev_m, m.road_name)
        if key in seen:
            continue
        seen.add(key)
        dist = f.dist_to_next_maneuver_m + f.arc_length_m if not out else m.distance_from_prev_m
        out.append((m.kind, dist, m.has_signal, m.road_name))
    return out


def _sentence(rng: random.Random, kind: str, dist: str, signal: bool, road: str) -> str:
    signal_txt = rng.choice(_SIGNAL_PHRASES) if signal else ""
    if kind == "straight":
        tpl = rng.choice(_STRAIGHT_TEMPLATES)
        return tpl.format(dist=dist, along=f" on {road}" if road else "", signal=signal_txt)
    if kind == "u-turn":
        return rng.choice(_UTURN_TEMPLATES).format(dist=dist, signal=signal_txt)
    tpl = rng.choice(_TURN_TEMPLATES if kind in ("left", "right") else _OTHER_TEMPLATES)
    return tpl.format(dist=dist, kind=kind, onto=f" onto {road}" if road else "", signal=signal_txt)


def stub_generate(frames: Sequence[RouteFrame], n: int, seed: int) -> list[str]:
    """Template descriptions of the maneuvers visible in ``frames``.

    Candidate 0 reports true distances; later candidates scale each distance
    by an independent factor in [0.8, 1.2]. Wording is chosen per candidate
    from a seeded RNG.
    """
    if not frames:
        raise EmptyFrames("no frames to describe")
    if n < 1:
        raise ValidationError(f"need at least one candidate, got n={n}")
    maneuvers = _visible_maneuvers(frames)
    texts = []
    for i in range(n):
        rng = random.Random(f"{seed}:{i}")
        style = rng.randrange(3)
        parts = []
        for k, (kind, dist, signal, road) in enumerate(maneuvers):
            d = dist if i == 0 else dist * rng.uniform(1.0 - JITTER, 1.0 + JITTER)
            s = _sentence(rng, kind, format_distance(d, style), signal, road)
            if k > 0:
                s = f"{rng.choice(_CONNECTORS)} {s[0].lower()}{s[1:]}"
            parts.append(s)
        if not parts:
            parts.append("Continue to the destination.")
        texts.append(" ".join(parts))
    return texts


class StubGenerator:
    """Deterministic ``GeneratorClient``; ignores the prompt."""

    def generate(self, frames: Sequence[RouteFrame], prompt: str, n: int, seed: int) -> list[str]:
        return stub_generate(frames, n, seed)
