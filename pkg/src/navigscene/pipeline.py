"""Scene-to-guidance pipeline and dataset assembly.

Per scene: source and destination coordinates, a route on a synthetic road
graph, ``F`` sampled frames, ``N`` candidate descriptions and the
self-consistency winner. Guidance records then feed the NSFT prompt pairs and
the token-level NPO preference tuples.
"""

from __future__ import annotations

import hashlib
import json
import logging
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Iterator, Sequence

import numpy as np

from .candidates import SUMMARY_PROMPT, CandidateSet, GeneratorClient, candidate_prompt, concat
from .errors import MissingGuidance, NavigSceneError, ParseError, SceneError, ValidationError
from .geo import GeoCoordinate, TranslationVector, offset_coordinate
from .npo import BOS, DEFAULT_MAX_LEN, UNK, PreferenceTuple, ToyLM, greedy_decode
from .routesim import DEFAULT_SPEED_MPS, RoadGraph, plan_route, sample_frames, synthesize_graph
from .selector import SelectionReport, SimilarityWeights, select_best, tokenize

log = logging.getLogger(__name__)

DEFAULT_FRAMES = 20
DEFAULT_CANDIDATES = 5
DEFAULT_GRID = 9
DEFAULT_SPACING_M = 100.0


# ---------------------------------------------------------------- JSONL io


def iter_jsonl(path: str | Path) -> Iterator[tuple[int, dict]]:
    """Yield ``(line_number, object)`` pairs, skipping blank lines."""
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"invalid JSON: {exc.msg}", lineno, str(path)) from exc
            if not isinstance(obj, dict):
                raise ParseError(f"expected an object, got {type(obj).__name__}", lineno, str(path))
            yield lineno, obj


def read_jsonl(path: str | Path) -> list[dict]:
    return [obj for _, obj in iter_jsonl(path)]


def write_jsonl(records: Iterable[Any], path: str | Path) -> int:
    """Write one compact JSON object per line; objects with ``to_dict`` are converted."""
    n = 0
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for rec in records:
            obj = rec.to_dict() if hasattr(rec, "to_dict") else rec
            f.write(json.dumps(obj, ensure_ascii=False))
            f.write("\n")
            n += 1
    return n


# ---------------------------------------------------------------- scenes


@dataclass(frozen=True)
class SceneRecord:
    scene_id: str
    origin: GeoCoordinate
    source_t: TranslationVector
    dest_t: TranslationVector

    def to_dict(self) -> dict:
        return {
            "scene_id": self.scene_id,
            "origin": {"lat": self.origin.lat, "lon": self.origin.lon},
            "source_t": [self.source_t.dx, self.source_t.dy, self.source_t.dz],
            "dest_t": [self.dest_t.dx, self.dest_t.dy, self.dest_t.dz],
        }

    @classmethod
    def from_dict(cls, d: dict) -> SceneRecord:
        try:
            scene_id = d["scene_id"]
            origin = GeoCoordinate(float(d["origin"]["lat"]), float(d["origin"]["lon"]))
            vectors = []
            for key in ("source_t", "dest_t"):
                v = [float(x) for x in d[key]]
                if len(v) != 3:
                    raise ValidationError(f"{key} needs three components, got {len(v)}")
                vectors.append(TranslationVector(*v))
        except (KeyError, TypeError) as exc:
            raise ValidationError(f"malformed scene: {exc!r}") from exc
        if not isinstance(scene_id, str) or not scene_id:
            raise ValidationError("scene_id must be a non-empty string")
        return cls(scene_id, origin, *vectors)


def load_scenes(path: str | Path) -> list[SceneRecord]:
    scenes: list[SceneRecord] = []
    first_seen: dict[str, int] = {}
    for lineno, obj in iter_jsonl(path):
        try:
            scene = SceneRecord.from_dict(obj)
        except ValidationError as exc:
            raise ValidationError(f"{path}:{lineno}: {exc}") from exc
        if scene.scene_id in first_seen:
            raise ValidationError(
                f"{path}: duplicate scene_id {scene.scene_id!r} on lines "
                f"{first_seen[scene.scene_id]} and {lineno}"
            )
        first_seen[scene.scene_id] = lineno
        scenes.append(scene)
    return scenes


_CITY_ORIGINS = (
    ("boston-seaport", 42.336849, -71.057854),
    ("singapore-onenorth", 1.288, 103.784),
    ("singapore-hollandvillage", 1.3098, 103.7960),
    ("singapore-queenstown", 1.2782, 103.7679),
    ("las-vegas", 36.1147, -115.1728),
    ("pittsburgh", 40.4406, -79.9959),
)


def synthetic_scenes(n: int, seed: int, extent_m: float = 350.0) -> list[SceneRecord]:
    """Seeded scenes around known city origins; source and destination at least 150 m apart."""
    rng = np.random.default_rng(seed)
    out = []
    for k in range(n):
        name, lat, lon = _CITY_ORIGINS[int(rng.integers(len(_CITY_ORIGINS)))]
        while True:
            src = rng.uniform(-extent_m, extent_m, 2)
            dst = rng.uniform(-extent_m, extent_m, 2)
            if np.hypot(*(src - dst)) >= 150.0:
                break
        z = rng.uniform(-1.0, 1.0, 2)
        out.append(
            SceneRecord(
                f"{name}-{k:04d}",
                GeoCoordinate(lat, lon),
                TranslationVector(round(float(src[0]), 3), round(float(src[1]), 3), round(float(z[0]), 3)),
                TranslationVector(round(float(dst[0]), 3), round(float(dst[1]), 3), round(float(z[1]), 3)),
            )
        )
    return out


# ---------------------------------------------------------------- guidance


@dataclass(frozen=True)
class GuidanceRecord:
    scene_id: str
    guidance: str
    candidates: CandidateSet
    report: SelectionReport
    route_meta: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.guidance != self.candidates.texts[self.report.winner_index]:
            raise ValidationError(f"scene {self.scene_id!r}: guidance is not the winning candidate")

    def to_dict(self) -> dict:
        return {
            "scene_id": self.scene_id,
            "guidance": self.guidance,
            "candidates": list(self.candidates.texts),
            "seed": self.candidates.seed,
            "scores": self.report.to_dict(),
            "route": dict(self.route_meta),
        }

    @classmethod
    def from_dict(cls, d: dict) -> GuidanceRecord:
        texts = tuple(d["candidates"])
        return cls(
            d["scene_id"],
            d["guidance"],
            CandidateSet(d["scene_id"], texts, int(d.get("seed", 0))),
            SelectionReport.from_dict(d["scores"], texts),
            dict(d.get("route", {})),
        )


def scene_seed(seed: int, scene_id: str) -> int:
    digest = hashlib.sha256(f"{seed}:{scene_id}".encode()).digest()
    return int.from_bytes(digest[:4], "big")


def graph_for_scene(
    scene: SceneRecord,
    seed: int,
    grid_w: int = DEFAULT_GRID,
    grid_h: int = DEFAULT_GRID,
    spacing_m: float = DEFAULT_SPACING_M,
) -> RoadGraph:
    """Street grid centred on the scene origin."""
    corner = offset_coordinate(
        scene.origin,
        TranslationVector(-(grid_w - 1) * spacing_m / 2.0, -(grid_h - 1) * spacing_m / 2.0, 0.0),
    )
    return synthesize_graph(seed, grid_w, grid_h, corner, spacing_m)


def build_guidance(
    scene: SceneRecord,
    graph: RoadGraph,
    client: GeneratorClient,
    w: SimilarityWeights = SimilarityWeights(),
    F: int = DEFAULT_FRAMES,
    N: int = DEFAULT_CANDIDATES,
    seed: int = 0,
    speed_mps: float = DEFAULT_SPEED_MPS,
) -> GuidanceRecord:
    """Run the whole generation chain for one scene; failures come back as ``SceneError``."""
    try:
        src = offset_coordinate(scene.origin, scene.source_t)
        dst = offset_coordinate(scene.origin, scene.dest_t)
        route = plan_route(graph, src, dst, speed_mps)
        frames = sample_frames(route, F)
        cseed = scene_seed(seed, scene.scene_id)
        texts = client.generate(frames, candidate_prompt(frames), N, cseed)
        if len(texts) != N:
            raise ValidationError(f"generator returned {len(texts)} candidates, expected {N}")
        candidates = CandidateSet(scene.scene_id, tuple(texts), cseed)
        report = select_best(candidates, w)
    except NavigSceneError as exc:
        raise SceneError(scene.scene_id, exc) from exc
    meta = {
        "length_m": route.total_length_m,
        "duration_s": route.duration_s,
        "maneuvers": len(route.maneuvers),
    }
    return GuidanceRecord(scene.scene_id, report.winner_text, candidates, report, meta)


@dataclass
class BatchResult:
    records: list[GuidanceRecord]
    failures: list[SceneError]


def run_batch(
    scenes: Sequence[SceneRecord],
    client: GeneratorClient,
    w: SimilarityWeights = SimilarityWeights(),
    F: int = DEFAULT_FRAMES,
    N: int = DEFAULT_CANDIDATES,
    seed: int = 0,
    graph: RoadGraph | None = None,
    graph_seed: int | None = None,
    grid: tuple[int, int] = (DEFAULT_GRID, DEFAULT_GRID),
    spacing_m: float = DEFAULT_SPACING_M,
    speed_mps: float = DEFAULT_SPEED_MPS,
    jobs: int = 1,
    strict: bool = False,
) -> BatchResult:
    """Process scenes on a thread pool; results keep input order.

    Without an explicit ``graph`` each scene gets its own grid centred on its
    origin, seeded from ``graph_seed`` (default ``seed``) and the scene id.
    A failing scene is logged and skipped unless ``strict``.
    """
    gseed = seed if graph_seed is None else graph_seed

    def one(scene: SceneRecord) -> GuidanceRecord | SceneError:
        try:
            g = graph if graph is not None else graph_for_scene(
                scene, scene_seed(gseed, scene.scene_id), grid[0], grid[1], spacing_m
            )
            return build_guidance(scene, g, client, w, F, N, seed, speed_mps)
        except SceneError as exc:
            return exc
        except NavigSceneError as exc:
            return SceneError(scene.scene_id, exc)

    if jobs <= 1:
        results = [one(s) for s in scenes]
    else:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(one, scenes))

    records, failures = [], []
    for res in results:
        if isinstance(res, SceneError):
            if strict:
                raise res
            log.warning("skipping %s", res)
            failures.append(res)
        else:
            records.append(res)
    return BatchResult(records, failures)


# ---------------------------------------------------------------- NSFT / NPO data


@dataclass(frozen=True)
class NsftPair:
    scene_id: str
    prompt: str
    answer: str

    def to_dict(self) -> dict:
        return {"scene_id": self.scene_id, "prompt": self.prompt, "answer": self.answer}

    @classmethod
    def from_dict(cls, d: dict) -> NsftPair:
        return cls(d["scene_id"], d["prompt"], d["answer"])


def assemble_nsft_pairs(guidance: Sequence[GuidanceRecord], qa: Sequence[dict]) -> list[NsftPair]:
    """One prompt per QA row: the scene's guidance, a newline, then the question."""
    by_scene = {g.scene_id: g.guidance for g in guidance}
    pairs = []
    for row in qa:
        sid = row["scene_id"]
        if sid not in by_scene:
            raise MissingGuidance(sid)
        pairs.append(NsftPair(sid, concat(by_scene[sid], row["question"]), row["answer"]))
    return pairs


class Vocabulary:
    """Word-level ids; 0 is BOS, 1 is the unknown word, then words by falling frequency."""

    def __init__(self, words: Sequence[str]):
        self.words = tuple(words)
        self._index = {w: i + 2 for i, w in enumerate(self.words)}

    def __eq__(self, other: object) -> bool:
        return isinstance(other, Vocabulary) and self.words == other.words

    @classmethod
    def build(cls, texts: Iterable[str], vocab_size: int) -> Vocabulary:
        """Keep the ``vocab_size - 2`` most frequent words; ties break alphabetically."""
        if vocab_size < 3:
            raise ValidationError("vocab_size must leave room for BOS, UNK and one word")
        counts = Counter(tok for text in texts for tok in tokenize(text))
        ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
        return cls(w for w, _ in ranked[: vocab_size - 2])

    @property
    def size(self) -> int:
        return len(self.words) + 2

    def encode(self, text: str) -> tuple[int, ...]:
        return tuple(self._index.get(tok, UNK) for tok in tokenize(text))

    def decode(self, ids: Sequence[int]) -> str:
        names = {BOS: "<bos>", UNK: "<unk>"}
        return " ".join(names.get(i) or self.words[i - 2] for i in ids)

    def to_dict(self) -> dict:
        return {"words": list(self.words)}

    @classmethod
    def from_dict(cls, d: dict) -> Vocabulary:
        return cls(d["words"])


def corpus_texts(pairs: Sequence[NsftPair], guidance: Sequence[GuidanceRecord]) -> list[str]:
    return [SUMMARY_PROMPT] + [g.guidance for g in guidance] + [t for p in pairs for t in (p.prompt, p.answer)]


def split_prompt(pair: NsftPair, guidance_text: str) -> str:
    """Recover the question from an NSFT prompt built on ``guidance_text``."""
    head = guidance_text + "\n"
    if not pair.prompt.startswith(head):
        raise ValidationError(f"scene {pair.scene_id!r}: prompt does not start with its guidance")
    return pair.prompt[len(head):]


def assemble_preference_tuples(
    pairs: Sequence[NsftPair],
    guidance: Sequence[GuidanceRecord],
    reward: ToyLM,
    ref: ToyLM,
    vocab: Vocabulary,
    max_len: int = DEFAULT_MAX_LEN,
    summary_len: int | None = None,
) -> list[PreferenceTuple]:
    """Token-level preference tuples for NPO.

    The question stands in for images plus question. Context, answer and
    guidance are truncated to ``max_len`` tokens; both summaries are greedy
    decodes from the summarisation prompt followed by the answer tokens.
    """
    if vocab.size > reward.vocab_size or reward.vocab_size != ref.vocab_size:
        raise ValidationError(
            f"vocabulary of {vocab.size} ids does not fit models of size {reward.vocab_size}/{ref.vocab_size}"
        )
    by_scene = {g.scene_id: g.guidance for g in guidance}
    prefix = vocab.encode(SUMMARY_PROMPT)
    n_summary = max_len if summary_len is None else summary_len
    out = []
    for pair in pairs:
        if pair.scene_id not in by_scene:
            raise MissingGuidance(pair.scene_id)
        g_text = by_scene[pair.scene_id]
        question = split_prompt(pair, g_text)
        context = vocab.encode(question)[:max_len]
        answer = vocab.encode(pair.answer)[:max_len]
        g_ids = vocab.encode(g_text)[:max_len]
        out.append(
            PreferenceTuple(
                context,
                answer,
                greedy_decode(reward, prefix + answer, n_summary),
                greedy_decode(ref, prefix + answer, n_summary),
                g_ids,
            )
        )
    return out
