import json
import re
import string
from collections import Counter

import numpy as np
import pytest

from navigscene.candidates import SUMMARY_PROMPT, StubGenerator
from navigscene.errors import MissingGuidance, ParseError, SceneError, ValidationError
from navigscene.geo import GeoCoordinate, TranslationVector
from navigscene.npo import random_lm
from navigscene.pipeline import (
    GuidanceRecord,
    NsftPair,
    SceneRecord,
    Vocabulary,
    assemble_nsft_pairs,
    assemble_preference_tuples,
    build_guidance,
    corpus_texts,
    graph_for_scene,
    load_scenes,
    read_jsonl,
    run_batch,
    synthetic_scenes,
    write_jsonl,
)
from navigscene.routesim import DegenerateRoute

GEN = StubGenerator()


def scene_line(sid, dy=300.0):
    return json.dumps({"scene_id": sid, "origin": {"lat": 1.3, "lon": 103.8}, "source_t": [0, 0, 0], "dest_t": [120, dy, 0]})


def test_load_empty(tmp_path):
    p = tmp_path / "s.jsonl"
    p.write_text("")
    assert load_scenes(p) == []


def test_load_one(tmp_path):
    p = tmp_path / "s.jsonl"
    p.write_text(scene_line("a") + "\n")
    (s,) = load_scenes(p)
    assert s.scene_id == "a" and s.dest_t == TranslationVector(120, 300, 0)


def test_duplicate_names_both_lines(tmp_path):
    ids = ["a", "b", "dup", "c", "d", "e", "dup"]
    p = tmp_path / "s.jsonl"
    p.write_text("\n".join(scene_line(i) for i in ids) + "\n")
    with pytest.raises(ValidationError, match=r"lines 3 and 7"):
        load_scenes(p)


def test_parse_error_has_line(tmp_path):
    p = tmp_path / "s.jsonl"
    p.write_text(scene_line("a") + "\n{not json\n")
    with pytest.raises(ParseError) as exc:
        load_scenes(p)
    assert exc.value.line == 2


def test_malformed_scene(tmp_path):
    p = tmp_path / "s.jsonl"
    p.write_text(json.dumps({"scene_id": "x", "origin": {"lat": 0, "lon": 0}, "source_t": [0, 0], "dest_t": [1, 1, 1]}) + "\n")
    with pytest.raises(ValidationError, match=":1:"):
        load_scenes(p)


def test_scene_round_trip(tmp_path):
    scenes = synthetic_scenes(5, 3)
    write_jsonl(scenes, tmp_path / "s.jsonl")
    assert load_scenes(tmp_path / "s.jsonl") == scenes


def test_build_guidance_deterministic():
    (scene,) = synthetic_scenes(1, 0)
    g = graph_for_scene(scene, 1)
    a = build_guidance(scene, g, GEN, seed=4)
    b = build_guidance(scene, g, GEN, seed=4)
    assert json.dumps(a.to_dict()) == json.dumps(b.to_dict())
    assert a.guidance == a.candidates.texts[a.report.winner_index]
    assert len(a.candidates.texts) == 5


def test_degenerate_scene_carries_id():
    scene = SceneRecord("same", GeoCoordinate(1.3, 103.8), TranslationVector(5, 5, 0), TranslationVector(6, 5, 0))
    with pytest.raises(SceneError) as exc:
        build_guidance(scene, graph_for_scene(scene, 0), GEN)
    assert exc.value.scene_id == "same"
    assert isinstance(exc.value.cause, DegenerateRoute)


def test_batch_skips_and_strict_raises():
    good = synthetic_scenes(3, 1)
    bad = SceneRecord("bad", GeoCoordinate(1.3, 103.8), TranslationVector(0, 0, 0), TranslationVector(1, 0, 0))
    res = run_batch(good[:1] + [bad] + good[1:], GEN)
    assert [r.scene_id for r in res.records] == [s.scene_id for s in good]
    assert [f.scene_id for f in res.failures] == ["bad"]
    with pytest.raises(SceneError):
        run_batch([bad], GEN, strict=True)


def test_guidance_round_trip():
    for rec in run_batch(synthetic_scenes(4, 2), GEN).records:
        assert GuidanceRecord.from_dict(json.loads(json.dumps(rec.to_dict()))) == rec


def test_guidance_must_be_winner():
    rec = run_batch(synthetic_scenes(1, 2), GEN).records[0]
    d = rec.to_dict()
    d["guidance"] = "something else"
    with pytest.raises(ValidationError):
        GuidanceRecord.from_dict(d)


def test_write_zero_records(tmp_path):
    p = tmp_path / "g.jsonl"
    assert write_jsonl([], p) == 0
    assert p.read_bytes() == b""


def test_fifty_scenes_ordered_and_parallel_identical(tmp_path):
    scenes = synthetic_scenes(50, 0)
    serial = run_batch(scenes, GEN, seed=0)
    parallel = run_batch(scenes, GEN, seed=0, jobs=4)
    assert write_jsonl(serial.records, tmp_path / "a.jsonl") == 50
    write_jsonl(parallel.records, tmp_path / "b.jsonl")
    assert (tmp_path / "a.jsonl").read_bytes() == (tmp_path / "b.jsonl").read_bytes()
    assert [json.loads(x)["scene_id"] for x in (tmp_path / "a.jsonl").read_text().splitlines()] == [s.scene_id for s in scenes]


def test_seed_changes_output():
    scenes = synthetic_scenes(5, 0)
    a = [r.to_dict() for r in run_batch(scenes, GEN, seed=0).records]
    b = [r.to_dict() for r in run_batch(scenes, GEN, seed=1).records]
    assert a != b


# ---------------------------------------------------------------- NSFT / NPO

QA = [
    ("Should the car slow down?", "Yes, a right turn is coming up."),
    ("Which lane should the ego vehicle use?", "The right lane, to prepare for the turn."),
    ("Is there a traffic light ahead?", "There may be one at the next intersection."),
    ("What should the driver do next?", "Keep going and follow the navigation."),
    ("Is a left turn needed?", "No, the route turns right."),
    ("How far is the destination?", "A few hundred meters away."),
    ("Can the car change lanes now?", "Yes, the left lane is clear."),
    ("What is the planned maneuver?", "Continue straight, then turn."),
]


@pytest.fixture(scope="module")
def corpus():
    records = run_batch(synthetic_scenes(8, 5), GEN).records
    qa = [{"scene_id": r.scene_id, "question": q, "answer": a} for r, (q, a) in zip(records, QA)]
    return records, qa


def test_nsft_empty(corpus):
    records, _ = corpus
    assert assemble_nsft_pairs(records, []) == []


def test_nsft_prompt_construction(corpus):
    records, qa = corpus
    (pair,) = assemble_nsft_pairs(records, qa[:1])
    assert pair.prompt == records[0].guidance + "\n" + qa[0]["question"]
    assert pair.answer == qa[0]["answer"]


def test_nsft_missing_guidance(corpus):
    records, _ = corpus
    with pytest.raises(MissingGuidance):
        assemble_nsft_pairs(records, [{"scene_id": "nope", "question": "q", "answer": "a"}])


def test_tuples_empty(corpus):
    records, _ = corpus
    m = random_lm(16, 0)
    assert assemble_preference_tuples([], records, m, m, Vocabulary.build(["a"], 16)) == []


def test_tuples_same_model_same_summaries(corpus):
    records, qa = corpus
    pairs = assemble_nsft_pairs(records, qa)
    vocab = Vocabulary.build(corpus_texts(pairs, records), 32)
    m = random_lm(32, 1)
    for t in assemble_preference_tuples(pairs, records, m, m.copy(), vocab):
        assert t.summary_reward == t.summary_ref


def _ref_tokens(text):
    out = []
    for raw in text.lower().split():
        tok = raw.strip(string.punctuation)
        if tok:
            out.append(tok)
    return out


def _ref_greedy(logits, context, n):
    prev = context[-1] if context else 0
    out = []
    for _ in range(n):
        prev = max(range(logits.shape[1]), key=lambda j: (logits[prev, j], -j))
        out.append(prev)
    return out


def test_tuples_match_reencoding(corpus):
    records, qa = corpus
    pairs = assemble_nsft_pairs(records, qa)
    V, L = 48, 8
    vocab = Vocabulary.build(corpus_texts(pairs, records), V)
    reward, ref = random_lm(V, 7), random_lm(V, 8)
    tuples = assemble_preference_tuples(pairs, records, reward, ref, vocab, L)

    # independent re-encoding from the raw texts
    texts = [SUMMARY_PROMPT] + [r.guidance for r in records] + [t for p in pairs for t in (p.prompt, p.answer)]
    counts = Counter(tok for t in texts for tok in _ref_tokens(t))
    ranked = sorted(counts, key=lambda w: (-counts[w], w))[: V - 2]
    ids = {w: i + 2 for i, w in enumerate(ranked)}

    def enc(text):
        return [ids.get(tok, 1) for tok in _ref_tokens(text)]

    guidance = {r.scene_id: r.guidance for r in records}
    prefix = enc(SUMMARY_PROMPT)
    assert len(tuples) == 8
    for t, (q, a), p in zip(tuples, QA, pairs):
        answer = enc(a)[:L]
        assert list(t.context) == enc(q)[:L]
        assert list(t.answer) == answer
        assert list(t.guidance) == enc(guidance[p.scene_id])[:L]
        assert list(t.summary_reward) == _ref_greedy(reward.logits, prefix + answer, L)
        assert list(t.summary_ref) == _ref_greedy(ref.logits, prefix + answer, L)


def test_vocabulary_round_trip():
    v = Vocabulary.build(["b a a", "c b a"], 10)
    assert v.words == ("a", "b", "c")
    assert v.encode("a zzz c") == (2, 1, 4)
    assert v.decode((0, 2, 1)) == "<bos> a <unk>"
    assert Vocabulary.from_dict(v.to_dict()) == v
    with pytest.raises(ValidationError):
        Vocabulary.build([], 2)


def test_tuples_vocab_too_big(corpus):
    records, qa = corpus
    pairs = assemble_nsft_pairs(records, qa)
    vocab = Vocabulary.build(corpus_texts(pairs, records), 64)
    m = random_lm(8, 0)
    with pytest.raises(ValidationError):
        assemble_preference_tuples(pairs, records, m, m, vocab)


def test_nsft_pair_round_trip(tmp_path):
    pairs = [NsftPair("a", "g\nq", "ans")]
    write_jsonl(pairs, tmp_path / "p.jsonl")
    assert [NsftPair.from_dict(d) for d in read_jsonl(tmp_path / "p.jsonl")] == pairs
