import json
import subprocess
import sys

import numpy as np
import pytest

from navigscene.cli import main
from navigscene.npo import ToyLM, random_lm
from navigscene.pipeline import synthetic_scenes, write_jsonl
from navigscene.selector import select_best


def run(argv, capsys):
    try:
        code = main(argv)
    except SystemExit as exc:
        code = exc.code
    out = capsys.readouterr()
    return code, out.out, out.err


def test_geo_offset_unit_case(capsys):
    code, out, _ = run(["geo-offset", "--lat", "0", "--lon", "0", "--dy", "111319.4908"], capsys)
    assert code == 0
    assert out.strip() == "1.000000, 0.000000"


def test_geo_offset_missing_lat(capsys):
    code, _, err = run(["geo-offset", "--lon", "0"], capsys)
    assert code == 2 and "--lat" in err


def test_geo_offset_near_pole(capsys):
    code, _, err = run(["geo-offset", "--lat", "90", "--lon", "0", "--dx", "10"], capsys)
    assert code == 2 and "pole" in err


def test_unknown_command(capsys):
    code, _, _ = run(["frobnicate"], capsys)
    assert code == 2


def test_config_file_and_override(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"lat": 0, "lon": 0, "dy": 111319.4908}))
    code, out, _ = run(["geo-offset", "--config", str(cfg)], capsys)
    assert code == 0 and out.strip() == "1.000000, 0.000000"
    code, out, _ = run(["geo-offset", "--config", str(cfg), "--dy", "0"], capsys)
    assert out.strip() == "0.000000, 0.000000"


def test_bad_config(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text("[1, 2]")
    code, _, _ = run(["geo-offset", "--config", str(cfg)], capsys)
    assert code == 2


@pytest.fixture
def scenes_file(tmp_path):
    p = tmp_path / "scenes.jsonl"
    write_jsonl(synthetic_scenes(50, 0), p)
    return p


def test_build(tmp_path, scenes_file, capsys):
    a, b = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
    code, out, _ = run(["build", "--scenes", str(scenes_file), "--out", str(a), "--seed", "3"], capsys)
    assert code == 0 and "50 ok" in out
    assert len(a.read_text().splitlines()) == 50
    run(["build", "--scenes", str(scenes_file), "--out", str(b), "--seed", "3", "--jobs", "4"], capsys)
    assert a.read_bytes() == b.read_bytes()


def test_build_options_from_config(tmp_path, scenes_file, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"num_candidates": 3, "frames": 10}))
    out = tmp_path / "g.jsonl"
    code, _, _ = run(["build", "--config", str(cfg), "--scenes", str(scenes_file), "--out", str(out)], capsys)
    assert code == 0
    assert all(len(json.loads(x)["candidates"]) == 3 for x in out.read_text().splitlines())


def test_build_unreadable(tmp_path, capsys):
    code, _, err = run(["build", "--scenes", str(tmp_path / "missing.jsonl"), "--out", str(tmp_path / "o")], capsys)
    assert code == 1 and "error" in err


def test_build_bad_weights(tmp_path, scenes_file, capsys):
    code, _, _ = run(["build", "--scenes", str(scenes_file), "--out", str(tmp_path / "o"), "--weights", "0.2,0.3,0.5"], capsys)
    assert code == 2


def test_select(tmp_path, capsys):
    p = tmp_path / "c.jsonl"
    sets = [
        {"scene_id": "one", "texts": ["Turn left in 20 m"]},
        {"scene_id": "three", "texts": ["In 900 m, turn left.", "In 300 m, turn right.", "Turn right after 300 m."]},
    ]
    write_jsonl(sets, p)
    code, out, _ = run(["select", "--candidates", str(p)], capsys)
    assert code == 0
    lines = [json.loads(x) for x in out.splitlines()]
    assert lines[0]["winner"] == 0
    assert lines[1]["winner"] == select_best(sets[1]["texts"]).winner_index == 1


def test_nsft_pairs_and_training(tmp_path, scenes_file, capsys):
    g = tmp_path / "g.jsonl"
    run(["build", "--scenes", str(scenes_file), "--out", str(g)], capsys)
    ids = [json.loads(x)["scene_id"] for x in g.read_text().splitlines()][:6]
    qa = tmp_path / "qa.jsonl"
    write_jsonl([{"scene_id": s, "question": "Where should the car go?", "answer": "Turn as guided ahead."} for s in ids], qa)
    pairs, tuples = tmp_path / "p.jsonl", tmp_path / "t.jsonl"
    code, out, _ = run(["nsft-pairs", "--guidance", str(g), "--qa", str(qa), "--out", str(pairs), "--tuples-out", str(tuples), "--vocab-size", "40"], capsys)
    assert code == 0
    assert len(pairs.read_text().splitlines()) == 6 == len(tuples.read_text().splitlines())
    ckpt, trace = tmp_path / "m.json", tmp_path / "trace.json"
    code, out, _ = run(["npo-train", "--dataset", str(tuples), "--checkpoint-out", str(ckpt), "--trace-out", str(trace), "--lr", "1e-2", "--vocab-size", "40"], capsys)
    assert code == 0
    losses = json.loads(trace.read_text())["losses"]
    assert len(losses) == 11 and losses[-1] < losses[0]
    assert ToyLM.load(ckpt).vocab_size == 40


def test_nsft_missing_guidance(tmp_path, capsys):
    g, qa = tmp_path / "g.jsonl", tmp_path / "qa.jsonl"
    g.write_text("")
    write_jsonl([{"scene_id": "x", "question": "q", "answer": "a"}], qa)
    code, _, err = run(["nsft-pairs", "--guidance", str(g), "--qa", str(qa), "--out", str(tmp_path / "p")], capsys)
    assert code == 2 and "x" in err


def test_npo_train_defaults(tmp_path, capsys):
    ckpt = tmp_path / "m.json"
    code, out, _ = run(["npo-train", "--checkpoint-out", str(ckpt)], capsys)
    assert code == 0
    losses = [float(line.rsplit(" ", 1)[1]) for line in out.splitlines()]
    assert len(losses) == 11 and losses[-1] < losses[0]


def test_npo_train_zero_epochs(tmp_path, capsys):
    ckpt = tmp_path / "m.json"
    code, _, _ = run(["npo-train", "--epochs", "0", "--seed", "4", "--checkpoint-out", str(ckpt)], capsys)
    assert code == 0
    assert np.array_equal(ToyLM.load(ckpt).logits, random_lm(8, 4).logits)


def test_npo_train_alpha_zero(tmp_path, capsys):
    code, out, _ = run(["npo-train", "--alpha", "0", "--checkpoint-out", str(tmp_path / "m.json")], capsys)
    assert code == 0 and out.splitlines()[0].endswith("0.693147180560")


def test_npo_train_missing_checkpoint(capsys):
    code, _, _ = run(["npo-train"], capsys)
    assert code == 2


def test_fuse_check(capsys):
    code, out, _ = run(["fuse-check"], capsys)
    assert code == 0 and out.strip().endswith("PASS")
    _, again, _ = run(["fuse-check"], capsys)
    assert again == out


def test_fuse_check_bad_dim(capsys):
    code, _, err = run(["fuse-check", "--bev-dim", "0"], capsys)
    assert code == 2 and "bev" in err


def test_synth_scenes(tmp_path, capsys):
    out = tmp_path / "s.jsonl"
    code, _, _ = run(["synth-scenes", "--n", "7", "--out", str(out)], capsys)
    assert code == 0 and len(out.read_text().splitlines()) == 7


def test_module_entry_point():
    proc = subprocess.run(
        [sys.executable, "-m", "navigscene", "geo-offset", "--lat", "60", "--lon", "10", "--dx", "1000"],
        capture_output=True, text=True, check=False,
    )
    assert proc.returncode == 0
    assert proc.stdout.strip() == "60.000000, 10.017966"
