"""Command-line entry point.

Exit codes: 0 success, 1 runtime or I/O failure, 2 usage or validation error.
Every subcommand accepts ``--config FILE`` holding a JSON object keyed by
option name (``num_candidates``, ``weights``, ...); flags given on the command
line win over the file.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict, dataclass
from types import SimpleNamespace

from . import fusion, npo
from .candidates import CandidateSet, StubGenerator
from .errors import NavigSceneError, ValidationError
from .geo import EARTH_RADIUS_M, EarthModel, GeoCoordinate, TranslationVector, offset_coordinate
from .pipeline import (
    DEFAULT_CANDIDATES,
    DEFAULT_FRAMES,
    DEFAULT_GRID,
    DEFAULT_SPACING_M,
    GuidanceRecord,
    Vocabulary,
    assemble_nsft_pairs,
    assemble_preference_tuples,
    corpus_texts,
    iter_jsonl,
    load_scenes,
    read_jsonl,
    run_batch,
    synthetic_scenes,
    write_jsonl,
)
from .routesim import DEFAULT_SPEED_MPS, RoadGraph
from .selector import SimilarityWeights, select_best

log = logging.getLogger("navigscene")


@dataclass(frozen=True)
class RunConfig:
    frames: int = DEFAULT_FRAMES
    num_candidates: int = DEFAULT_CANDIDATES
    weights: str = "0.5,0.3,0.2"
    alpha: float = 0.6
    epochs: int = 10
    lr: float = 1e-4
    seed: int = 0
    speed: float = DEFAULT_SPEED_MPS


_RUN = asdict(RunConfig())

DEFAULTS: dict[str, dict] = {
    "geo-offset": {"dx": 0.0, "dy": 0.0, "dz": 0.0, "radius": EARTH_RADIUS_M},
    "build": {
        **{k: _RUN[k] for k in ("frames", "num_candidates", "weights", "seed", "speed")},
        "graph_seed": None, "graph": None, "grid_w": DEFAULT_GRID, "grid_h": DEFAULT_GRID,
        "spacing": DEFAULT_SPACING_M, "jobs": 1, "strict": False,
    },
    "select": {"weights": _RUN["weights"]},
    "nsft-pairs": {
        "tuples_out": None, "vocab_size": 64, "max_len": npo.DEFAULT_MAX_LEN, "seed": 0,
        "reward_checkpoint": None, "ref_checkpoint": None, "vocab_out": None,
    },
    "npo-train": {
        **{k: _RUN[k] for k in ("alpha", "epochs", "lr", "seed")},
        "dataset": None, "vocab_size": 8, "num_tuples": 16, "init_checkpoint": None,
        "ref_checkpoint": None, "trace_out": None, "steps_per_epoch": 1, "weight_decay": 0.0,
    },
    "fuse-check": {"vocab_dim": 64, "bev_dim": 8, "seed": 0, "tol": 1e-4},
    "synth-scenes": {"n": 50, "seed": 0},
}

REQUIRED = {
    "geo-offset": ("lat", "lon"),
    "build": ("scenes", "out"),
    "select": ("candidates",),
    "nsft-pairs": ("guidance", "qa", "out"),
    "npo-train": ("checkpoint_out",),
    "fuse-check": (),
    "synth-scenes": ("out",),
}


def build_parser() -> tuple[argparse.ArgumentParser, dict[str, argparse.ArgumentParser]]:
    parser = argparse.ArgumentParser(prog="navigscene", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    subs: dict[str, argparse.ArgumentParser] = {}

    def add(name: str, help: str) -> argparse.ArgumentParser:
        p = sub.add_parser(name, help=help, argument_default=argparse.SUPPRESS)
        p.add_argument("--config", help="JSON file supplying option values")
        subs[name] = p
        return p

    p = add("geo-offset", "offset a coordinate by east/north/up meters")
    p.add_argument("--lat", type=float, help="origin latitude, degrees")
    p.add_argument("--lon", type=float, help="origin longitude, degrees")
    p.add_argument("--dx", type=float, help="meters east (default 0)")
    p.add_argument("--dy", type=float, help="meters north (default 0)")
    p.add_argument("--dz", type=float, help="meters up, ignored (default 0)")
    p.add_argument("--radius", type=float, help="earth radius in meters (default 6378137)")

    p = add("build", "generate navigation guidance for a scenes JSONL file")
    p.add_argument("--scenes", help="input scenes JSONL")
    p.add_argument("--out", help="output guidance JSONL")
    p.add_argument("--seed", type=int, help="generator seed (default 0)")
    p.add_argument("--graph-seed", type=int, help="road graph seed (default: --seed)")
    p.add_argument("--graph", help="road graph JSON to use for every scene")
    p.add_argument("--frames", type=int, help="frames sampled per route (default 20)")
    p.add_argument("--num-candidates", type=int, help="candidates per scene (default 5)")
    p.add_argument("--weights", help="eta_inter,eta_dist,eta_word (default 0.5,0.3,0.2)")
    p.add_argument("--speed", type=float, help="constant speed in m/s (default 10)")
    p.add_argument("--grid-w", type=int, help="grid columns (default 9)")
    p.add_argument("--grid-h", type=int, help="grid rows (default 9)")
    p.add_argument("--spacing", type=float, help="block length in meters (default 100)")
    p.add_argument("--jobs", type=int, help="worker threads (default 1)")
    p.add_argument("--strict", action="store_true", help="abort on the first failing scene")

    p = add("select", "pick the self-consistent candidate for each CandidateSet line")
    p.add_argument("--candidates", help="JSONL of {scene_id, seed, texts}")
    p.add_argument("--weights", help="eta_inter,eta_dist,eta_word (default 0.5,0.3,0.2)")

    p = add("nsft-pairs", "build NSFT prompt pairs and optional NPO preference tuples")
    p.add_argument("--guidance", help="guidance JSONL from `build`")
    p.add_argument("--qa", help="JSONL of {scene_id, question, answer}")
    p.add_argument("--out", help="output NSFT pairs JSONL")
    p.add_argument("--tuples-out", help="also write preference tuples here")
    p.add_argument("--vocab-out", help="write the token vocabulary here")
    p.add_argument("--vocab-size", type=int, help="toy model vocabulary size (default 64)")
    p.add_argument("--max-len", type=int, help="token cap per sequence (default 8)")
    p.add_argument("--seed", type=int, help="seed for the toy reference model (default 0)")
    p.add_argument("--reward-checkpoint", help="reward model JSON (default: copy of reference)")
    p.add_argument("--ref-checkpoint", help="reference model JSON (default: seeded random)")

    p = add("npo-train", "train a toy reward model with the NPO objective")
    p.add_argument("--dataset", help="preference tuple JSONL (default: seeded toy dataset)")
    p.add_argument("--alpha", type=float, help="mutual-information trade-off (default 0.6)")
    p.add_argument("--epochs", type=int, help="epochs (default 10)")
    p.add_argument("--lr", type=float, help="AdamW learning rate (default 1e-4)")
    p.add_argument("--weight-decay", type=float, help="AdamW decoupled weight decay (default 0)")
    p.add_argument("--steps-per-epoch", type=int, help="full-batch steps per epoch (default 1)")
    p.add_argument("--seed", type=int, help="seed for init and toy data (default 0)")
    p.add_argument("--vocab-size", type=int, help="toy vocabulary without --dataset (default 8)")
    p.add_argument("--num-tuples", type=int, help="toy dataset size without --dataset (default 16)")
    p.add_argument("--init-checkpoint", help="initial reward model JSON")
    p.add_argument("--ref-checkpoint", help="reference model JSON (default: copy of init)")
    p.add_argument("--checkpoint-out", help="trained reward model JSON")
    p.add_argument("--trace-out", help="write the loss trace as JSON")

    p = add("fuse-check", "finite-difference check of the fusion path gradients")
    p.add_argument("--vocab-dim", type=int, help="VLM output width (default 64)")
    p.add_argument("--bev-dim", type=int, help="BEV feature width (default 8)")
    p.add_argument("--seed", type=int, help="instance seed (default 0)")
    p.add_argument("--tol", type=float, help="pass threshold (default 1e-4)")

    p = add("synth-scenes", "write seeded synthetic scenes JSONL")
    p.add_argument("--n", type=int, help="number of scenes (default 50)")
    p.add_argument("--seed", type=int, help="seed (default 0)")
    p.add_argument("--out", help="output scenes JSONL")
    return parser, subs


def _options(args: argparse.Namespace, sub: argparse.ArgumentParser) -> SimpleNamespace:
    cmd = args.command
    merged = dict(DEFAULTS[cmd])
    explicit = {k: v for k, v in vars(args).items() if k not in ("command", "config", "verbose")}
    config_path = getattr(args, "config", None)
    if config_path:
        try:
            with open(config_path, encoding="utf-8") as f:
                from_file = json.load(f)
        except (OSError, json.JSONDecodeError) as exc:
            sub.error(f"cannot read config {config_path}: {exc}")
        if not isinstance(from_file, dict):
            sub.error("config file must hold a JSON object")
        merged.update({k.replace("-", "_"): v for k, v in from_file.items()})
    merged.update(explicit)
    missing = [k for k in REQUIRED[cmd] if merged.get(k) is None]
    if missing:
        sub.error("missing required option(s): " + ", ".join("--" + m.replace("_", "-") for m in missing))
    return SimpleNamespace(**merged)


def cmd_geo_offset(o) -> int:
    p = offset_coordinate(
        GeoCoordinate(float(o.lat), float(o.lon)),
        TranslationVector(float(o.dx), float(o.dy), float(o.dz)),
        EarthModel(float(o.radius)),
    )
    print(f"{p.lat:.6f}, {p.lon:.6f}")
    return 0


def cmd_build(o) -> int:
    scenes = load_scenes(o.scenes)
    graph = None
    if o.graph:
        with open(o.graph, encoding="utf-8") as f:
            graph = RoadGraph.from_json(f.read())
    result = run_batch(
        scenes,
        StubGenerator(),
        SimilarityWeights.parse(str(o.weights)),
        F=int(o.frames),
        N=int(o.num_candidates),
        seed=int(o.seed),
        graph=graph,
        graph_seed=o.graph_seed,
        grid=(int(o.grid_w), int(o.grid_h)),
        spacing_m=float(o.spacing),
        speed_mps=float(o.speed),
        jobs=int(o.jobs),
        strict=bool(o.strict),
    )
    write_jsonl(result.records, o.out)
    for failure in result.failures:
        print(f"skipped: {failure}", file=sys.stderr)
    print(f"build: {len(result.records)} ok, {len(result.failures)} skipped -> {o.out}")
    return 0


def cmd_select(o) -> int:
    w = SimilarityWeights.parse(str(o.weights))
    for _, obj in iter_jsonl(o.candidates):
        cs = CandidateSet.from_dict(obj)
        report = select_best(cs, w)
        print(json.dumps({"scene_id": cs.scene_id, **report.to_dict(), "winner_text": report.winner_text}))
    return 0


def cmd_nsft_pairs(o) -> int:
    guidance = [GuidanceRecord.from_dict(d) for d in read_jsonl(o.guidance)]
    qa = read_jsonl(o.qa)
    pairs = assemble_nsft_pairs(guidance, qa)
    write_jsonl(pairs, o.out)
    print(f"nsft-pairs: {len(pairs)} pairs -> {o.out}")
    if o.tuples_out:
        V = int(o.vocab_size)
        vocab = Vocabulary.build(corpus_texts(pairs, guidance), V)
        ref = npo.ToyLM.load(o.ref_checkpoint) if o.ref_checkpoint else npo.random_lm(V, int(o.seed))
        reward = npo.ToyLM.load(o.reward_checkpoint) if o.reward_checkpoint else ref.copy()
        tuples = assemble_preference_tuples(pairs, guidance, reward, ref, vocab, int(o.max_len))
        write_jsonl(tuples, o.tuples_out)
        if o.vocab_out:
            with open(o.vocab_out, "w", encoding="utf-8") as f:
                json.dump(vocab.to_dict(), f)
        print(f"nsft-pairs: {len(tuples)} preference tuples -> {o.tuples_out}")
    return 0


def cmd_npo_train(o) -> int:
    seed = int(o.seed)
    init = npo.ToyLM.load(o.init_checkpoint) if o.init_checkpoint else None
    if o.dataset:
        data = [npo.PreferenceTuple.from_dict(d) for d in read_jsonl(o.dataset)]
        if init is None:
            top = max((max(seq, default=0) for t in data for seq in t.to_dict().values()), default=0)
            init = npo.random_lm(max(int(o.vocab_size), top + 1), seed)
    else:
        if init is None:
            init = npo.random_lm(int(o.vocab_size), seed)
        ref0 = npo.ToyLM.load(o.ref_checkpoint) if o.ref_checkpoint else init
        data = npo.toy_dataset(init, ref0, int(o.num_tuples), seed)
    ref = npo.ToyLM.load(o.ref_checkpoint) if o.ref_checkpoint else init.copy()
    cfg = npo.NpoConfig(
        alpha=float(o.alpha),
        lr=float(o.lr),
        epochs=int(o.epochs),
        steps_per_epoch=int(o.steps_per_epoch),
        weight_decay=float(o.weight_decay),
    )
    result = npo.train(init, ref, data, cfg)
    result.model.save(o.checkpoint_out)
    for k, loss in enumerate(result.losses[:-1]):
        print(f"epoch {k}: loss {loss:.12f}")
    print(f"final: loss {result.losses[-1]:.12f}")
    if o.trace_out:
        with open(o.trace_out, "w", encoding="utf-8") as f:
            json.dump({"losses": result.losses}, f)
    return 0


def cmd_fuse_check(o) -> int:
    vocab_dim, bev_dim = int(o.vocab_dim), int(o.bev_dim)
    if vocab_dim < 1 or bev_dim < 1:
        raise ValidationError(f"--vocab-dim and --bev-dim must be positive, got {vocab_dim}, {bev_dim}")
    inst = fusion.random_instance(vocab_dim, bev_dim, int(o.seed))
    err = fusion.grad_check(inst.bev, inst.vlm_dist, inst.phi_red, inst.phi_fus, inst.head)
    ok = err < float(o.tol)
    print(f"max relative error: {err:.6e} {'PASS' if ok else 'FAIL'}")
    return 0 if ok else 1


def cmd_synth_scenes(o) -> int:
    n = write_jsonl(synthetic_scenes(int(o.n), int(o.seed)), o.out)
    print(f"synth-scenes: {n} scenes -> {o.out}")
    return 0


HANDLERS = {
    "geo-offset": cmd_geo_offset,
    "build": cmd_build,
    "select": cmd_select,
    "nsft-pairs": cmd_nsft_pairs,
    "npo-train": cmd_npo_train,
    "fuse-check": cmd_fuse_check,
    "synth-scenes": cmd_synth_scenes,
}


def main(argv: list[str] | None = None) -> int:
    parser, subs = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    opts = _options(args, subs[args.command])
    try:
        return HANDLERS[args.command](opts)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (NavigSceneError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
