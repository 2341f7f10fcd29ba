"""Command line entry point: ``scenectx <command> [flags]``.

Commands map one-to-one onto pipeline stages::

    vocab   build vocab.json from a category list or a preset
    import  COCO instances JSON -> scenes.jsonl (+ filtered train/eval splits)
    synth   synthetic themed world -> train.jsonl / eval.jsonl / world.json
    train   fit the masked-token model (+ count tables for the baselines)
    attack  simulate label-space attacks on benign scenes -> attacks.jsonl
    score   consistency scores for benign and attacked scenes -> scores.jsonl
    eval    AUC / ROC / score densities -> metrics.json, roc_*.csv, density_*.csv

``--config file.json`` supplies defaults for any flag of the chosen command
(keys are the flag names with dashes replaced by underscores); flags given on
the command line win. Each command writes ``manifest_<command>.json`` in its
output directory with the resolved configuration and input hashes.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from pathlib import Path

from . import __version__
from .attacks import ATTACK_TYPES, POOL_POLICIES, PoolPolicy, generate_attack_set, read_attacks, write_attacks
from .baselines import (
    CooccurrenceTable,
    conditional,
    fit_counts,
    oracle_position_confidences,
    unigram_score,
)
from .corpus import (
    SyntheticWorldSpec,
    coco_category_names,
    filter_min_objects,
    generate_synthetic,
    import_coco,
    load_scenes,
    read_records,
    sentence_to_record,
    split,
    write_records,
)
from .errors import SceneCtxError, UsageError
from .evaluate import report
from .model import ModelConfig, OptimizerState, init_params, load_checkpoint, n_params, save_checkpoint, train
from .presets import COCO_CATEGORIES, VOC_CATEGORIES
from .scene_lang import GridSpec, Vocabulary, tokenize
from .scorer import RELAX, STRICT, score_batch, write_reports

log = logging.getLogger("scenectx")

MODEL_SCORERS = (STRICT, RELAX)
SCORERS = MODEL_SCORERS + ("unigram", "cooccurrence", "oracle")


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def _write_manifest(out: Path, command: str, args, inputs) -> None:
    resolved = {k: v for k, v in sorted(vars(args).items()) if k not in ("func", "command")}
    doc = {
        "command": command,
        "version": __version__,
        "config": resolved,
        "inputs": {str(p): _sha256(p) for p in inputs if p},
    }
    (out / f"manifest_{command}.json").write_text(json.dumps(doc, indent=2, sort_keys=True, default=str) + "\n")


def _out_dir(args) -> Path:
    if not args.out:
        raise UsageError("--out is required")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _need(args, *names):
    for n in names:
        if getattr(args, n) in (None, ""):
            raise UsageError(f"--{n.replace('_', '-')} is required for '{args.command}'")


def _existing(path, what) -> Path:
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"{what} not found: {p}")
    return p


def _csv_list(text, allowed, what):
    items = [x.strip() for x in str(text).split(",") if x.strip()]
    for x in items:
        if x not in allowed:
            raise UsageError(f"unknown {what} {x!r}; choose from {', '.join(allowed)}")
    return items


# ---------------------------------------------------------------- commands

def cmd_vocab(args) -> int:
    grid = GridSpec.parse(args.grid)
    chosen = [bool(args.categories), args.voc, args.coco]
    if sum(chosen) != 1:
        raise UsageError("give exactly one of --categories FILE, --voc, --coco")
    if args.voc:
        cats = VOC_CATEGORIES
    elif args.coco:
        cats = COCO_CATEGORIES
    else:
        lines = _existing(args.categories, "category file").read_text(encoding="utf-8").splitlines()
        cats = tuple(line.strip() for line in lines if line.strip())
    v = Vocabulary(tuple(cats), grid)
    out = _out_dir(args)
    v.save(out / "vocab.json")
    _write_manifest(out, "vocab", args, [args.categories])
    print(f"{v.n_object_tokens} object tokens ({v.n_categories} categories x {grid.n_cells} cells); "
          f"vocabulary size {v.size} with PAD and MASK")
    return 0


def cmd_import(args) -> int:
    _need(args, "coco_json")
    src = _existing(args.coco_json, "COCO instances file")
    out = _out_dir(args)
    n = import_coco(src, out / "scenes.jsonl")
    if args.vocab:
        v = Vocabulary.load(_existing(args.vocab, "vocabulary"))
    else:
        with open(src, encoding="utf-8") as fh:
            names = coco_category_names(json.load(fh))
        v = Vocabulary(tuple(names), GridSpec.parse(args.grid))
        v.save(out / "vocab.json")
    records = filter_min_objects(read_records(out / "scenes.jsonl"), args.min_objects)
    tr, ev = split(records, args.train_fraction, args.seed)
    write_records(tr, out / "train.jsonl")
    write_records(ev, out / "eval.jsonl")
    _write_manifest(out, "import", args, [src, args.vocab])
    print(f"imported {n} scenes; {len(records)} with >= {args.min_objects} objects -> "
          f"{len(tr)} train / {len(ev)} eval")
    return 0


def cmd_synth(args) -> int:
    world = SyntheticWorldSpec(
        n_themes=args.themes,
        group_size=args.group_size,
        grid=GridSpec.parse(args.grid),
        home_prob=args.home_prob,
        object_count_range=(args.min_count, args.max_count),
        seed=args.seed,
    )
    v = world.vocabulary()
    out = _out_dir(args)
    sents = generate_synthetic(world, args.n_train + args.n_eval)
    recs = [sentence_to_record(f"syn-{i:07d}", s, v) for i, s in enumerate(sents)]
    write_records(recs[: args.n_train], out / "train.jsonl")
    write_records(recs[args.n_train :], out / "eval.jsonl")
    v.save(out / "vocab.json")
    (out / "world.json").write_text(json.dumps(world.to_json(), indent=2) + "\n")
    _write_manifest(out, "synth", args, [])
    print(f"synthetic world: {world.n_themes} themes x {world.group_size} categories on {world.grid}; "
          f"{args.n_train} train / {args.n_eval} eval scenes")
    return 0


def cmd_train(args) -> int:
    _need(args, "scenes", "vocab")
    v = Vocabulary.load(_existing(args.vocab, "vocabulary"))
    scenes = filter_min_objects(load_scenes(_existing(args.scenes, "scenes file"), v), args.min_objects)
    if not scenes:
        raise UsageError(f"no training scenes with >= {args.min_objects} objects", module="train")
    cfg = ModelConfig(
        vocab_size=v.size,
        n_layers=args.layers,
        n_heads=args.heads,
        hidden_dim=args.hidden,
        ffn_dim=args.ffn,
        max_seq_len=args.max_seq_len,
        dropout_prob=args.dropout,
        n_cells=v.grid.n_cells,
        seed=args.seed,
    )
    corpus = [tokenize(s, v) for _, s in scenes]
    params = init_params(cfg)
    opt = OptimizerState.for_params(params, lr=args.lr)
    print(f"training {n_params(cfg)} parameters on {len(corpus)} sentences for {args.epochs} epochs")
    params, history = train(params, cfg, opt, corpus, args.epochs, args.batch_size, seed=args.seed)
    out = _out_dir(args)
    save_checkpoint(params, cfg, out / "model.ckpt")
    fit_counts([s for _, s in scenes], v, alpha=args.alpha).save(out / "counts.json")
    with open(out / "loss.csv", "w", encoding="utf-8", newline="\n") as fh:
        fh.write("epoch,loss\n")
        for i, loss in enumerate(history, start=1):
            fh.write(f"{i},{loss!r}\n")
    _write_manifest(out, "train", args, [args.scenes, args.vocab])
    if history:
        print(f"final epoch loss {history[-1]:.4f}")
    return 0


def _load_world(path):
    if not path:
        return None
    return SyntheticWorldSpec.from_json(json.loads(_existing(path, "world file").read_text()))


def cmd_attack(args) -> int:
    _need(args, "scenes", "vocab")
    v = Vocabulary.load(_existing(args.vocab, "vocabulary"))
    scenes = filter_min_objects(load_scenes(_existing(args.scenes, "scenes file"), v), args.min_objects)
    policy = PoolPolicy(args.pool, v.n_categories, v.grid, _load_world(args.world))
    records = []
    for i, t in enumerate(_csv_list(args.types, ATTACK_TYPES, "attack type")):
        # each attack type gets its own master seed so adding a type never shifts the others
        recs = generate_attack_set(scenes, t, args.n, args.seed + 1000003 * i, policy)
        records.extend(recs)
        print(f"{t}: {len(recs)} attacks ({args.pool} pool)")
    out = _out_dir(args)
    write_attacks(records, out / "attacks.jsonl")
    _write_manifest(out, "attack", args, [args.scenes, args.vocab, args.world])
    return 0


def _baseline_rows(scorer, sentences, table, world):
    rows = []
    cond = conditional(table) if scorer == "cooccurrence" else None
    for s in sentences:
        if scorer == "unigram":
            per = [unigram_score(table, [w]) for w in s]
        elif scorer == "cooccurrence":
            if len(s) < 2:
                rows.append(None)
                continue
            per = [
                max(cond[w.category, o.category] for j, o in enumerate(s) if j != i) for i, w in enumerate(s)
            ]
        else:
            per = oracle_position_confidences(world, list(s))
        rows.append((min(per), per))
    return rows


def cmd_score(args) -> int:
    _need(args, "vocab")
    if not args.scenes and not args.attacks:
        raise UsageError("give --scenes and/or --attacks to score")
    v = Vocabulary.load(_existing(args.vocab, "vocabulary"))
    scorers = _csv_list(args.scorers, SCORERS, "scorer")

    items = []  # (set tag, scene_id, sentence)
    if args.scenes:
        for sid, s in filter_min_objects(load_scenes(_existing(args.scenes, "scenes file"), v), args.min_objects):
            items.append(("benign", sid, s))
    if args.attacks:
        for i, rec in enumerate(read_attacks(_existing(args.attacks, "attacks file"))):
            items.append((rec.tag, rec.scene_id, rec.attacked))

    params = cfg = table = world = None
    if any(s in MODEL_SCORERS for s in scorers):
        _need(args, "checkpoint")
        params, cfg = load_checkpoint(_existing(args.checkpoint, "checkpoint"))
        if cfg.vocab_size != v.size or cfg.n_cells != v.grid.n_cells:
            raise UsageError(f"checkpoint {args.checkpoint} was trained on a different vocabulary", module="score")
    if any(s in ("unigram", "cooccurrence") for s in scorers):
        _need(args, "table")
        table = CooccurrenceTable.load(_existing(args.table, "count table"))
    if "oracle" in scorers:
        _need(args, "world")
        world = _load_world(args.world)

    rows = []
    for scorer in scorers:
        if scorer in MODEL_SCORERS:
            k = args.k or cfg.vocab_size
            reps = score_batch(params, cfg, [tokenize(s, v) for _, _, s in items], scorer, k, args.workers)
            for (tag, sid, _), rep in zip(items, reps):
                if isinstance(rep, Exception):
                    rows.append({"set": tag, "scene_id": sid, "scorer": scorer, "error": str(rep)})
                    continue
                row = rep.to_json(sid)
                row.update({"set": tag, "scorer": scorer})
                rows.append(row)
        else:
            for (tag, sid, s), res in zip(items, _baseline_rows(scorer, [s for _, _, s in items], table, world)):
                if res is None:
                    rows.append({"set": tag, "scene_id": sid, "scorer": scorer, "error": "too short for scorer"})
                    continue
                rows.append({
                    "set": tag, "scene_id": sid, "scorer": scorer, "variant": scorer, "k": None,
                    "score": float(res[0]),
                    "per_position": [{"i": i, "token": v.token_of(w), "confidence": float(c)}
                                     for i, (w, c) in enumerate(zip(s, res[1]))],
                })
    out = _out_dir(args)
    write_reports(rows, out / "scores.jsonl")
    _write_manifest(out, "score", args, [args.scenes, args.attacks, args.checkpoint, args.vocab, args.table, args.world])
    n_err = sum("error" in r for r in rows)
    print(f"scored {len(items)} sentences with {', '.join(scorers)}; {n_err} errors")
    return 0


def collect_results(rows) -> list[dict]:
    """Group score rows into benign-vs-attack sets per scorer, in a stable order."""
    by = {}
    for r in rows:
        if "error" in r:
            continue
        by.setdefault(r["scorer"], {}).setdefault(r["set"], []).append(float(r["score"]))
    results = []
    for scorer in sorted(by):
        sets = by[scorer]
        if "benign" not in sets:
            continue
        for tag in sorted(t for t in sets if t != "benign"):
            results.append({"scorer": scorer, "attack": tag, "benign": sets["benign"], "adversarial": sets[tag]})
    return results


def cmd_eval(args) -> int:
    _need(args, "scores")
    rows = []
    paths = [_existing(p, "scores file") for p in args.scores]
    for p in paths:
        with open(p, encoding="utf-8") as fh:
            rows.extend(json.loads(line) for line in fh if line.strip())
    results = collect_results(rows)
    if not results:
        raise UsageError("scores contain no benign/attack pairs to evaluate", module="eval")
    out = _out_dir(args)
    meta = {"inputs": [_sha256(p) for p in paths], "bins": args.bins}
    doc = report(meta, results, out, n_bins=args.bins)
    _write_manifest(out, "eval", args, paths)
    for e in doc["results"]:
        print(f"{e['attack']:<40} {e['scorer']:<14} AUC {e['auc']:.4f}  (n={e['n_benign']}/{e['n_adversarial']})")
    return 0


# ---------------------------------------------------------------- parser

def build_parser():
    shared = argparse.ArgumentParser(add_help=False)
    shared.add_argument("--config", help="JSON file with defaults for this command's flags")
    shared.add_argument("--seed", type=int, default=0)
    shared.add_argument("--out", help="output directory")
    shared.add_argument("--vocab", help="vocab.json")
    shared.add_argument("--checkpoint", help="model checkpoint")
    shared.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="scenectx", description=__doc__.split("\n")[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    subs = {}

    p = subs["vocab"] = sub.add_parser("vocab", parents=[shared], help="build a vocabulary")
    p.add_argument("--categories", help="text file, one category name per line")
    p.add_argument("--voc", action="store_true", help="PASCAL VOC 20-category preset")
    p.add_argument("--coco", action="store_true", help="MS COCO 80-category preset")
    p.add_argument("--grid", default="3x3")
    p.set_defaults(func=cmd_vocab)

    p = subs["import"] = sub.add_parser("import", parents=[shared], help="import COCO annotations")
    p.add_argument("--coco-json", help="COCO instances JSON")
    p.add_argument("--grid", default="3x3")
    p.add_argument("--min-objects", type=int, default=2)
    p.add_argument("--train-fraction", type=float, default=0.8)
    p.set_defaults(func=cmd_import)

    p = subs["synth"] = sub.add_parser("synth", parents=[shared], help="generate a synthetic world")
    p.add_argument("--n-train", type=int, default=20000)
    p.add_argument("--n-eval", type=int, default=2000)
    p.add_argument("--themes", type=int, default=5)
    p.add_argument("--group-size", type=int, default=4)
    p.add_argument("--grid", default="3x3")
    p.add_argument("--home-prob", type=float, default=0.6)
    p.add_argument("--min-count", type=int, default=2)
    p.add_argument("--max-count", type=int, default=6)
    p.set_defaults(func=cmd_synth)

    p = subs["train"] = sub.add_parser("train", parents=[shared], help="train the model")
    p.add_argument("--scenes", help="training scenes.jsonl")
    p.add_argument("--epochs", type=int, default=30)
    p.add_argument("--batch-size", type=int, default=64)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--layers", type=int, default=6)
    p.add_argument("--heads", type=int, default=12)
    p.add_argument("--hidden", type=int, default=96)
    p.add_argument("--ffn", type=int, default=0, help="0 means 4 x hidden")
    p.add_argument("--max-seq-len", type=int, default=64)
    p.add_argument("--dropout", type=float, default=0.1)
    p.add_argument("--min-objects", type=int, default=2)
    p.add_argument("--alpha", type=float, default=1.0, help="Laplace smoothing for count tables")
    p.set_defaults(func=cmd_train)

    p = subs["attack"] = sub.add_parser("attack", parents=[shared], help="simulate attacks")
    p.add_argument("--scenes", help="benign scenes.jsonl")
    p.add_argument("--types", default=",".join(ATTACK_TYPES), help="comma-separated attack types")
    p.add_argument("--n", type=int, default=1000, help="attacks per type")
    p.add_argument("--pool", default="uniform", choices=POOL_POLICIES)
    p.add_argument("--world", help="world.json (needed by synthetic-only pools)")
    p.add_argument("--min-objects", type=int, default=2)
    p.set_defaults(func=cmd_attack)

    p = subs["score"] = sub.add_parser("score", parents=[shared], help="consistency scores")
    p.add_argument("--scenes", help="benign scenes.jsonl")
    p.add_argument("--attacks", help="attacks.jsonl")
    p.add_argument("--scorers", default="strict", help=f"comma-separated from {', '.join(SCORERS)}")
    p.add_argument("--k", type=int, default=0, help="predicted-list size; 0 means the full vocabulary")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--table", help="counts.json for unigram/cooccurrence")
    p.add_argument("--world", help="world.json for the oracle scorer")
    p.add_argument("--min-objects", type=int, default=2)
    p.set_defaults(func=cmd_score)

    p = subs["eval"] = sub.add_parser("eval", parents=[shared], help="AUC, ROC and densities")
    p.add_argument("--scores", nargs="+", help="one or more scores.jsonl")
    p.add_argument("--bins", type=int, default=50)
    p.set_defaults(func=cmd_eval)
    return parser, subs


def parse_args(argv=None):
    parser, subs = build_parser()
    args = parser.parse_args(argv)
    if args.config:
        try:
            defaults = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config {args.config}: {exc}") from None
        known = set(vars(args))
        unknown = sorted(set(defaults) - known)
        if unknown:
            raise UsageError(f"unknown config keys for '{args.command}': {', '.join(unknown)}")
        subs[args.command].set_defaults(**defaults)
        args = parser.parse_args(argv)
    return args


def main(argv=None) -> int:
    try:
        args = parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        return args.func(args)
    except SceneCtxError as exc:
        print(f"error{exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error[io] {exc}", file=sys.stderr)
        return 7


if __name__ == "__main__":
    sys.exit(main())
