"""Command-line entry point: corpus generation, training, evaluation, reports.

    hussim gen-corpus --n 10000 --seed 7
    hussim train --variant hus --epochs 10 --batch 32 --lr 1e-3 --seed 7
    hussim evaluate --checkpoint hus.npz --preset robust --goals 1000 --seed 7
    hussim matrix --goals 1000 --seed 7
    hussim inspect transcripts.jsonl

Settings come from built-in defaults, then an optional JSON ``--config``
file, then flags (flags win). Output files land in ``--output-dir``, else
``$HUSSIM_OUTPUT_DIR``, else the working directory. Every command is
deterministic under ``--seed``; without one a seed is drawn and logged.

Exit codes: 0 success, 1 missing input file or runtime failure, 2 bad usage.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import secrets
import sys
import time
from dataclasses import fields

from .acts import Schema, movie_schema, turn_to_dict
from .arena import evaluate, format_table, read_transcripts, reports_to_json, summarize
from .corpusgen import CorpusConfig, generate_corpus, read_corpus, write_corpus
from .policies import PRESETS, policy_config
from .simulators import VARIANTS, TrainConfig, UserSimulator, train, write_curves

log = logging.getLogger("hussim")

OUTPUT_ENV = "HUSSIM_OUTPUT_DIR"


class UsageError(Exception):
    """Bad flag combination or config content; reported with exit code 2."""


# --------------------------------------------------------------------------
# settings resolution


def load_config(path):
    if path is None:
        return {}
    with open(path) as f:
        cfg = json.load(f)
    if not isinstance(cfg, dict):
        raise UsageError(f"config file {path} must hold a JSON object")
    return cfg


def _section(cfg, name):
    sec = cfg.get(name, {})
    if not isinstance(sec, dict):
        raise UsageError(f"config section {name!r} must be an object")
    return sec


def pick(flag, cfg_value, default=None):
    """Flag beats config file beats default."""
    if flag is not None:
        return flag
    if cfg_value is not None:
        return cfg_value
    return default


def resolve_seed(args, cfg):
    seed = pick(args.seed, cfg.get("seed"))
    if seed is None:
        seed = secrets.randbelow(2**31)
        log.warning("no --seed given; using seed %d", seed)
    return int(seed)


def output_dir(args, cfg):
    d = pick(args.output_dir, cfg.get("output_dir"), os.environ.get(OUTPUT_ENV) or ".")
    os.makedirs(d, exist_ok=True)
    return d


def _out_path(outdir, path, default_name):
    path = path or default_name
    return path if os.path.isabs(path) or os.path.dirname(path) else os.path.join(outdir, path)


def load_schema(args, cfg):
    path = pick(getattr(args, "schema", None), cfg.get("schema"))
    return Schema.load(path) if path else movie_schema()


def train_config(args, cfg, seed) -> TrainConfig:
    sec = _section(cfg, "train")
    known = {f.name for f in fields(TrainConfig)}
    unknown = set(sec) - known
    if unknown:
        raise UsageError(f"unknown train config keys: {sorted(unknown)}")
    flag_map = {
        "epochs": args.epochs, "batch_size": args.batch, "lr": args.lr,
        "embedding_dim": args.embedding_dim, "state_dim": args.state_dim,
        "latent_dim": args.latent_dim, "alpha": args.alpha, "dropout": args.dropout,
    }
    values = dict(sec)
    values.update({k: v for k, v in flag_map.items() if v is not None})
    values["seed"] = seed
    return TrainConfig(**values)


def policy_from(args, cfg):
    sec = _section(cfg, "policy")
    preset = pick(args.preset, sec.get("preset"), "robust")
    if preset not in PRESETS:
        raise UsageError(f"unknown policy preset {preset!r}; choose from {sorted(PRESETS)}")
    return preset, policy_config(
        preset,
        confusion_rate=pick(args.confusion_rate, sec.get("confusion_rate")),
        confirm_strategy=pick(args.confirm_strategy, sec.get("confirm_strategy")),
        max_reask=pick(args.max_reask, sec.get("max_reask")),
    )


def corpus_config(args, cfg, seed, n_default=10000) -> CorpusConfig:
    sec = _section(cfg, "corpus")
    return CorpusConfig(
        n_dialogues=int(pick(getattr(args, "n", None), sec.get("n_dialogues"), n_default)),
        seed=seed,
        dontcare_probability=pick(getattr(args, "dontcare_probability", None),
                                  sec.get("dontcare_probability"), 0.3),
        channel_noise=pick(getattr(args, "channel_noise", None), sec.get("channel_noise"), 0.05),
    )


def _require_file(path, what):
    if not path:
        raise UsageError(f"a {what} path is required")
    if not os.path.isfile(path):
        raise FileNotFoundError(f"{what} not found: {path}")


# --------------------------------------------------------------------------
# subcommands


def cmd_gen_corpus(args, cfg):
    seed = resolve_seed(args, cfg)
    outdir = output_dir(args, cfg)
    schema = load_schema(args, cfg)
    config = corpus_config(args, cfg, seed)
    path = _out_path(outdir, args.out, "corpus.jsonl")
    dialogues = generate_corpus(config, schema, path)
    print(f"wrote {len(dialogues)} dialogues to {path}")
    return 0


def _train_variant(variant, corpus, schema, config, ckpt_path, curves_path):
    t0 = time.perf_counter()
    result = train(corpus, variant, config, schema,
                   progress=lambda r: log.info("%s epoch %d: train %.4f val %.4f acc %.4f", variant,
                                               r["epoch"], r["train_loss"], r["val_loss"],
                                               r["val_token_acc"]))
    elapsed = time.perf_counter() - t0
    result.simulator.save(ckpt_path)
    write_curves(curves_path, result.curves)
    return result, elapsed


def cmd_train(args, cfg):
    seed = resolve_seed(args, cfg)
    outdir = output_dir(args, cfg)
    schema = load_schema(args, cfg)
    variant = pick(args.variant, cfg.get("variant"), "hus")
    if variant not in VARIANTS:
        raise UsageError(f"unknown variant {variant!r}")
    corpus_path = pick(args.corpus, cfg.get("corpus"))
    _require_file(corpus_path, "corpus")
    config = train_config(args, cfg, seed)
    corpus = read_corpus(corpus_path)
    ckpt = _out_path(outdir, args.out, f"{variant}.npz")
    curves = _out_path(outdir, args.curves, f"{variant}_curves.csv")
    result, elapsed = _train_variant(variant, corpus, schema, config, ckpt, curves)
    best = result.curves[result.best_epoch - 1]
    print(f"{variant}: best epoch {result.best_epoch}, val token acc {best['val_token_acc']:.4f}, "
          f"{elapsed:.1f}s; checkpoint {ckpt}, curves {curves}")
    return 0


def cmd_evaluate(args, cfg):
    seed = resolve_seed(args, cfg)
    outdir = output_dir(args, cfg)
    ckpt = pick(args.checkpoint, cfg.get("checkpoint"))
    _require_file(ckpt, "checkpoint")
    sim = UserSimulator.load(ckpt)
    preset, policy = policy_from(args, cfg)
    n_goals = int(pick(args.goals, _section(cfg, "evaluate").get("goals"), 1000))
    stem = f"{sim.variant}_{preset}"
    transcripts = _out_path(outdir, args.transcripts, f"{stem}_transcripts.jsonl")
    report = evaluate(sim, policy, n_goals, seed, transcripts_out=transcripts)
    rows = [(sim.variant, preset, report)]
    with open(_out_path(outdir, args.report, f"{stem}_report.json"), "w") as f:
        f.write(reports_to_json(rows))
    sys.stdout.write(format_table(rows))
    return 0


def run_matrix(seed, goals, checkpoint_dir, schema, corpus_size=2000, train_cfg=None, variants=VARIANTS,
               presets=("robust", "brittle")):
    """Train any missing checkpoint, then evaluate every (variant, preset) pair."""
    os.makedirs(checkpoint_dir, exist_ok=True)
    train_cfg = train_cfg or TrainConfig(seed=seed)
    corpus = None
    rows = []
    for variant in variants:
        ckpt = os.path.join(checkpoint_dir, f"{variant}.npz")
        if not os.path.isfile(ckpt):
            if corpus is None:
                corpus_path = os.path.join(checkpoint_dir, "corpus.jsonl")
                corpus = generate_corpus(CorpusConfig(n_dialogues=corpus_size, seed=seed), schema,
                                         corpus_path)
            log.info("training %s (no checkpoint at %s)", variant, ckpt)
            result, elapsed = _train_variant(variant, corpus, schema, train_cfg, ckpt,
                                             os.path.join(checkpoint_dir, f"{variant}_curves.csv"))
            with open(os.path.join(checkpoint_dir, f"{variant}_train.json"), "w") as f:
                json.dump({"seconds": elapsed, "best_epoch": result.best_epoch,
                           "corpus_size": len(corpus)}, f, indent=2)
        sim = UserSimulator.load(ckpt)
        for preset in presets:
            report = evaluate(sim, policy_config(preset), goals, seed)
            rows.append((variant, preset, report))
    return rows


def cmd_matrix(args, cfg):
    seed = resolve_seed(args, cfg)
    outdir = output_dir(args, cfg)
    schema = load_schema(args, cfg)
    sec = _section(cfg, "matrix")
    goals = int(pick(args.goals, sec.get("goals"), 1000))
    corpus_size = int(pick(args.corpus_size, sec.get("corpus_size"), 2000))
    ckpt_dir = pick(args.checkpoint_dir, sec.get("checkpoint_dir"), os.path.join(outdir, "checkpoints"))
    rows = run_matrix(seed, goals, ckpt_dir, schema, corpus_size, train_config(args, cfg, seed))
    table = format_table(rows)
    with open(os.path.join(outdir, "matrix.txt"), "w") as f:
        f.write(table)
    with open(os.path.join(outdir, "matrix.json"), "w") as f:
        f.write(reports_to_json(rows))
    sys.stdout.write(table)
    return 0


def _fmt_turn(turn):
    acts = []
    for a in turn.acts:
        args = ", ".join(s if v is None else f"{s}={v}" for s, v in a.args)
        acts.append(f"{a.name}({args})")
    flag = "  [malformed]" if turn.malformed else ""
    return f"{turn.speaker.value.lower():>6}: {' '.join(acts)}{flag}"


def cmd_inspect(args, cfg):
    _require_file(args.path, "transcript file")
    with open(args.path) as f:
        first = f.readline()
    if not first.strip():
        print("(empty file)")
        return 0
    if "termination" in json.loads(first):
        items = read_transcripts(args.path)
    else:
        items = read_corpus(args.path)
    for i, item in enumerate(items[: args.limit]):
        goal = ", ".join(f"{k}={'*' if v is None else v}" for k, v in item.goal.constraints.items())
        print(f"#{i}  goal: {goal}")
        for turn in item.turns:
            print("  " + _fmt_turn(turn))
        if hasattr(item, "termination"):
            print(f"  -> {item.termination}; confirmed {item.confirmed or item.confirmed_before_cap}")
        else:
            print(f"  -> {item.outcome}")
        print()
    if args.summary and items and hasattr(items[0], "termination"):
        schema = load_schema(args, cfg)
        print(json.dumps(summarize(items, schema).to_dict(), indent=2))
    return 0


# --------------------------------------------------------------------------
# argument parsing


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON file with settings; flags override it")
    common.add_argument("--seed", type=int, help="master seed (drawn and logged when absent)")
    common.add_argument("--output-dir", help=f"where outputs go (default ${OUTPUT_ENV} or .)")
    common.add_argument("--schema", help="schema JSON (default: bundled movie-ticket schema)")
    common.add_argument("-v", "--verbose", action="store_true")

    train_flags = argparse.ArgumentParser(add_help=False)
    train_flags.add_argument("--epochs", type=int)
    train_flags.add_argument("--batch", type=int, help="mini-batch size")
    train_flags.add_argument("--lr", type=float)
    train_flags.add_argument("--embedding-dim", type=int)
    train_flags.add_argument("--state-dim", type=int)
    train_flags.add_argument("--latent-dim", type=int)
    train_flags.add_argument("--alpha", type=float, help="KL weight for the latent variants")
    train_flags.add_argument("--dropout", type=float)

    policy_flags = argparse.ArgumentParser(add_help=False)
    policy_flags.add_argument("--preset", choices=sorted(PRESETS))
    policy_flags.add_argument("--confusion-rate", type=float)
    policy_flags.add_argument("--confirm-strategy", choices=["eager", "batch"])
    policy_flags.add_argument("--max-reask", type=int)

    parser = argparse.ArgumentParser(prog="hussim", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-corpus", parents=[common], help="generate an agenda-vs-FSM corpus")
    p.add_argument("--n", type=int, help="number of dialogues (default 10000)")
    p.add_argument("--dontcare-probability", type=float)
    p.add_argument("--channel-noise", type=float)
    p.add_argument("--out", help="corpus file (default corpus.jsonl)")
    p.set_defaults(func=cmd_gen_corpus)

    p = sub.add_parser("train", parents=[common, train_flags], help="train one simulator variant")
    p.add_argument("--variant", choices=VARIANTS)
    p.add_argument("--corpus", help="corpus JSONL file")
    p.add_argument("--out", help="checkpoint file (default <variant>.npz)")
    p.add_argument("--curves", help="training-curve CSV (default <variant>_curves.csv)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", parents=[common, policy_flags], help="run one simulator against a policy")
    p.add_argument("--checkpoint")
    p.add_argument("--goals", type=int, help="number of goals (default 1000)")
    p.add_argument("--transcripts", help="transcript JSONL output")
    p.add_argument("--report", help="report JSON output")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("matrix", parents=[common, train_flags],
                       help="all variants x both presets; trains missing checkpoints")
    p.add_argument("--goals", type=int, help="goals per cell (default 1000)")
    p.add_argument("--corpus-size", type=int, help="dialogues for training (default 2000)")
    p.add_argument("--checkpoint-dir", help="default <output-dir>/checkpoints")
    p.set_defaults(func=cmd_matrix)

    p = sub.add_parser("inspect", parents=[common], help="pretty-print transcripts or a corpus")
    p.add_argument("path")
    p.add_argument("--limit", type=int, default=5)
    p.add_argument("--summary", action="store_true", help="also print aggregate metrics")
    p.set_defaults(func=cmd_inspect)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config)
        return args.func(args, cfg)
    except UsageError as e:
        parser.print_usage(sys.stderr)
        print(f"hussim: error: {e}", file=sys.stderr)
        return 2
    except FileNotFoundError as e:
        print(f"hussim: error: {e}", file=sys.stderr)
        return 1
    except (ValueError, json.JSONDecodeError) as e:
        print(f"hussim: error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
