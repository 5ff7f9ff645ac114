"""Command-line front end: ``palid {gen-corpus,train,eval,project,reproduce}``.

Every command takes ``--config`` (JSON), ``--seed`` and ``--out``; flags
win over the same keys in the config file.  Exit codes: 0 on success,
1 on runtime failure, 2 on usage or configuration errors.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .corpus import default_spec, generate_corpus, language_counts, load_spec, save_corpus, save_spec
from .evaluation import format_table
from .experiments import (DESK_SEED, ConfigError, ExperimentConfig, desk_spec, load_experiment, reproduce,
                          run_eval, run_project, run_train)
from .networks import CheckpointError
from .training import TrainingDiverged

EXIT_OK, EXIT_FAILURE, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


def _experiment(args) -> ExperimentConfig:
    cfg = load_experiment(args.config) if args.config else ExperimentConfig()
    if args.seed is not None:
        cfg.seed = args.seed
    if args.out is not None:
        cfg.out = args.out
    for key in ("corpus", "checkpoint", "phonetic_checkpoint", "name"):
        value = getattr(args, key, None)
        if value is not None:
            setattr(cfg, key, value)
    if getattr(args, "languages", None):
        cfg.languages = [int(x) for x in args.languages.split(",")]
    cfg.check()
    return cfg


def cmd_gen_corpus(args) -> int:
    if args.config:
        if not Path(args.config).is_file():
            print(f"error: spec not found: {args.config}", file=sys.stderr)
            return EXIT_USAGE
        try:
            spec = load_spec(args.config)
        except (ValueError, KeyError, TypeError) as exc:
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_USAGE
        if args.seed is not None:
            spec.seed = args.seed
    else:
        seed = 0 if args.seed is None else args.seed
        spec = desk_spec(seed) if args.desk else default_spec(seed=seed)
    if args.out is None:
        raise UsageError("gen-corpus needs --out")
    if args.spec_out:
        save_spec(spec, args.spec_out)
    dataset = generate_corpus(spec)
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    save_corpus(dataset, args.out)
    for lang, n in language_counts(dataset).items():
        print(f"{spec.languages[lang].name}\t{n}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _experiment(args)
    bundle, history, ckpt = run_train(cfg)
    last = history.records[-1]
    print(f"{cfg.name}: {len(history.records)} epochs, final dev loss {last.dev_loss:.4f}; "
          f"wrote {ckpt}")
    return EXIT_OK


def cmd_eval(args) -> int:
    cfg = _experiment(args)
    row = run_eval(cfg)
    print(format_table([row]))
    return EXIT_OK


def cmd_project(args) -> int:
    cfg = _experiment(args)
    points, _ = run_project(cfg)
    print(f"{len(points)} points -> {Path(cfg.out) / (cfg.name + '.scatter.csv')}")
    return EXIT_OK


def cmd_reproduce(args) -> int:
    if args.out is None:
        raise UsageError("reproduce needs --out")
    result = reproduce(args.out, DESK_SEED if args.seed is None else args.seed)
    print(format_table(result["rows"]))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="palid", description="Phone-aware LSTM language ID.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log training progress")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config_help):
        p.add_argument("--config", help=config_help)
        p.add_argument("--seed", type=int)
        p.add_argument("--out")
        return p

    g = common(sub.add_parser("gen-corpus", help="generate a synthetic corpus"),
               "SynthSpec JSON (default: built-in 4-language spec)")
    g.add_argument("--desk", action="store_true", help="use the desk reproduction spec")
    g.add_argument("--spec-out", help="also write the spec that was used")
    g.set_defaults(func=cmd_gen_corpus)

    for name, func, text in (("train", cmd_train, "train one model"),
                             ("eval", cmd_eval, "score a checkpoint on the test split"),
                             ("project", cmd_project, "PCA scatter of phonetic features")):
        p = common(sub.add_parser(name, help=text), "experiment config JSON")
        p.add_argument("--corpus")
        p.add_argument("--name")
        p.add_argument("--languages", help="comma-separated language ids, e.g. 0,1")
        p.add_argument("--checkpoint")
        if name == "train":
            p.add_argument("--phonetic-checkpoint", dest="phonetic_checkpoint")
        p.set_defaults(func=func)

    r = common(sub.add_parser("reproduce", help="run the whole desk-scale pipeline"),
               "unused; accepted for symmetry")
    r.set_defaults(func=cmd_reproduce)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(message)s")
    try:
        return args.func(args)
    except (UsageError, ConfigError, FileNotFoundError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (TrainingDiverged, CheckpointError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
