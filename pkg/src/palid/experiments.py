"""Experiment configs and the train / eval / project / reproduce drivers.

Each driver reads everything it needs from an :class:`ExperimentConfig`
and writes plain files (checkpoints, CSV, JSON) into ``config.out``.
Outputs never contain timestamps, so identical inputs give identical bytes.
"""
from __future__ import annotations

import hashlib
import json
import logging
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .corpus import (SynthSpec, Utterance, default_spec, generate_corpus, load_corpus,
                     save_corpus, save_spec, select_languages, splice, split_dataset)
from .evaluation import MetricsRow, report, rows_to_csv, score_dataset
from .lstmp import ReceiverKind
from .networks import (ModelBundle, Network, NetworkConfig, PRESETS, Heads,
                       extract_phonetic_features, load_checkpoint, save_checkpoint)
from .training import LossSpec, TrainConfig, TrainLog, default_workers, train
from .viz import emit_scatter, pca_fit, pca_project

log = logging.getLogger(__name__)

PROJECT_UTTERANCES = 20


class ConfigError(ValueError):
    """Bad or inconsistent experiment configuration (CLI exit code 2)."""


@dataclass
class SplitConfig:
    fractions: tuple[float, float, float] = (0.5, 0.1, 0.4)
    seed: int = 0

    def apply(self, dataset: list[Utterance]):
        return split_dataset(dataset, self.fractions, self.seed)


@dataclass
class ExperimentConfig:
    name: str = "model"
    out: str = "."
    seed: int | None = None
    spec: str | None = None  # SynthSpec JSON, for gen-corpus
    corpus: str | None = None
    languages: list[int] = field(default_factory=lambda: [0, 1])
    split: SplitConfig = field(default_factory=SplitConfig)
    preset: str = "desk"
    network: dict = field(default_factory=dict)  # overrides of NetworkConfig fields
    heads: str = "languages"
    receiver: str = "none"
    phonetic_checkpoint: str | None = None
    phone_targets: int | None = None  # inferred from the corpus when unset
    train: TrainConfig = field(default_factory=TrainConfig)
    loss: LossSpec | None = None  # defaults to unit weights on the model's heads
    checkpoint: str | None = None  # model to evaluate or project
    project_utterances: int = PROJECT_UTTERANCES

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        d = dict(d)
        try:
            if "split" in d:
                s = d["split"]
                d["split"] = SplitConfig(tuple(s.get("fractions", SplitConfig.fractions)),
                                         s.get("seed", 0))
            if "train" in d:
                d["train"] = TrainConfig(**d["train"])
            if d.get("loss") is not None:
                d["loss"] = LossSpec(**d["loss"])
            cfg = cls(**d)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"invalid experiment config: {exc}") from exc
        cfg.check()
        return cfg

    def to_dict(self) -> dict:
        d = asdict(self)
        d["split"]["fractions"] = list(self.split.fractions)
        return d

    def check(self) -> None:
        if self.preset not in PRESETS:
            raise ConfigError(f"unknown preset {self.preset!r}")
        try:
            Heads.parse(self.heads)
            ReceiverKind.parse(self.receiver)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        if len(set(self.languages)) != len(self.languages) or not self.languages:
            raise ConfigError("languages must be a non-empty list without repeats")
        if self.project_utterances < 1:
            raise ConfigError("project_utterances must be >= 1")


def load_experiment(path) -> ExperimentConfig:
    p = Path(path)
    if not p.is_file():
        raise FileNotFoundError(f"config not found: {path}")
    try:
        data = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: not valid JSON ({exc})") from exc
    return ExperimentConfig.from_dict(data)


def _require(path: str | None, what: str) -> Path:
    if not path:
        raise ConfigError(f"config needs a {what} path")
    p = Path(path)
    if not p.is_file():
        raise FileNotFoundError(f"{what} not found: {path}")
    return p


def _subset(cfg: ExperimentConfig, dataset: list[Utterance]) -> list[Utterance]:
    present = {u.language for u in dataset}
    missing = sorted(set(cfg.languages) - present)
    if missing:
        raise ConfigError(f"languages {missing} are not in the corpus (has {sorted(present)})")
    return select_languages(dataset, cfg.languages)


def _load_split(cfg: ExperimentConfig):
    dataset = load_corpus(_require(cfg.corpus, "corpus"))
    return cfg.split.apply(dataset)


def build_network_config(cfg: ExperimentConfig, dataset: list[Utterance],
                         phonetic: Network | None) -> NetworkConfig:
    overrides = dict(cfg.network)
    context = overrides.pop("splice_context", 2)
    frame_dim = dataset[0].frames.shape[1]
    phones = cfg.phone_targets or int(max(int(u.phone_labels.max()) for u in dataset)) + 1
    heads = Heads.parse(cfg.heads)
    receiver = ReceiverKind.parse(cfg.receiver)
    try:
        return NetworkConfig.preset(
            cfg.preset, input_dim=frame_dim * (2 * context + 1), splice_context=context,
            phone_targets=phones, language_targets=len(cfg.languages), heads=heads,
            receiver=receiver, feat_dim=phonetic.config.rec_dim if phonetic else 0,
            languages=list(cfg.languages), **overrides)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid network settings: {exc}") from exc


def _phonetic_from(cfg: ExperimentConfig) -> Network | None:
    if ReceiverKind.parse(cfg.receiver) is ReceiverKind.NONE:
        return None
    bundle = load_checkpoint(_require(cfg.phonetic_checkpoint, "phonetic checkpoint"))
    return bundle.lid_model


def _train_config(cfg: ExperimentConfig) -> TrainConfig:
    tc = cfg.train
    seed = tc.seed if cfg.seed is None else cfg.seed
    workers = tc.workers if tc.workers > 1 else default_workers()
    return TrainConfig(**{**asdict(tc), "seed": seed, "workers": workers})


def run_train(cfg: ExperimentConfig, split=None) -> tuple[ModelBundle, TrainLog, Path]:
    """Train one model on the train/dev parts of the corpus split.

    Writes ``<out>/<name>.paln`` and ``<out>/<name>.train.csv``.
    """
    train_set, dev_set, _ = split if split is not None else _load_split(cfg)
    train_set, dev_set = _subset(cfg, train_set), _subset(cfg, dev_set)
    phonetic = _phonetic_from(cfg)
    net_cfg = build_network_config(cfg, train_set, phonetic)
    if phonetic is not None and phonetic.config.input_dim != net_cfg.input_dim:
        raise ConfigError("phonetic checkpoint reads a different input dimension")
    loss = cfg.loss or LossSpec.for_heads(net_cfg.heads)
    bundle, history = train(_train_config(cfg), net_cfg, loss, train_set, dev_set, phonetic,
                            progress=lambda r: log.info("%s epoch %d dev %.4f", cfg.name,
                                                        r.epoch, r.dev_loss))
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    ckpt = out / f"{cfg.name}.paln"
    save_checkpoint(bundle, ckpt)
    history.write_csv(out / f"{cfg.name}.train.csv")
    return bundle, history, ckpt


def _check_model_languages(bundle: ModelBundle, languages: list[int]) -> None:
    mc = bundle.lid_model.config
    if mc.language_targets != len(languages):
        raise ConfigError(f"model has a {mc.language_targets}-way language head but "
                          f"{len(languages)} languages were requested")
    if mc.languages and list(mc.languages) != list(languages):
        raise ConfigError(f"model was trained on languages {mc.languages}, not {languages}")


def run_eval(cfg: ExperimentConfig, split=None, bundle: ModelBundle | None = None) -> MetricsRow:
    """Score the test part; writes ``<out>/<name>.metrics.csv``."""
    if bundle is None:
        bundle = load_checkpoint(_require(cfg.checkpoint, "checkpoint"))
    _check_model_languages(bundle, cfg.languages)
    _, _, test = split if split is not None else _load_split(cfg)
    frames, utts = score_dataset(bundle, _subset(cfg, test))
    row = report(frames, utts, cfg.name)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / f"{cfg.name}.metrics.csv").write_text(rows_to_csv([row]))
    return row


def select_for_projection(test: list[Utterance], languages, count: int, seed: int) -> list[Utterance]:
    """``count`` seeded test utterances per language, in language then draw order."""
    chosen = []
    for lang in languages:
        pool = [u for u in test if u.language == lang]
        if len(pool) < count:
            raise ValueError(f"language {lang} has {len(pool)} test utterances, "
                             f"{count - len(pool)} short of the {count} required")
        rng = np.random.default_rng(np.random.SeedSequence([seed, 0x9CA, lang]))
        chosen += [pool[k] for k in rng.choice(len(pool), size=count, replace=False)]
    return chosen


def projection_features(net: Network, utterances: list[Utterance]):
    feats, labels = [], []
    for u in utterances:
        f = extract_phonetic_features(net, splice(u.frames, net.config.splice_context))
        feats.append(f)
        labels += [u.language] * len(f)
    return np.concatenate(feats), np.array(labels)


def run_project(cfg: ExperimentConfig, split=None, net: Network | None = None):
    """PCA scatter of phonetic features; writes ``<out>/<name>.scatter.csv``.

    Returns the 2-D points and their (original) language labels.
    """
    if net is None:
        net = load_checkpoint(_require(cfg.checkpoint, "checkpoint")).lid_model
    _, _, test = split if split is not None else _load_split(cfg)
    seed = 0 if cfg.seed is None else cfg.seed
    utts = select_for_projection(test, cfg.languages, cfg.project_utterances, seed)
    feats, labels = projection_features(net, utts)
    points = pca_project(pca_fit(feats), feats)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    emit_scatter(points, labels.tolist(), out / f"{cfg.name}.scatter.csv")
    return points, labels


# -- the full desk-scale pipeline -------------------------------------------

# Corpus and training settings of the desk reproduction.  Languages 0 and 2
# play the part of the two overlapping languages.
DESK_CORPUS = dict(num_languages=4, utterances_per_language=1000, emission_stddev=2.0,
                   offset_scale=0.1, similar_pair=(0, 2), similar_mix=0.8,
                   frames_per_phone=(3, 6), utterance_phones=(4, 12), balanced_perms=3)
DESK_SPLIT = (0.6, 0.1, 0.3)
DESK_TRAIN = dict(learning_rate=0.1, momentum=0.9, epochs=12, batch_size=16, patience=1,
                  microbatch_size=16, gradient_clip=5.0)
DESK_SEED = 0

# (name, heads, languages, receiver)
DESK_MODELS = (
    ("ag-mlt", "multitask", [0, 1], "none"),
    ("ag-lid", "languages", [0, 1], "none"),
    ("ag-g", "languages", [0, 1], "g_function"),
    ("bt-lid", "languages", [2, 3], "none"),
    ("bt-g", "languages", [2, 3], "g_function"),
    ("agbt-lid", "languages", [0, 1, 2, 3], "none"),
    ("agbt-g", "languages", [0, 1, 2, 3], "g_function"),
)
PHONETIC_MODEL = "ag-mlt"
PROJECTIONS = (("ag", [0, 1]), ("bt", [2, 3]), ("agbt", [0, 1, 2, 3]))


def desk_spec(seed: int = 0) -> SynthSpec:
    return default_spec(seed=seed, **DESK_CORPUS)


def desk_experiments(out: str, corpus: str, seed: int = 0) -> list[ExperimentConfig]:
    split = SplitConfig(DESK_SPLIT, seed)
    cfgs = []
    for name, heads, langs, receiver in DESK_MODELS:
        cfgs.append(ExperimentConfig(
            name=name, out=out, seed=seed, corpus=corpus, languages=list(langs), split=split,
            heads=heads, receiver=receiver, train=TrainConfig(**DESK_TRAIN, seed=seed),
            phonetic_checkpoint=None if receiver == "none" else f"{out}/{PHONETIC_MODEL}.paln",
            checkpoint=f"{out}/{name}.paln"))
    return cfgs


def file_digest(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def reproduce(out_dir, seed: int = DESK_SEED, progress=print) -> dict:
    """Corpus, seven models, metrics and PCA scatters; returns a summary.

    Files written to ``out_dir``: ``spec.json``, ``corpus.jsonl``, one
    checkpoint and training log per model, ``metrics.csv``, scatter CSVs
    for the trained phonetic model and an untrained twin of it, and
    ``manifest.json`` with SHA-256 digests of everything else.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    spec = desk_spec(seed)
    save_spec(spec, out / "spec.json")
    save_corpus(generate_corpus(spec), out / "corpus.jsonl")
    corpus = str(out / "corpus.jsonl")
    cfgs = desk_experiments(str(out), corpus, seed)
    split = SplitConfig(DESK_SPLIT, seed).apply(load_corpus(corpus))

    rows = []
    bundles = {}
    seconds = {}
    for cfg in cfgs:
        start = time.perf_counter()
        bundle, _, _ = run_train(cfg, split)
        bundles[cfg.name] = bundle
        rows.append(run_eval(cfg, split, bundle))
        seconds[cfg.name] = time.perf_counter() - start
        progress(f"{cfg.name:10s} utt EER {100 * rows[-1].eer_utt:6.2f}%  "
                 f"utt Cavg {rows[-1].cavg_utt:.4f}")
    (out / "metrics.csv").write_text(rows_to_csv(rows))

    phonetic = bundles[PHONETIC_MODEL].lid_model
    untrained = Network.init(phonetic.config, seed=seed + 1)
    for tag, langs in PROJECTIONS:
        for label, net in (("", phonetic), ("untrained-", untrained)):
            cfg = ExperimentConfig(name=f"{label}{PHONETIC_MODEL}-{tag}", out=str(out), seed=seed,
                                   languages=list(langs))
            run_project(cfg, split, net)

    digests = {p.name: file_digest(p) for p in sorted(out.iterdir())
               if p.is_file() and p.name != "manifest.json"}
    (out / "manifest.json").write_text(json.dumps(digests, indent=1, sort_keys=True) + "\n")
    # Wall-clock times stay in memory only; files must not depend on them.
    return {"rows": rows, "digests": digests, "out": out, "seconds": seconds}
