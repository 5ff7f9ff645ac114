"""
Phone-aware LID on two known languages
======================================

The known-language experiment at desk scale: a multi-task model
learns phones and languages together on languages 0 and 1, then a pure
LID model and a phone-aware LID model (phonetic features injected into
the g-function) are trained on the same two languages and compared.
"""

import tempfile
from pathlib import Path

from palid.corpus import default_spec, generate_corpus, load_corpus, save_corpus
from palid.evaluation import format_table
from palid.experiments import (DESK_CORPUS, DESK_SPLIT, DESK_TRAIN, ExperimentConfig, SplitConfig,
                               run_eval, run_train)
from palid.training import TrainConfig

out = Path(tempfile.mkdtemp(prefix="palid-demo-"))
spec = default_spec(seed=0, **DESK_CORPUS)
save_corpus(generate_corpus(spec), out / "corpus.jsonl")
split = SplitConfig(DESK_SPLIT, seed=0).apply(load_corpus(out / "corpus.jsonl"))

common = dict(out=str(out), corpus=str(out / "corpus.jsonl"), languages=[0, 1],
              train=TrainConfig(**DESK_TRAIN))
models = [
    ExperimentConfig(name="mlt", heads="multitask", **common),
    ExperimentConfig(name="lid", **common),
    ExperimentConfig(name="lid-g", receiver="g_function",
                     phonetic_checkpoint=str(out / "mlt.paln"), **common),
]

rows = []
for cfg in models:
    bundle, log, path = run_train(cfg, split)
    print(f"{cfg.name}: best dev loss {min(r.dev_loss for r in log.records):.3f} -> {path.name}")
    rows.append(run_eval(cfg, split, bundle))

print()
print(format_table(rows))
print("\noutputs in", out)
