"""
Where do the languages sit in phonetic-feature space?
=====================================================

Phonetic features (the recurrent projection of a multi-task model) are
collected from 20 test utterances per language, reduced to two
dimensions with PCA and written as a scatter CSV.  The separation of the
class centroids is compared with an untrained network of the same shape.
"""

import tempfile
from pathlib import Path

import numpy as np

from palid.corpus import default_spec, generate_corpus
from palid.experiments import (DESK_CORPUS, DESK_SPLIT, DESK_TRAIN, ExperimentConfig, SplitConfig,
                               run_project, run_train)
from palid.networks import Network
from palid.training import TrainConfig
from palid.viz import centroid_separation

out = Path(tempfile.mkdtemp(prefix="palid-pca-"))
data = generate_corpus(default_spec(seed=0, **DESK_CORPUS))
split = SplitConfig(DESK_SPLIT, seed=0).apply(data)

cfg = ExperimentConfig(name="mlt", out=str(out), heads="multitask", languages=[0, 1],
                       train=TrainConfig(**DESK_TRAIN))
phonetic = run_train(cfg, split)[0].lid_model

for label, net in (("trained", phonetic), ("untrained", Network.init(phonetic.config, seed=1))):
    proj = ExperimentConfig(name=f"{label}-agbt", out=str(out), languages=[0, 1, 2, 3])
    points, langs = run_project(proj, split, net)
    sep = centroid_separation(points, [int(x) for x in langs])
    closest = min(sep, key=sep.get)
    print(f"{label:9s} mean separation {np.mean(list(sep.values())):.3f}, "
          f"closest pair {closest}, {len(points)} frames -> {label}-agbt.scatter.csv")

# The CSV has columns x,y,language and loads directly into any plotting tool.
print((out / "trained-agbt.scatter.csv").read_text().splitlines()[:3])
