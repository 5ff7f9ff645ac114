"""
Synthetic languages that differ only in phonotactics
====================================================

Four languages share one phone codebook.  Each language is a Markov chain
over phones; languages 0 and 2 share most of their transition matrix.
With ``balanced_perms`` the chains are doubly stochastic, so every
language uses every phone equally often and only phone *order* (and a
small channel offset) identifies the language.
"""

import numpy as np

from palid.corpus import default_spec, generate_corpus, splice, split_dataset
from palid.experiments import DESK_CORPUS, DESK_SPLIT

spec = default_spec(seed=0, **{**DESK_CORPUS, "utterances_per_language": 50})
data = generate_corpus(spec)
print(len(data), "utterances;", "frames per utterance:",
      int(np.mean([len(u) for u in data])), "on average")

# Unigram phone frequencies look alike across languages...
for k in range(4):
    labels = np.concatenate([u.phone_labels for u in data if u.language == k])
    hist = np.bincount(labels, minlength=spec.num_phones) / len(labels)
    print(f"L{k} unigram spread: min {hist.min():.3f} max {hist.max():.3f}")

# ...while the transition matrices differ.  L0 and L2 are the close pair.
T = [lang.transition for lang in spec.languages]
print("transition L1 distances:")
for a in range(4):
    print("  ", " ".join(f"{np.abs(T[a] - T[b]).sum():6.2f}" for b in range(4)))

# Frames are spliced with two neighbours per side: 23 -> 115 dims.
print("spliced shape:", splice(data[0].frames, 2).shape)

train, dev, test = split_dataset(data, DESK_SPLIT, seed=0)
print("split sizes:", len(train), len(dev), len(test))
