"""Synthetic multi-language corpus: shared phone codebook, per-language Markov phonotactics.

Each language is a first-order Markov chain over a phone inventory that
all languages share.  A phone occupies a random number of frames, each
drawn from an isotropic Gaussian centred on the phone's codebook vector
plus a small per-language channel offset.  Languages therefore differ
mostly in which phone sequences they produce, not in how phones sound.
"""
from __future__ import annotations

import base64
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

FORMAT_VERSION = 1
_CODEBOOK_KEY = 0xC0DE


@dataclass
class LanguageSpec:
    name: str
    transition: np.ndarray  # num_phones x num_phones, row-stochastic
    initial: np.ndarray
    channel_offset: np.ndarray


@dataclass
class SynthSpec:
    languages: list[LanguageSpec]
    num_phones: int = 20
    frame_dim: int = 23
    frames_per_phone: tuple[int, int] = (3, 10)
    utterance_phones: tuple[int, int] = (10, 30)
    utterances_per_language: int = 100
    emission_stddev: float = 1.0
    seed: int = 0

    def violations(self) -> list[str]:
        out = []
        if self.num_phones < 1:
            out.append("num_phones must be >= 1")
        if self.frame_dim < 1:
            out.append("frame_dim must be >= 1")
        if not self.languages:
            out.append("at least one language is required")
        for lo_hi, what in ((self.frames_per_phone, "frames_per_phone"),
                            (self.utterance_phones, "utterance_phones")):
            lo, hi = lo_hi
            if lo < 1 or hi < lo:
                out.append(f"{what} must satisfy 1 <= min <= max, got {list(lo_hi)}")
        if self.utterances_per_language < 1:
            out.append("utterances_per_language must be >= 1")
        if not (self.emission_stddev >= 0 and np.isfinite(self.emission_stddev)):
            out.append("emission_stddev must be finite and >= 0")
        n, d = self.num_phones, self.frame_dim
        names = [lang.name for lang in self.languages]
        if len(set(names)) != len(names):
            out.append("language names must be unique")
        for lang in self.languages:
            T = np.asarray(lang.transition)
            if T.shape != (n, n):
                out.append(f"{lang.name}: transition shape {T.shape} != {(n, n)}")
            elif np.any(T < 0) or np.max(np.abs(T.sum(axis=1) - 1)) > 1e-9:
                out.append(f"{lang.name}: transition is not row-stochastic")
            init = np.asarray(lang.initial)
            if init.shape != (n,):
                out.append(f"{lang.name}: initial shape {init.shape} != {(n,)}")
            elif np.any(init < 0) or abs(init.sum() - 1) > 1e-9:
                out.append(f"{lang.name}: initial is not on the simplex")
            off = np.asarray(lang.channel_offset)
            if off.shape != (d,):
                out.append(f"{lang.name}: channel_offset shape {off.shape} != {(d,)}")
            elif np.max(np.abs(off)) > 1:
                out.append(f"{lang.name}: channel_offset exceeds 1 in magnitude")
        return out

    def validate(self) -> None:
        problems = self.violations()
        if problems:
            raise ValueError("invalid SynthSpec: " + "; ".join(problems))

    def to_json(self) -> dict:
        return {
            "format_version": FORMAT_VERSION,
            "num_phones": self.num_phones,
            "frame_dim": self.frame_dim,
            "frames_per_phone": list(self.frames_per_phone),
            "utterance_phones": list(self.utterance_phones),
            "utterances_per_language": self.utterances_per_language,
            "emission_stddev": self.emission_stddev,
            "seed": self.seed,
            "languages": [
                {"name": lang.name,
                 "transition": np.asarray(lang.transition).tolist(),
                 "initial": np.asarray(lang.initial).tolist(),
                 "channel_offset": np.asarray(lang.channel_offset).tolist()}
                for lang in self.languages
            ],
        }

    @classmethod
    def from_json(cls, d: dict) -> "SynthSpec":
        version = d.get("format_version")
        if version != FORMAT_VERSION:
            raise ValueError(f"unsupported SynthSpec format_version {version!r}")
        langs = [LanguageSpec(x["name"], np.array(x["transition"], dtype=np.float64),
                              np.array(x["initial"], dtype=np.float64),
                              np.array(x["channel_offset"], dtype=np.float64))
                 for x in d["languages"]]
        spec = cls(languages=langs, num_phones=d["num_phones"], frame_dim=d["frame_dim"],
                   frames_per_phone=tuple(d["frames_per_phone"]),
                   utterance_phones=tuple(d["utterance_phones"]),
                   utterances_per_language=d["utterances_per_language"],
                   emission_stddev=float(d["emission_stddev"]), seed=d["seed"])
        spec.validate()
        return spec


def save_spec(spec: SynthSpec, path) -> None:
    Path(path).write_text(json.dumps(spec.to_json(), indent=1) + "\n")


def load_spec(path) -> SynthSpec:
    return SynthSpec.from_json(json.loads(Path(path).read_text()))


def _random_chain(rng: np.random.Generator, n: int, concentration: float) -> np.ndarray:
    T = rng.dirichlet(np.full(n, concentration), size=n)
    return T / T.sum(axis=1, keepdims=True)


def _balanced_chain(rng: np.random.Generator, n: int, num_perms: int) -> np.ndarray:
    """Doubly stochastic chain: a random convex mix of permutation matrices.

    Its stationary distribution is uniform, so phone unigram counts carry no
    language information and only the transitions do.
    """
    weights = rng.dirichlet(np.ones(num_perms))
    T = np.zeros((n, n))
    for w in weights:
        T[np.arange(n), rng.permutation(n)] += w
    return T


def default_spec(seed: int = 0, num_languages: int = 4, num_phones: int = 20, frame_dim: int = 23,
                 utterances_per_language: int = 100, emission_stddev: float = 1.0,
                 concentration: float = 0.5, offset_scale: float = 0.1,
                 similar_pair: tuple[int, int] | None = (0, 2), similar_mix: float = 0.7,
                 frames_per_phone: tuple[int, int] = (3, 10),
                 utterance_phones: tuple[int, int] = (10, 30),
                 balanced_perms: int = 0) -> SynthSpec:
    """Random Dirichlet phonotactics; the ``similar_pair`` languages share most of theirs.

    With ``balanced_perms > 0`` each chain is instead a mix of that many
    random permutations and starts from the uniform distribution, which
    leaves phonotactics as the only cue besides the channel offset.

    The second language of ``similar_pair`` gets
    ``similar_mix * T_first + (1 - similar_mix) * T_own`` as its transition
    matrix and initial distribution, and the same mixing of channel offsets.
    """
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x5EC]))
    langs = []
    for k in range(num_languages):
        if balanced_perms > 0:
            T = _balanced_chain(rng, num_phones, balanced_perms)
            init = np.full(num_phones, 1.0 / num_phones)
        else:
            T = _random_chain(rng, num_phones, concentration)
            init = rng.dirichlet(np.ones(num_phones))
        offset = rng.uniform(-offset_scale, offset_scale, size=frame_dim)
        langs.append(LanguageSpec(f"L{k}", T, init, offset))
    if similar_pair is not None and max(similar_pair) < num_languages:
        a, b = similar_pair
        la, lb = langs[a], langs[b]
        T = similar_mix * la.transition + (1 - similar_mix) * lb.transition
        init = similar_mix * la.initial + (1 - similar_mix) * lb.initial
        langs[b] = LanguageSpec(lb.name, T / T.sum(axis=1, keepdims=True), init / init.sum(),
                                similar_mix * la.channel_offset + (1 - similar_mix) * lb.channel_offset)
    spec = SynthSpec(languages=langs, num_phones=num_phones, frame_dim=frame_dim,
                     frames_per_phone=tuple(frames_per_phone),
                     utterance_phones=tuple(utterance_phones),
                     utterances_per_language=utterances_per_language,
                     emission_stddev=emission_stddev, seed=seed)
    spec.validate()
    return spec


def phone_codebook(spec: SynthSpec) -> np.ndarray:
    """Phone embeddings shared by every language; depends only on seed and sizes."""
    rng = np.random.default_rng(np.random.SeedSequence([spec.seed, _CODEBOOK_KEY]))
    return rng.normal(size=(spec.num_phones, spec.frame_dim))


@dataclass
class Utterance:
    id: str
    language: int
    frames: np.ndarray  # T x frame_dim
    phone_labels: np.ndarray  # T ints

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float64)
        self.phone_labels = np.asarray(self.phone_labels, dtype=np.int64)
        if self.frames.ndim != 2 or len(self.frames) == 0:
            raise ValueError(f"{self.id}: frames must be a non-empty T x D array")
        if len(self.phone_labels) != len(self.frames):
            raise ValueError(f"{self.id}: {len(self.phone_labels)} labels for {len(self.frames)} frames")

    def __len__(self) -> int:
        return len(self.frames)


def sample_phones(rng: np.random.Generator, lang: LanguageSpec, length: int) -> np.ndarray:
    phones = np.empty(length, dtype=np.int64)
    n = len(lang.initial)
    phones[0] = rng.choice(n, p=lang.initial)
    for t in range(1, length):
        phones[t] = rng.choice(n, p=lang.transition[phones[t - 1]])
    return phones


def generate_utterance(spec: SynthSpec, language: int, index: int,
                       codebook: np.ndarray | None = None) -> Utterance:
    """Utterance ``index`` of ``language``; independent of every other utterance."""
    codebook = phone_codebook(spec) if codebook is None else codebook
    lang = spec.languages[language]
    rng = np.random.default_rng(np.random.SeedSequence([spec.seed, language, index]))
    n_phones = int(rng.integers(spec.utterance_phones[0], spec.utterance_phones[1] + 1))
    phones = sample_phones(rng, lang, n_phones)
    durations = rng.integers(spec.frames_per_phone[0], spec.frames_per_phone[1] + 1, size=n_phones)
    labels = np.repeat(phones, durations)
    means = codebook[labels] + lang.channel_offset
    frames = means + spec.emission_stddev * rng.normal(size=means.shape)
    return Utterance(f"{lang.name}-{index:05d}", language, frames, labels)


def generate_corpus(spec: SynthSpec) -> list[Utterance]:
    spec.validate()
    codebook = phone_codebook(spec)
    return [generate_utterance(spec, k, j, codebook)
            for k in range(len(spec.languages)) for j in range(spec.utterances_per_language)]


def splice(frames, context: int) -> np.ndarray:
    """Concatenate each frame with ``context`` neighbours per side, replicating edge frames."""
    frames = np.asarray(frames, dtype=np.float64)
    if frames.ndim != 2 or len(frames) == 0:
        raise ValueError("cannot splice an empty frame sequence")
    if context < 0:
        raise ValueError("context must be >= 0")
    T = len(frames)
    idx = np.clip(np.arange(T)[:, None] + np.arange(-context, context + 1)[None, :], 0, T - 1)
    return frames[idx].reshape(T, -1)


def split_dataset(dataset: list[Utterance], fractions=(0.8, 0.1, 0.1),
                  seed: int = 0) -> tuple[list[Utterance], ...]:
    """Stratified, seeded split into len(fractions) disjoint parts.

    Per language, part sizes are ``floor(fraction * n)`` with the
    remainder going to the parts with the largest fractional parts.
    """
    fractions = np.asarray(fractions, dtype=np.float64)
    if np.any(fractions <= 0) or abs(fractions.sum() - 1) > 1e-9:
        raise ValueError("fractions must be positive and sum to 1")
    parts: list[list[Utterance]] = [[] for _ in fractions]
    by_lang: dict[int, list[Utterance]] = {}
    for utt in dataset:
        by_lang.setdefault(utt.language, []).append(utt)
    for lang in sorted(by_lang):
        utts = by_lang[lang]
        if len(utts) < len(fractions):
            raise ValueError(f"language {lang} has {len(utts)} utterances, fewer than "
                             f"{len(fractions)} partitions")
        rng = np.random.default_rng(np.random.SeedSequence([seed, lang]))
        order = rng.permutation(len(utts))
        raw = fractions * len(utts)
        counts = np.floor(raw + 1e-9).astype(int)
        for k in np.argsort(-(raw - counts), kind="stable")[:len(utts) - counts.sum()]:
            counts[k] += 1
        start = 0
        for k, n in enumerate(counts):
            parts[k].extend(utts[i] for i in order[start:start + n])
            start += n
    return tuple(parts)


def select_languages(dataset: list[Utterance], languages) -> list[Utterance]:
    """Keep utterances of ``languages`` and relabel them 0..len-1 in the given order."""
    remap = {int(lang): k for k, lang in enumerate(languages)}
    return [Utterance(u.id, remap[u.language], u.frames, u.phone_labels)
            for u in dataset if u.language in remap]


# -- JSON-lines corpus files -------------------------------------------------

def utterance_to_json(utt: Utterance) -> dict:
    payload = np.ascontiguousarray(utt.frames, dtype="<f4").tobytes()
    return {"format_version": FORMAT_VERSION, "id": utt.id, "language": int(utt.language),
            "frame_dim": int(utt.frames.shape[1]),
            "frames": base64.b64encode(payload).decode("ascii"),
            "phone_labels": utt.phone_labels.tolist()}


def utterance_from_json(d: dict) -> Utterance:
    if d.get("format_version") != FORMAT_VERSION:
        raise ValueError(f"unsupported corpus format_version {d.get('format_version')!r}")
    raw = base64.b64decode(d["frames"])
    frames = np.frombuffer(raw, dtype="<f4").astype(np.float64).reshape(-1, d["frame_dim"])
    return Utterance(d["id"], d["language"], frames, d["phone_labels"])


def save_corpus(dataset: list[Utterance], path) -> None:
    with open(path, "w") as fh:
        for utt in dataset:
            fh.write(json.dumps(utterance_to_json(utt), sort_keys=True) + "\n")


def load_corpus(path) -> list[Utterance]:
    with open(path) as fh:
        return [utterance_from_json(json.loads(line)) for line in fh if line.strip()]


def language_counts(dataset: list[Utterance]) -> dict[int, int]:
    counts: dict[int, int] = {}
    for utt in dataset:
        counts[utt.language] = counts.get(utt.language, 0) + 1
    return dict(sorted(counts.items()))


__all__ = [
    "LanguageSpec", "SynthSpec", "Utterance", "default_spec", "phone_codebook", "generate_corpus",
    "generate_utterance", "splice", "split_dataset", "select_languages", "save_corpus",
    "load_corpus", "save_spec", "load_spec", "language_counts", "sample_phones",
]
