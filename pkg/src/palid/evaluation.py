"""Pooled EER and average detection cost (Cavg) for closed-set language ID.

Every scored unit (a frame or an utterance) yields one detection trial
per candidate language; the trial's score is the posterior of that
language, and the trial is a target trial when the candidate is the
unit's true language.
"""
from __future__ import annotations

import csv
import enum
import io
from dataclasses import dataclass

import numpy as np

from .core_math import softmax
from .networks import LANG_HEAD, ModelBundle, batched_logits, prepare, utterance_posterior

REPORT_COLUMNS = ("model", "cavg_frame", "cavg_utt", "eer_frame", "eer_utt")
TRIAL_COLUMNS = ("score", "is_target", "hyp", "true", "unit_id")


class Level(enum.Enum):
    FRAME = "frame"
    UTTERANCE = "utterance"


@dataclass(frozen=True)
class Trial:
    score: float
    is_target: bool
    hypothesized_language: int
    true_language: int
    unit_id: str = ""


@dataclass
class TrialSet:
    """Column-oriented trial storage (frame-level sets get large)."""

    scores: np.ndarray
    is_target: np.ndarray
    hyp: np.ndarray
    true: np.ndarray
    num_languages: int
    level: Level = Level.UTTERANCE
    unit_ids: np.ndarray | None = None

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=np.float64)
        self.is_target = np.asarray(self.is_target, dtype=bool)
        self.hyp = np.asarray(self.hyp, dtype=np.int64)
        self.true = np.asarray(self.true, dtype=np.int64)
        n = len(self.scores)
        if not (len(self.is_target) == len(self.hyp) == len(self.true) == n):
            raise ValueError("trial columns differ in length")
        if np.any(self.is_target != (self.hyp == self.true)):
            raise ValueError("is_target must equal (hyp == true)")

    def __len__(self) -> int:
        return len(self.scores)

    @classmethod
    def from_posteriors(cls, posteriors, true_languages, level: Level = Level.UTTERANCE,
                        unit_ids=None) -> "TrialSet":
        """One trial per (unit, language) from a units x languages posterior matrix."""
        post = np.asarray(posteriors, dtype=np.float64)
        true = np.asarray(true_languages, dtype=np.int64)
        if post.ndim != 2 or len(post) != len(true):
            raise ValueError("posteriors must be units x languages, one row per true label")
        n_units, n_lang = post.shape
        if np.any(true < 0) or np.any(true >= n_lang):
            raise ValueError("true language outside the posterior columns")
        if n_units and np.max(np.abs(post.sum(axis=1) - 1)) > 1e-9:
            raise ValueError("posterior rows must sum to 1")
        hyp = np.tile(np.arange(n_lang), n_units)
        true_rep = np.repeat(true, n_lang)
        ids = None if unit_ids is None else np.repeat(np.asarray(unit_ids, dtype=object), n_lang)
        return cls(post.ravel(), hyp == true_rep, hyp, true_rep, n_lang, level, ids)

    @classmethod
    def from_trials(cls, trials: list[Trial], num_languages: int,
                    level: Level = Level.UTTERANCE) -> "TrialSet":
        return cls([t.score for t in trials], [t.is_target for t in trials],
                   [t.hypothesized_language for t in trials], [t.true_language for t in trials],
                   num_languages, level, np.array([t.unit_id for t in trials], dtype=object))

    def trials(self) -> list[Trial]:
        ids = self.unit_ids if self.unit_ids is not None else [""] * len(self)
        return [Trial(float(s), bool(t), int(h), int(r), str(u))
                for s, t, h, r, u in zip(self.scores, self.is_target, self.hyp, self.true, ids)]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(TRIAL_COLUMNS)
        for t in self.trials():
            w.writerow([repr(t.score), int(t.is_target), t.hypothesized_language,
                        t.true_language, t.unit_id])
        return buf.getvalue()


def _rates(targets: np.ndarray, nontargets: np.ndarray, thresholds: np.ndarray):
    """FRR(th) = P(target < th), FAR(th) = P(nontarget >= th)."""
    t = np.sort(targets)
    n = np.sort(nontargets)
    frr = np.searchsorted(t, thresholds, side="left") / len(t)
    far = 1.0 - np.searchsorted(n, thresholds, side="left") / len(n)
    return frr, far


def eer(trials: TrialSet) -> float:
    """Pooled equal error rate, linearly interpolated between ROC vertices."""
    tar = trials.scores[trials.is_target]
    non = trials.scores[~trials.is_target]
    if len(tar) == 0 or len(non) == 0:
        raise ValueError("EER needs at least one target and one nontarget trial")
    # Vertices at every distinct score, plus one threshold above all scores.
    thresholds = np.unique(trials.scores)
    frr, far = _rates(tar, non, thresholds)
    frr = np.append(frr, 1.0)
    far = np.append(far, 0.0)
    d = frr - far  # non-decreasing; starts <= 0 and ends at 1
    k = int(np.searchsorted(d, 0.0, side="left"))
    if d[k] == 0.0:
        return float(frr[k])
    # d[k-1] < 0 < d[k]: cross the diagonal on the segment between them
    t = -d[k - 1] / (d[k] - d[k - 1])
    return float(frr[k - 1] + t * (frr[k] - frr[k - 1]))


def cavg(trials: TrialSet, p_target: float = 0.5, c_miss: float = 1.0, c_fa: float = 1.0) -> float:
    """Average detection cost with hard decisions ``score >= 1 / N``."""
    N = trials.num_languages
    if N < 2:
        raise ValueError("Cavg needs at least two languages")
    accept = trials.scores >= 1.0 / N
    total = 0.0
    for L in range(N):
        tgt = trials.is_target & (trials.hyp == L)
        if not tgt.any():
            raise ValueError(f"language {L} has no target trials")
        p_miss = float(np.mean(~accept[tgt]))
        fa = 0.0
        for Lp in range(N):
            if Lp == L:
                continue
            sel = (trials.hyp == L) & (trials.true == Lp)
            if not sel.any():
                raise ValueError(f"no trials of hypothesis {L} on language {Lp}")
            fa += c_fa * (1 - p_target) * float(np.mean(accept[sel]))
        total += c_miss * p_target * p_miss + fa / (N - 1)
    return total / N


def per_language_eer(trials: TrialSet) -> dict[int, float]:
    out = {}
    for L in range(trials.num_languages):
        sel = trials.hyp == L
        sub = TrialSet(trials.scores[sel], trials.is_target[sel], trials.hyp[sel],
                       trials.true[sel], trials.num_languages, trials.level)
        out[L] = eer(sub)
    return out


def score_dataset(model: ModelBundle, dataset, batch_size: int = 32) -> tuple[TrialSet, TrialSet]:
    """Frame-level and utterance-level trial sets for ``dataset``.

    Utterance language labels must already index the model's language head.
    """
    params = model.lid_model.params
    if LANG_HEAD not in params.heads:
        raise ValueError("model has no language head")
    n_lang = params.heads[LANG_HEAD].out_dim
    bad = sorted({u.language for u in dataset if not 0 <= u.language < n_lang})
    if bad:
        raise ValueError(f"dataset languages {bad} outside the model's {n_lang}-way language head")
    prepared = prepare(model, dataset, batch_size)
    logits = batched_logits(model, prepared, batch_size)
    frame_post, frame_true, frame_ids = [], [], []
    utt_post, utt_true = [], []
    for item, lg in zip(prepared, logits):
        fp = softmax(lg[LANG_HEAD])
        frame_post.append(fp)
        frame_true.append(np.full(len(fp), item.language))
        frame_ids += [f"{item.id}:{t}" for t in range(len(fp))]
        utt_post.append(utterance_posterior(fp))
        utt_true.append(item.language)
    frames = TrialSet.from_posteriors(np.concatenate(frame_post), np.concatenate(frame_true),
                                      Level.FRAME, frame_ids)
    utts = TrialSet.from_posteriors(np.array(utt_post), np.array(utt_true), Level.UTTERANCE,
                                    [u.id for u in prepared])
    return frames, utts


@dataclass
class MetricsRow:
    model: str
    cavg_frame: float
    cavg_utt: float
    eer_frame: float
    eer_utt: float

    def values(self) -> tuple:
        return (self.model, self.cavg_frame, self.cavg_utt, self.eer_frame, self.eer_utt)


def report(frame_trials: TrialSet, utt_trials: TrialSet, model: str = "model") -> MetricsRow:
    return MetricsRow(model, cavg(frame_trials), cavg(utt_trials), eer(frame_trials), eer(utt_trials))


def rows_to_csv(rows: list[MetricsRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(REPORT_COLUMNS)
    for r in rows:
        w.writerow([r.model] + [repr(float(v)) for v in r.values()[1:]])
    return buf.getvalue()


def rows_from_csv(text: str) -> list[MetricsRow]:
    reader = csv.reader(io.StringIO(text))
    header = next(reader)
    if tuple(header) != REPORT_COLUMNS:
        raise ValueError(f"unexpected metrics header {header}")
    return [MetricsRow(r[0], *map(float, r[1:])) for r in reader if r]


def format_table(rows: list[MetricsRow]) -> str:
    """Human-readable table: Cavg as a fraction, EER in percent."""
    lines = [f"{'':<24}{'Cavg':^18}|{'EER%':^18}",
             f"{'Model':<24}{'Fr.':>9}{'Utt.':>9}|{'Fr.':>9}{'Utt.':>9}"]
    for r in rows:
        lines.append(f"{r.model:<24}{r.cavg_frame:>9.4f}{r.cavg_utt:>9.4f}|"
                     f"{100 * r.eer_frame:>9.2f}{100 * r.eer_utt:>9.2f}")
    return "\n".join(lines)
