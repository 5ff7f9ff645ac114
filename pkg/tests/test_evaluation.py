import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import brute_cavg, brute_eer
from palid.corpus import default_spec, generate_corpus
from palid.evaluation import (Level, MetricsRow, Trial, TrialSet, cavg, eer, format_table,
                              per_language_eer, report, rows_from_csv, rows_to_csv, score_dataset)
from palid.networks import ModelBundle, Network, NetworkConfig


def binary(targets, nontargets):
    """Trial set for a two-language task with the given target/nontarget scores."""
    scores = list(targets) + list(nontargets)
    is_t = [True] * len(targets) + [False] * len(nontargets)
    hyp = [0] * len(scores)
    true = [0] * len(targets) + [1] * len(nontargets)
    assert is_t == [h == r for h, r in zip(hyp, true)]
    return TrialSet(scores, is_t, hyp, true, 2)


def test_eer_examples():
    assert eer(binary([0.9, 0.8, 0.7], [0.3, 0.2, 0.1])) == 0.0
    assert eer(binary([0.1, 0.2], [0.8, 0.9])) == 1.0
    assert eer(binary([0.9, 0.7, 0.6], [0.65, 0.2, 0.1])) == pytest.approx(1 / 3, abs=1e-12)


def test_eer_needs_both_classes():
    with pytest.raises(ValueError):
        eer(binary([0.5], []))


def test_eer_tied_scores_interpolate():
    assert eer(binary([0.5, 0.5], [0.5, 0.5])) == pytest.approx(0.5)


@settings(max_examples=200)
@given(st.lists(st.integers(0, 20), min_size=1, max_size=15),
       st.lists(st.integers(0, 20), min_size=1, max_size=15))
def test_eer_matches_brute_force(tar, non):
    ts = binary([t / 20 for t in tar], [n / 20 for n in non])
    assert eer(ts) == pytest.approx(float(brute_eer(ts.scores, ts.is_target)), abs=1e-12)


def test_cavg_uniform_is_half():
    post = np.full((6, 2), 0.5)
    assert cavg(TrialSet.from_posteriors(post, [0, 1, 0, 1, 0, 1])) == pytest.approx(0.5)


def test_cavg_perfect_and_inverted():
    right = TrialSet.from_posteriors([[0.9, 0.1], [0.2, 0.8]], [0, 1])
    assert cavg(right) == 0.0
    wrong = TrialSet.from_posteriors([[0.1, 0.9], [0.8, 0.2]], [0, 1])
    assert cavg(wrong) == pytest.approx(1.0)


@settings(max_examples=100)
@given(st.integers(2, 4), st.data())
def test_cavg_matches_brute_force(n_lang, data):
    n_units = data.draw(st.integers(n_lang, max(n_lang, 30 // n_lang)))
    true = list(range(n_lang)) + [data.draw(st.integers(0, n_lang - 1))
                                  for _ in range(n_units - n_lang)]
    raw = np.array([[data.draw(st.integers(1, 9)) for _ in range(n_lang)] for _ in true], float)
    post = raw / raw.sum(axis=1, keepdims=True)
    ts = TrialSet.from_posteriors(post, true)
    expected = brute_cavg(list(zip(ts.scores, ts.hyp, ts.true)), n_lang)
    assert abs(cavg(ts) - expected) < 1e-12


def test_from_posteriors_layout():
    ts = TrialSet.from_posteriors([[0.7, 0.3], [0.4, 0.6]], [0, 1], unit_ids=["a", "b"])
    assert len(ts) == 4
    assert ts.trials()[1] == Trial(0.3, False, 1, 0, "a")
    with pytest.raises(ValueError):
        TrialSet.from_posteriors([[0.7, 0.2]], [0])
    with pytest.raises(ValueError):
        TrialSet.from_posteriors([[0.7, 0.3]], [2])


def test_trial_set_consistency_check():
    with pytest.raises(ValueError):
        TrialSet([0.5], [True], [0], [1], 2)
    trials = [Trial(0.6, True, 0, 0, "u"), Trial(0.4, False, 1, 0, "u")]
    ts = TrialSet.from_trials(trials, 2)
    assert ts.trials() == trials
    assert ts.to_csv().splitlines()[0] == "score,is_target,hyp,true,unit_id"


def test_per_language_eer():
    ts = TrialSet.from_posteriors([[0.9, 0.1], [0.3, 0.7], [0.6, 0.4]], [0, 1, 1])
    out = per_language_eer(ts)
    assert set(out) == {0, 1}
    assert all(0 <= v <= 1 for v in out.values())


def test_metrics_csv_roundtrip_and_table():
    rows = [MetricsRow("a", 0.1, 0.05, 0.2, 1 / 3), MetricsRow("b", 0.0, 0.0, 0.0, 0.0)]
    text = rows_to_csv(rows)
    assert text.splitlines()[0] == "model,cavg_frame,cavg_utt,eer_frame,eer_utt"
    assert rows_from_csv(text) == rows
    table = format_table(rows)
    assert "33.33" in table and "Cavg" in table


def test_score_dataset_levels():
    spec = default_spec(seed=1, num_languages=2, utterances_per_language=3,
                        utterance_phones=(2, 3), frames_per_phone=(1, 2))
    data = generate_corpus(spec)
    cfg = NetworkConfig.preset("tiny", input_dim=115, language_targets=2, heads="languages")
    model = ModelBundle(Network.init(cfg, seed=0))
    frames, utts = score_dataset(model, data)
    assert frames.level is Level.FRAME and utts.level is Level.UTTERANCE
    assert len(utts) == 2 * len(data)
    assert len(frames) == 2 * sum(len(u) for u in data)
    r = report(frames, utts, "tiny")
    assert 0 <= r.eer_utt <= 1 and 0 <= r.cavg_frame <= 1
    bad = [type(u)(u.id, 3, u.frames, u.phone_labels) for u in data]
    with pytest.raises(ValueError, match="outside"):
        score_dataset(model, bad)
