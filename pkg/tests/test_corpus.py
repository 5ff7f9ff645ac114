import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from palid.corpus import (LanguageSpec, SynthSpec, default_spec, generate_corpus, language_counts,
                          load_corpus, load_spec, phone_codebook, sample_phones, save_corpus,
                          save_spec, select_languages, splice, split_dataset)


def small_spec(**kw):
    args = dict(seed=3, num_languages=2, utterances_per_language=10)
    args.update(kw)
    return default_spec(**args)


def test_shape_and_ranges():
    data = generate_corpus(small_spec())
    assert len(data) == 20
    assert {u.language for u in data} == {0, 1}
    for u in data:
        assert u.frames.shape[1] == 23
        assert u.phone_labels.max() < 20
        assert len(u.frames) == len(u.phone_labels) >= 1


def test_generation_is_deterministic():
    a = generate_corpus(small_spec())
    b = generate_corpus(small_spec())
    assert all(x.frames.tobytes() == y.frames.tobytes() and x.id == y.id for x, y in zip(a, b))
    c = generate_corpus(small_spec(seed=4))
    assert a[0].frames.tobytes() != c[0].frames.tobytes()


def test_zero_stddev_emits_codebook_plus_offset():
    spec = small_spec(emission_stddev=0.0)
    book = phone_codebook(spec)
    for u in generate_corpus(spec):
        expected = book[u.phone_labels] + spec.languages[u.language].channel_offset
        np.testing.assert_array_equal(u.frames, expected)


def test_codebook_shared_across_languages():
    two = small_spec(num_languages=2)
    four = small_spec(num_languages=4)
    np.testing.assert_array_equal(phone_codebook(two), phone_codebook(four))


def test_durations_and_lengths_respect_ranges():
    spec = small_spec(frames_per_phone=(2, 4), utterance_phones=(5, 7))
    for u in generate_corpus(spec):
        assert 5 * 2 <= len(u) <= 7 * 4


def test_invalid_spec_lists_every_violation():
    spec = small_spec()
    spec.languages[0].transition = spec.languages[0].transition * 2
    spec.frames_per_phone = (5, 2)
    with pytest.raises(ValueError) as err:
        generate_corpus(spec)
    msg = str(err.value)
    assert "row-stochastic" in msg and "frames_per_phone" in msg
    assert len(spec.violations()) == 2


def test_offset_bound():
    spec = small_spec()
    spec.languages[1].channel_offset = np.full(23, 1.5)
    assert any("channel_offset" in v for v in spec.violations())


@pytest.mark.parametrize("balanced", [0, 3])
def test_spec_json_roundtrip(tmp_path, balanced):
    spec = small_spec(num_languages=4, balanced_perms=balanced)
    save_spec(spec, tmp_path / "s.json")
    back = load_spec(tmp_path / "s.json")
    assert json.loads((tmp_path / "s.json").read_text())["format_version"] == 1
    for a, b in zip(spec.languages, back.languages):
        np.testing.assert_allclose(b.transition.sum(axis=1), 1, atol=1e-9)
        np.testing.assert_array_equal(a.transition, b.transition)
    assert back.to_json() == spec.to_json()


def test_similar_pair_is_mixed():
    spec = small_spec(num_languages=4)
    T0, T2 = spec.languages[0].transition, spec.languages[2].transition
    T1 = spec.languages[1].transition
    assert np.abs(T0 - T2).sum() < np.abs(T0 - T1).sum()


def test_balanced_chains_are_doubly_stochastic():
    spec = small_spec(num_languages=4, balanced_perms=3)
    for lang in spec.languages:
        np.testing.assert_allclose(lang.transition.sum(axis=0), 1, atol=1e-12)
        np.testing.assert_allclose(lang.initial, 1 / 20)


def test_bigram_histogram_matches_transition():
    spec = small_spec(num_phones=5, concentration=1.0)
    lang = spec.languages[0]
    rng = np.random.default_rng(0)
    seq = sample_phones(rng, lang, 20_001)
    counts = np.zeros((5, 5))
    np.add.at(counts, (seq[:-1], seq[1:]), 1)
    empirical = counts / counts.sum(axis=1, keepdims=True)
    assert np.abs(empirical - lang.transition).max() < 0.05


def test_splice_examples():
    out = splice([[1.0], [2.0], [3.0]], 1)
    np.testing.assert_array_equal(out, [[1, 1, 2], [1, 2, 3], [2, 3, 3]])
    x = np.arange(12.0).reshape(4, 3)
    np.testing.assert_array_equal(splice(x, 0), x)
    assert splice(np.zeros((7, 23)), 2).shape == (7, 115)
    with pytest.raises(ValueError):
        splice(np.zeros((0, 3)), 1)


@settings(max_examples=50)
@given(st.integers(1, 12), st.integers(0, 4))
def test_splice_centre_block_is_identity(T, ctx):
    x = np.arange(T * 2, dtype=float).reshape(T, 2)
    out = splice(x, ctx)
    np.testing.assert_array_equal(out[:, 2 * ctx:2 * ctx + 2], x)


def _dataset(per_lang=100, langs=2):
    return generate_corpus(small_spec(num_languages=langs, utterances_per_language=per_lang,
                                      utterance_phones=(1, 2), frames_per_phone=(1, 1)))


def test_split_counts_and_partition():
    data = _dataset()
    tr, dv, te = split_dataset(data, [0.8, 0.1, 0.1], seed=0)
    for part, n in ((tr, 80), (dv, 10), (te, 10)):
        assert language_counts(part) == {0: n, 1: n}
    ids = [u.id for u in tr + dv + te]
    assert len(ids) == len(set(ids)) and set(ids) == {u.id for u in data}


def test_split_seeds():
    data = _dataset()
    a = split_dataset(data, [0.8, 0.1, 0.1], seed=0)
    b = split_dataset(data, [0.8, 0.1, 0.1], seed=1)
    assert [u.id for u in a[0]] != [u.id for u in b[0]]
    assert [language_counts(p) for p in a] == [language_counts(p) for p in b]
    with pytest.raises(ValueError):
        split_dataset(_dataset(per_lang=2), [0.5, 0.25, 0.25])
    with pytest.raises(ValueError):
        split_dataset(data, [0.5, 0.6, 0.1])


def test_split_uneven_remainders():
    tr, dv, te = split_dataset(_dataset(per_lang=7), [0.5, 0.2, 0.3], seed=2)
    assert [language_counts(p)[0] for p in (tr, dv, te)] == [4, 1, 2]


def test_select_languages_relabels():
    data = _dataset(per_lang=3, langs=4)
    sub = select_languages(data, [2, 3])
    assert len(sub) == 6 and {u.language for u in sub} == {0, 1}
    assert all(u.id.startswith("L2") for u in sub if u.language == 0)


def test_corpus_file_roundtrip(tmp_path):
    data = generate_corpus(small_spec(utterances_per_language=3))
    path = tmp_path / "c.jsonl"
    save_corpus(data, path)
    lines = path.read_text().splitlines()
    assert len(lines) == 6 and all(json.loads(x)["format_version"] == 1 for x in lines)
    back = load_corpus(path)
    for a, b in zip(data, back):
        assert a.id == b.id and a.language == b.language
        np.testing.assert_array_equal(a.phone_labels, b.phone_labels)
        np.testing.assert_array_equal(b.frames, a.frames.astype(np.float32))
    save_corpus(back, tmp_path / "d.jsonl")
    assert (tmp_path / "d.jsonl").read_bytes() == path.read_bytes()


def test_hand_built_spec():
    lang = LanguageSpec("x", np.eye(2), np.array([1.0, 0.0]), np.zeros(3))
    spec = SynthSpec([lang], num_phones=2, frame_dim=3, utterances_per_language=2,
                     emission_stddev=0.0, frames_per_phone=(1, 1), utterance_phones=(4, 4))
    for u in generate_corpus(spec):
        np.testing.assert_array_equal(u.phone_labels, [0, 0, 0, 0])
