import numpy as np
import pytest

from proscore.corpus import (Corpus, CorpusError, FeatureSequence,
                             PhoneAlignment, PhonePrior, PosteriorGram,
                             RatedUtterance, SplitManifest, SynthConfig,
                             load_corpus, save_corpus, stack_context,
                             synth_corpus, write_manifest)
from proscore.assess import pcc

from conftest import TINY_SYNTH


# ---------------------------------------------------------------------------
# domain type invariants


def test_feature_sequence_rejects_non_finite():
    with pytest.raises(CorpusError, match="non-finite"):
        FeatureSequence("u", np.array([[1.0, np.nan]]))


def test_feature_sequence_rejects_empty():
    with pytest.raises(CorpusError):
        FeatureSequence("u", np.zeros((0, 3)))


def test_alignment_rejects_overlap_and_empty_segments():
    with pytest.raises(CorpusError):
        PhoneAlignment("u", [(0, 0, 5), (1, 3, 8)])
    with pytest.raises(CorpusError):
        PhoneAlignment("u", [(0, 4, 4)])
    with pytest.raises(CorpusError, match="empty alignment"):
        PhoneAlignment("u", [])


def test_posteriorgram_row_sum_violation_names_row():
    post = np.full((3, 4), 0.25)
    post[1] = 0.225  # row sums to 0.9
    with pytest.raises(CorpusError, match="row 1"):
        PosteriorGram("u", post, ("a", "b", "c", "d"))


def test_phone_prior_uniform_and_validation():
    prior = PhonePrior.uniform(8)
    assert prior.prior.shape == (8,)
    assert abs(prior.prior.sum() - 1.0) < 1e-12
    with pytest.raises(CorpusError):
        PhonePrior(np.array([0.5, 0.6]))


def test_rated_utterance_mean_and_bounds():
    r = RatedUtterance.from_scores("u", [3, 4, 5])
    assert r.mean_score == pytest.approx(4.0)
    with pytest.raises(CorpusError):
        RatedUtterance.from_scores("u", [0, 3])


def test_split_manifest_disjoint_and_coverage():
    with pytest.raises(CorpusError, match="disjoint"):
        SplitManifest(["a", "b"], ["b"], ["c"])
    m = SplitManifest(["a"], ["b"], ["c"])
    m.check_covers(["a", "b", "c"])
    with pytest.raises(CorpusError):
        m.check_covers(["a", "b", "c", "d"])


# ---------------------------------------------------------------------------
# context stacking


def _fs(frames):
    return FeatureSequence("u", np.asarray(frames, dtype=np.float64))


def test_stack_context_output_dim():
    fs = _fs(np.random.default_rng(0).standard_normal((20, 40)))
    out = stack_context(fs, 5, 5)
    assert out.dim == 440
    assert out.num_frames == 20


def test_stack_context_identity_window():
    fs = _fs(np.random.default_rng(1).standard_normal((7, 3)))
    out = stack_context(fs, 0, 0)
    np.testing.assert_array_equal(out.frames, fs.frames)


def test_stack_context_single_frame_replication():
    fs = _fs([[1.0, 2.0]])
    out = stack_context(fs, 5, 5)
    np.testing.assert_array_equal(out.frames, np.tile([1.0, 2.0], 11)[None, :])


def test_stack_context_locality():
    # row t depends only on the clamped window of input rows
    rng = np.random.default_rng(2)
    frames = rng.standard_normal((10, 2))
    base = stack_context(_fs(frames), 1, 1).frames
    perturbed = frames.copy()
    perturbed[7] += 100.0
    out = stack_context(_fs(perturbed), 1, 1).frames
    changed = np.nonzero(np.any(out != base, axis=1))[0]
    np.testing.assert_array_equal(changed, [6, 7, 8])


def test_stack_context_rejects_negative_window():
    with pytest.raises(ValueError):
        stack_context(_fs([[0.0, 1.0]]), -1, 0)


# ---------------------------------------------------------------------------
# synthetic corpus


def test_synth_corpus_deterministic(tiny_corpus):
    corpus, oracle = tiny_corpus
    corpus2, oracle2 = synth_corpus(TINY_SYNTH)
    assert oracle == oracle2
    for uid in corpus.features:
        np.testing.assert_array_equal(corpus.features[uid].frames,
                                      corpus2.features[uid].frames)
        np.testing.assert_array_equal(corpus.posteriors[uid].post,
                                      corpus2.posteriors[uid].post)


def test_synth_posteriorgram_rows_normalized(tiny_corpus):
    corpus, _ = tiny_corpus
    for pg in corpus.posteriors.values():
        np.testing.assert_allclose(pg.post.sum(axis=1), 1.0, atol=1e-9)


def test_synth_extreme_proficiency_labels():
    cfg = SynthConfig(num_phones=4, feature_dim=5, num_speakers=2,
                      utterances_per_speaker=2, phones_per_utterance=3,
                      proficiency_noise=0.0, label_noise=0.0, seed=3)
    corpus, oracle = synth_corpus(cfg, speaker_proficiency=[1.0, 0.0])
    for uid, rho in oracle.items():
        expected = 5.0 if rho == 1.0 else 1.0
        assert corpus.labels[uid].mean_score == expected


def test_synth_oracle_correlates_with_labels(tiny_corpus):
    corpus, oracle = tiny_corpus
    ids = sorted(oracle)
    rho = np.array([oracle[u] for u in ids])
    labels = np.array([corpus.labels[u].mean_score for u in ids])
    assert pcc(rho, labels) > 0.9


def test_synth_splits_speaker_disjoint(tiny_corpus):
    corpus, _ = tiny_corpus
    spk = lambda uid: uid.split("_")[0]
    train_spk = {spk(u) for u in corpus.splits.train_ids}
    train_spk |= {spk(u) for u in corpus.splits.dev_ids}
    eval_spk = {spk(u) for u in corpus.splits.eval_ids}
    assert not train_spk & eval_spk


def test_synth_config_validation():
    with pytest.raises(CorpusError):
        SynthConfig(num_phones=0).validate()
    with pytest.raises(CorpusError):
        SynthConfig(frames_per_phone=(5, 3)).validate()
    with pytest.raises(CorpusError):
        SynthConfig(eval_fraction=1.5).validate()


# ---------------------------------------------------------------------------
# corpus file I/O


def test_save_load_round_trip(tiny_corpus, tmp_path):
    corpus, _ = tiny_corpus
    manifest = save_corpus(corpus, tmp_path)
    loaded = load_corpus(manifest)
    assert set(loaded.features) == set(corpus.features)
    assert loaded.phone_table == corpus.phone_table
    assert loaded.splits == corpus.splits
    for uid in corpus.features:
        np.testing.assert_array_equal(loaded.features[uid].frames,
                                      corpus.features[uid].frames)
        np.testing.assert_array_equal(loaded.posteriors[uid].post,
                                      corpus.posteriors[uid].post)
        assert loaded.alignments[uid].segments == corpus.alignments[uid].segments
        assert loaded.labels[uid] == corpus.labels[uid]


def test_load_empty_corpus_errors(tmp_path):
    (tmp_path / "features").mkdir()
    (tmp_path / "posteriors").mkdir()
    for name in ("alignments.tsv", "labels.tsv", "splits.tsv"):
        (tmp_path / name).write_text("")
    manifest = tmp_path / "manifest.tsv"
    write_manifest(manifest, {"features": "features",
                              "alignments": "alignments.tsv",
                              "posteriors": "posteriors",
                              "labels": "labels.tsv",
                              "splits": "splits.tsv"})
    with pytest.raises(CorpusError, match="empty corpus"):
        load_corpus(manifest)


def test_load_missing_manifest_role(tmp_path):
    manifest = tmp_path / "manifest.tsv"
    manifest.write_text("features\tfeatures\n")
    with pytest.raises(CorpusError, match="missing roles"):
        load_corpus(manifest)


def test_validate_catches_cross_references(tiny_corpus):
    corpus, _ = tiny_corpus
    uid = corpus.utterance_ids[0]
    bad = Corpus(dict(corpus.features), dict(corpus.alignments),
                 dict(corpus.posteriors), dict(corpus.labels),
                 corpus.splits, corpus.phone_table)
    bad.alignments["ghost"] = corpus.alignments[uid]
    with pytest.raises(CorpusError, match="unknown utterance"):
        bad.validate()
