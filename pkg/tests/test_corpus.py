import numpy as np
import pytest

from strukt.corpus import load_corpus, synthetic_corpus, write_corpus


def test_split_sizes_and_determinism():
    corpus, _ = synthetic_corpus(40, 0, section_seconds=(2.0, 3.0), n_sections=(2, 3))
    tr, va, te = corpus.split(7)
    assert (len(tr), len(va), len(te)) == (28, 4, 8)
    ids = [s.song_id for part in (tr, va, te) for s in part.songs]
    assert sorted(ids) == sorted(s.song_id for s in corpus.songs)
    again = corpus.split(7)
    assert [s.song_id for s in again[2].songs] == [s.song_id for s in te.songs]
    assert [s.song_id for s in corpus.split(8)[2].songs] != [s.song_id for s in te.songs]


def test_synthetic_corpus_deterministic():
    a, _ = synthetic_corpus(3, 4, n_sections=(2, 3), section_seconds=(2.0, 3.0))
    b, _ = synthetic_corpus(3, 4, n_sections=(2, 3), section_seconds=(2.0, 3.0))
    for x, y in zip(a.songs, b.songs):
        assert x.clip.samples.tobytes() == y.clip.samples.tobytes()
        assert x.track == y.track


def test_write_load_round_trip(tmp_path):
    corpus, specs = synthetic_corpus(3, 1, n_sections=(2, 3), section_seconds=(2.0, 3.0))
    write_corpus(tmp_path, corpus, specs)
    back = load_corpus(tmp_path)
    assert list(back.vocab) == list(corpus.vocab)
    for x, y in zip(corpus.songs, back.songs):
        assert x.song_id == y.song_id
        # float32 storage
        np.testing.assert_allclose(y.clip.samples, x.clip.samples, atol=1e-7)
        assert x.track.labels == y.track.labels
        np.testing.assert_allclose(y.track.boundaries, x.track.boundaries, atol=1e-3)


def test_manifest_only_directory(tmp_path):
    corpus, specs = synthetic_corpus(2, 2, n_sections=(2, 2), section_seconds=(2.0, 2.5))
    write_corpus(tmp_path, corpus, specs)
    for wav in tmp_path.glob("*.wav"):
        wav.unlink()
    back = load_corpus(tmp_path)
    assert back.songs[1].clip.samples.tobytes() == corpus.songs[1].clip.samples.tobytes()


def test_label_seconds():
    corpus, _ = synthetic_corpus(3, 3, n_sections=(2, 3), section_seconds=(2.0, 3.0))
    total = sum(s.track.duration for s in corpus.songs)
    assert corpus.label_seconds().sum() == pytest.approx(total)
