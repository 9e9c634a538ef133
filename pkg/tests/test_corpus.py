import json

import numpy as np
import pytest

from melclone import corpus as cp
from melclone import dsp
from melclone.errors import ConfigError, InputError

INV = cp.build_inventory(0, 16, 80)
SPEAKER = cp.SpeakerProfile("spkX", 180.0, 0.8, 1, 1.0, gain=1.2)
NEUTRAL = cp.DEFAULT_STYLES["neutral"]


class TestInventory:
    def test_counts_and_flags(self):
        assert INV.n_symbols == 17
        assert INV.symbols[0] == cp.SILENCE_SYMBOL
        assert INV.voiced[1:].any() and (~INV.voiced[1:]).any()
        assert len(set(INV.symbols)) == 17

    def test_text_round_trip(self):
        ids = INV.ids_from_text("aa ss aa")
        assert ids.tolist() == [INV.symbols.index("aa"), INV.symbols.index("ss"),
                                INV.symbols.index("aa")]
        with pytest.raises(InputError):
            INV.ids_from_text("aa nosuch")

    def test_deterministic(self):
        again = cp.build_inventory(0, 16, 80)
        np.testing.assert_array_equal(again.templates, INV.templates)
        np.testing.assert_array_equal(again.base_durations, INV.base_durations)


class TestRender:
    def test_silence_at_log_floor(self):
        phones = np.array([cp.SILENCE_ID, 3, cp.SILENCE_ID])
        durations = np.array([4, 5, 2])
        mel, f0 = cp.render_mel(phones, durations, SPEAKER, NEUTRAL, INV, seed=1)
        np.testing.assert_allclose(mel.data[:4], np.log(dsp.LOG_FLOOR))
        np.testing.assert_allclose(mel.data[9:], np.log(dsp.LOG_FLOOR))
        np.testing.assert_array_equal(f0.values[:4], 0.0)

    def test_energy_mult_shifts_log_by_ln2(self):
        phones = np.array([1, 2, 5, 8])  # no silence
        durations = np.array([3, 4, 2, 5])
        loud = cp.StyleProfile("loud", 1.0, 1.0, 2.0, 0.05)
        mel_a, _ = cp.render_mel(phones, durations, SPEAKER, NEUTRAL, INV, seed=2)
        mel_b, _ = cp.render_mel(phones, durations, SPEAKER, loud, INV, seed=2)
        e_a = dsp.phoneme_energy(mel_a, durations)
        e_b = dsp.phoneme_energy(mel_b, durations)
        np.testing.assert_allclose(e_b - e_a, np.log(2.0), atol=1e-9)

    def test_f0_recovered_by_estimator(self):
        rng = cp.seeded_rng(3, "t")
        phones = cp.sample_phone_string(rng, INV, 10, 10)
        durations = cp.sample_durations(phones, SPEAKER, NEUTRAL, INV, rng)
        mel, truth = cp.render_mel(phones, durations, SPEAKER, NEUTRAL, INV, seed=3)
        est = dsp.estimate_f0_mel(mel)
        voiced = truth.values > 0
        ok = np.abs(est.values[voiced] - truth.values[voiced]) <= 10.0
        assert ok.mean() >= 0.95

    def test_durations_below_one_rejected(self):
        with pytest.raises(InputError):
            cp.render_mel(np.array([1]), np.array([0]), SPEAKER, NEUTRAL, INV, seed=0)

    def test_total_frames(self):
        phones = np.array([1, 2, 3])
        durations = np.array([2, 3, 4])
        mel, f0 = cp.render_mel(phones, durations, SPEAKER, NEUTRAL, INV, seed=0)
        assert mel.frames == 9 and f0.values.size == 9


class TestGeneration:
    def test_same_seed_byte_identical(self, tmp_path):
        spec = cp.CorpusSpec(n_train_speakers=4, n_val_speakers=1, n_clone_speakers=2,
                             utterances_per_speaker=3, min_phones=4, max_phones=6,
                             seed=5)
        m1 = cp.generate_corpus(spec, tmp_path / "a")
        m2 = cp.generate_corpus(spec, tmp_path / "b")
        assert m1.read_bytes() == m2.read_bytes()
        for row in cp.Corpus(m1).rows:
            a = (tmp_path / "a" / row["path"]).read_bytes()
            b = (tmp_path / "b" / row["path"]).read_bytes()
            assert a == b

    def test_manifest_counts(self, tiny_corpus):
        spec = tiny_corpus.spec
        expected = (spec.n_train_speakers + spec.n_val_speakers) * \
            spec.utterances_per_speaker + \
            spec.n_clone_speakers * spec.utterances_per_speaker * len(cp.STYLE_NAMES)
        assert len(tiny_corpus) == expected
        assert tiny_corpus.header["n_utterances"] == expected

    def test_clone_speakers_not_in_train(self, tiny_corpus):
        train_speakers = {r["speaker_id"] for r in tiny_corpus.split_rows("train")}
        clone_speakers = {r["speaker_id"] for r in tiny_corpus.split_rows("clone")}
        assert not train_speakers & clone_speakers
        assert tiny_corpus.speakers_in_split("clone") == sorted(clone_speakers)

    def test_clone_split_has_all_styles(self, tiny_corpus):
        styles = {r["style_id"] for r in tiny_corpus.split_rows("clone")}
        assert styles == set(cp.STYLE_NAMES)
        assert {r["style_id"] for r in tiny_corpus.split_rows("train")} == {"neutral"}

    def test_durations_match_frames(self, tiny_corpus):
        for row in tiny_corpus.rows:
            utt = tiny_corpus.load(row["utt_id"])
            assert int(utt.durations.sum()) == utt.mel.frames
            assert utt.f0.values.size == utt.mel.frames

    def test_separability_gap_positive(self, tiny_corpus):
        utts = [tiny_corpus.load(r["utt_id"]) for r in tiny_corpus.rows]
        assert cp.speaker_separability_gap(utts) > 0

    def test_bad_counts_rejected(self):
        with pytest.raises(ConfigError):
            cp.CorpusSpec(n_train_speakers=2)

    def test_header_is_json_per_line(self, tiny_corpus_dir):
        with open(tiny_corpus_dir / "manifest.jsonl") as fh:
            lines = fh.read().strip().splitlines()
        header = json.loads(lines[0])
        assert header["kind"] == "corpus_manifest"
        row = json.loads(lines[1])
        assert {"utt_id", "speaker_id", "style_id", "split", "path",
                "phone_ids", "durations", "n_frames"} <= set(row)


class TestStats:
    def test_duration_mult_ratio(self, tiny_corpus):
        clone = tiny_corpus.speakers_in_split("clone")[0]
        stats = {g.style_id: g for g in cp.corpus_stats(tiny_corpus)
                 if g.speaker_id == clone}
        ratio = stats["sad"].duration_stats.mean / stats["neutral"].duration_stats.mean
        assert abs(ratio - 1.5) / 1.5 < 0.10

    def test_energy_orders_with_energy_mult(self, tiny_corpus):
        clone = tiny_corpus.speakers_in_split("clone")[0]
        stats = {g.style_id: g for g in cp.corpus_stats(tiny_corpus)
                 if g.speaker_id == clone}
        assert stats["angry"].mean_energy > stats["neutral"].mean_energy

    def test_monotone_style_f0_std_near_zero(self):
        flat = cp.StyleProfile("flat", 1.0, 1e-6, 1.0, 0.0)
        rng = cp.seeded_rng(9, "flat")
        phones = cp.sample_phone_string(rng, INV, 12, 12)
        durations = cp.sample_durations(phones, SPEAKER, flat, INV, rng)
        _, f0 = cp.render_mel(phones, durations, SPEAKER, flat, INV, seed=9)
        voiced = f0.values[f0.values > 0]
        assert voiced.std() < 0.1

    def test_empty_filter_rejected(self, tiny_corpus):
        with pytest.raises(InputError):
            cp.corpus_stats(tiny_corpus, style="nosuchstyle")
