import numpy as np
import pytest

from melclone import evaluation as ev
from melclone import model as md
from melclone import training as tr
from melclone.errors import InputError

MODEL_CFG = dict(hidden=16, unet_levels=2, content_blocks=2, kernel_unet=3)


@pytest.fixture(scope="module")
def random_model(tiny_corpus):
    return md.Model(tr._default_model_config(tiny_corpus, **MODEL_CFG), seed=5,
                    dtype=np.float64)


class TestPca2d:
    def test_hand_computed_three_points(self):
        pca = ev.pca_2d(np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]))
        np.testing.assert_allclose(pca.explained_variance, [0.75, 0.25], atol=1e-12)
        np.testing.assert_allclose(np.abs(pca.components[0]),
                                   [1 / np.sqrt(2), 1 / np.sqrt(2)], atol=1e-12)
        expected_p1 = np.array([0.0, 1 / np.sqrt(2), -1 / np.sqrt(2)])
        np.testing.assert_allclose(pca.projections[:, 0], expected_p1, atol=1e-12)

    def test_collinear_points(self):
        points = np.outer(np.arange(6, dtype=float), [1.0, 0.0, 0.0])
        pca = ev.pca_2d(points)
        assert not pca.degenerate
        np.testing.assert_allclose(pca.explained_variance[0], 1.0, atol=1e-12)
        np.testing.assert_allclose(np.abs(pca.components[0]), [1, 0, 0], atol=1e-12)

    def test_identical_points_degenerate(self):
        pca = ev.pca_2d(np.ones((5, 4)))
        assert pca.degenerate
        np.testing.assert_array_equal(pca.projections, 0.0)

    def test_translation_invariance(self, rng):
        points = rng.normal(size=(20, 6))
        a = ev.pca_2d(points)
        b = ev.pca_2d(points + rng.normal(size=(1, 6)) * 100)
        np.testing.assert_allclose(a.projections, b.projections, atol=1e-9)

    def test_components_orthonormal(self, rng):
        pca = ev.pca_2d(rng.normal(size=(30, 8)))
        gram = pca.components @ pca.components.T
        np.testing.assert_allclose(gram, np.eye(2), atol=1e-9)

    def test_explained_variance_sorted_in_unit_interval(self, rng):
        pca = ev.pca_2d(rng.normal(size=(25, 5)))
        ev_ratio = pca.explained_variance
        assert 0 <= ev_ratio[1] <= ev_ratio[0] <= 1

    def test_too_few_points_rejected(self):
        with pytest.raises(InputError):
            ev.pca_2d(np.zeros((2, 3)))


class TestSeparability:
    def test_relabeling_invariance(self, rng):
        vectors = rng.normal(size=(30, 4))
        labels = np.array(["a", "b", "c"] * 10)
        ratio = ev.separability_ratio(vectors, labels)
        relabeled = np.array([{"a": "z", "b": "y", "c": "x"}[l] for l in labels])
        assert ev.separability_ratio(vectors, relabeled) == pytest.approx(ratio)

    def test_separated_groups_score_higher(self, rng):
        tight = rng.normal(scale=0.1, size=(20, 3))
        labels = np.array(["a"] * 10 + ["b"] * 10)
        apart = tight.copy()
        apart[10:] += 10.0
        assert ev.separability_ratio(apart, labels) > ev.separability_ratio(tight, labels)


class TestEmbedLevels:
    def test_levels_and_vector_dims(self, random_model, tiny_corpus):
        levels = ev.embed_levels(random_model, tiny_corpus, split="clone",
                                 max_utterances=12)
        assert len(levels) == random_model.config.unet_levels
        for emb in levels:
            assert emb.vectors.shape[1] == 2 * random_model.config.hidden
            assert len(set(emb.speaker_ids)) >= 2
            assert emb.pca.projections.shape[0] == len(emb.speaker_ids)

    def test_report_written(self, random_model, tiny_corpus, tmp_path):
        levels = ev.embed_levels(random_model, tiny_corpus, split="clone",
                                 max_utterances=15)
        path = ev.write_embedding_report(levels, tmp_path)
        header = path.read_text().splitlines()[0]
        assert header == "level,speaker_id,style_id,pc1,pc2"


class TestMcdTransfer:
    def test_trial_counts_and_reproducibility(self, random_model, tiny_corpus):
        rep_a = ev.eval_mcd_transfer(random_model, tiny_corpus, n_texts=2, seed=3)
        rep_b = ev.eval_mcd_transfer(random_model, tiny_corpus, n_texts=2, seed=3)
        clones = len(tiny_corpus.speakers_in_split("clone"))
        assert len(rep_a.trials) == clones * len(tiny_corpus.styles) * 2
        assert [(t.matched, t.mismatched) for t in rep_a.trials] == \
               [(t.matched, t.mismatched) for t in rep_b.trials]
        assert all(t.matched >= 0 and t.mismatched >= 0 for t in rep_a.trials)

    def test_report_written(self, random_model, tiny_corpus, tmp_path):
        rep = ev.eval_mcd_transfer(random_model, tiny_corpus, n_texts=1, seed=0)
        path = ev.write_mcd_report(rep, tmp_path)
        lines = path.read_text().splitlines()
        assert lines[0] == "speaker_id,style_id,text_index,matched_mcd,mismatched_mcd"
        assert len(lines) == len(rep.trials) + 1


class TestDistributions:
    def test_sample_counts_match_trials_times_phonemes(self, random_model, tiny_corpus):
        report = ev.eval_distributions(random_model, tiny_corpus, n_texts=3, seed=1)
        clones = len(tiny_corpus.speakers_in_split("clone"))
        for style_id, dist in report.styles.items():
            expected = 0
            for s_i in range(clones):
                for t_i in range(3):
                    expected += ev._eval_text(tiny_corpus, 1, 1000 + t_i).size
            assert dist.durations.size == expected
            assert dist.energies.size == expected
            assert dist.durations.size >= ev.MIN_DISTRIBUTION_SAMPLES


class TestCurves:
    def _write_csv(self, path, rows):
        import csv

        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(tr.LOSS_CSV_HEADER)
            for step, l1 in rows:
                writer.writerow([step, l1, 0.0, 0.0, l1])

    def test_identical_curves_ratio_one(self, tmp_path):
        rows = [(s, 2.0 / (1 + s)) for s in range(0, 501, 50)]
        self._write_csv(tmp_path / "a.csv", rows)
        self._write_csv(tmp_path / "b.csv", rows)
        cmp = ev.eval_reconstruction_curves(tmp_path / "a.csv", tmp_path / "b.csv")
        assert cmp.ratio == 1.0
        assert cmp.steps.size == len(rows)

    def test_mismatched_grids_rejected(self, tmp_path):
        self._write_csv(tmp_path / "a.csv", [(s, 1.0) for s in range(0, 200, 50)])
        self._write_csv(tmp_path / "b.csv", [(s, 1.0) for s in range(0, 200, 25)])
        with pytest.raises(InputError):
            ev.eval_reconstruction_curves(tmp_path / "a.csv", tmp_path / "b.csv")

    def test_median_filter_monotone_on_noisy_decay(self, rng):
        steps = np.arange(100)
        noisy = 2.0 * np.exp(-steps / 30) + rng.normal(scale=0.02, size=100)
        filt = ev.median_filter_curve(noisy, 9)
        assert filt[:9].mean() > filt[-9:].mean()
