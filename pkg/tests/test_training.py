import numpy as np
import pytest

from melclone import model as md
from melclone import training as tr
from melclone.autodiff import Tensor
from melclone.errors import CheckpointError, ConfigError, DivergenceError

TINY_TRAIN = dict(batch_size=4, val_interval=5, checkpoint_interval=100,
                  stage1_holdout_per_speaker=2)


def _model_config(corpus, **kw):
    return tr._default_model_config(corpus, hidden=16, unet_levels=2,
                                    content_blocks=2, kernel_unet=3, **kw)


@pytest.fixture(scope="module")
def stage1_result(tiny_corpus, tmp_path_factory):
    out = tmp_path_factory.mktemp("s1")
    cfg = tr.TrainConfig(stage=1, steps=20, seed=4, **TINY_TRAIN)
    return tr.train_stage1(tiny_corpus, cfg, out, model_config=_model_config(tiny_corpus))


class TestLosses:
    def _pieces(self, rng):
        mel = Tensor(rng.normal(size=(2, 5, 8)))
        content = Tensor(rng.normal(size=(2, 3, 8)))
        mask = np.ones((2, 1, 8))
        mask[1, 0, 6:] = 0.0
        return mel, content, mask

    def test_zero_when_equal(self, rng):
        mel, content, mask = self._pieces(rng)
        total, report = tr.compute_stage2_loss(mel, mel, content, content, mask)
        assert total.item() == 0.0 and report.total == 0.0

    def test_unit_mel_offset(self, rng):
        mel, content, mask = self._pieces(rng)
        shifted = Tensor(mel.data + 1.0)
        _, report = tr.compute_stage2_loss(mel, shifted, content, content, mask)
        np.testing.assert_allclose(report.l1_mel, 1.0, atol=1e-12)
        assert report.l2_content == 0.0

    def test_content_offset_squares(self, rng):
        mel, content, mask = self._pieces(rng)
        shifted = Tensor(content.data + 2.0)
        _, report = tr.compute_stage2_loss(mel, mel, content, shifted, mask)
        np.testing.assert_allclose(report.l2_content, 4.0, atol=1e-12)
        np.testing.assert_allclose(report.total, 4.0, atol=1e-12)

    def test_shape_mismatch_rejected(self, rng):
        mel, content, mask = self._pieces(rng)
        from melclone.errors import InputError
        with pytest.raises(InputError):
            tr.compute_stage2_loss(mel, content, content, content, mask)

    def test_total_is_weighted_sum(self, rng):
        mel, content, mask = self._pieces(rng)
        _, rep = tr.compute_stage2_loss(mel, Tensor(mel.data + 0.5), content,
                                        Tensor(content.data - 1.0), mask,
                                        lambda_mel=2.0, lambda_content=0.5)
        np.testing.assert_allclose(rep.total, 2.0 * rep.l1_mel + 0.5 * rep.l2_content,
                                   atol=1e-12)

    def test_non_finite_losses_raise(self):
        with pytest.raises(DivergenceError):
            tr.LossReport(0, np.nan, 0.0, 0.0, np.nan)


class TestMaskingInvariance:
    @pytest.mark.parametrize("stage", [1, 2])
    def test_padded_frames_leave_losses_unchanged(self, tiny_corpus, stage):
        cfg = tr.TrainConfig(stage=stage, steps=1, seed=0, dtype="float64")
        model = md.Model(_model_config(tiny_corpus), seed=1, dtype=np.float64)
        utts = [tiny_corpus.load(r["utt_id"]) for r in tiny_corpus.split_rows("train")[:3]]
        index = tr.speaker_indexer(tiny_corpus)
        batch = tr.make_batch(utts, index, np.float64)

        extra = 7
        padded = tr.Batch(
            batch.phone_ids, batch.phone_mask, batch.durations, batch.duration_z,
            np.concatenate([batch.mel, np.zeros((len(utts), batch.mel.shape[1], extra))],
                           axis=2),
            np.concatenate([batch.frame_mask, np.zeros((len(utts), 1, extra))], axis=2),
            batch.speaker_idx,
        )
        fn = tr._stage1_losses if stage == 1 else tr._stage2_losses
        _, rep_a = fn(model, batch, cfg, 0)
        _, rep_b = fn(model, padded, cfg, 0)
        for field in ("l1_mel", "l2_content", "mse_duration", "total"):
            assert abs(getattr(rep_a, field) - getattr(rep_b, field)) < 1e-12


class TestCheckpoints:
    def test_save_load_save_byte_identical(self, tmp_path, tiny_corpus, stage1_result):
        ckpt = tr.load_checkpoint(stage1_result.final_ckpt)
        tr.save_checkpoint(tmp_path / "again.ckpt", ckpt)
        again = tr.load_checkpoint(tmp_path / "again.ckpt")
        tr.save_checkpoint(tmp_path / "thrice.ckpt", again)
        assert (tmp_path / "again.ckpt").read_bytes() == (tmp_path / "thrice.ckpt").read_bytes()

    def test_truncated_checkpoint_rejected(self, tmp_path, stage1_result):
        blob = stage1_result.final_ckpt.read_bytes()
        bad = tmp_path / "trunc.ckpt"
        bad.write_bytes(blob[:-20])
        with pytest.raises(CheckpointError):
            tr.load_checkpoint(bad)

    def test_config_mismatch_refused(self, tiny_corpus, stage1_result):
        other = _model_config(tiny_corpus, kernel_content=5)
        with pytest.raises(CheckpointError):
            tr.load_checkpoint(stage1_result.final_ckpt, expect_config=other)

    def test_stage_components_saved(self, stage1_result):
        ckpt = tr.load_checkpoint(stage1_result.final_ckpt)
        components = {name.split(".", 1)[0] for name in ckpt.params}
        assert components == set(tr.STAGE_COMPONENTS[1])


class TestDeterminismAndResume:
    def test_same_seed_identical_reports(self, tiny_corpus, tmp_path):
        cfg = tr.TrainConfig(stage=1, steps=10, seed=6, **TINY_TRAIN)
        res_a = tr.train_stage1(tiny_corpus, cfg, tmp_path / "a",
                                model_config=_model_config(tiny_corpus))
        res_b = tr.train_stage1(tiny_corpus, cfg, tmp_path / "b",
                                model_config=_model_config(tiny_corpus))
        assert [r.row() for r in res_a.reports] == [r.row() for r in res_b.reports]
        assert [r.row() for r in res_a.val_reports] == [r.row() for r in res_b.val_reports]

    def test_resume_reproduces_reports_exactly(self, tiny_corpus, tmp_path):
        mc = _model_config(tiny_corpus)
        full_cfg = tr.TrainConfig(stage=1, steps=16, seed=8, batch_size=4,
                                  val_interval=4, checkpoint_interval=8)
        full = tr.train_stage1(tiny_corpus, full_cfg, tmp_path / "full", model_config=mc)

        half_cfg = tr.TrainConfig(stage=1, steps=8, seed=8, batch_size=4,
                                  val_interval=4, checkpoint_interval=8)
        tr.train_stage1(tiny_corpus, half_cfg, tmp_path / "half", model_config=mc)
        resumed = tr.train_stage1(
            tiny_corpus, full_cfg, tmp_path / "resumed", model_config=mc,
            resume_from=tr.load_checkpoint(tmp_path / "half" / "final_stage1.ckpt"))

        tail = [r.row() for r in full.reports[8:]]
        assert [r.row() for r in resumed.reports] == tail

        ck_full = tr.load_checkpoint(full.final_ckpt)
        ck_res = tr.load_checkpoint(resumed.final_ckpt)
        assert ck_full.params.keys() == ck_res.params.keys()
        for name in ck_full.params:
            np.testing.assert_array_equal(ck_full.params[name], ck_res.params[name])

    def test_resume_requires_matching_stage(self, tiny_corpus, tmp_path, stage1_result):
        cfg = tr.TrainConfig(stage=2, steps=4, seed=1, **TINY_TRAIN)
        ckpt = tr.load_checkpoint(stage1_result.final_ckpt)
        with pytest.raises(CheckpointError):
            tr.train_stage2(tiny_corpus, ckpt, cfg, tmp_path / "x",
                            resume_from=ckpt)


class TestStage2:
    def test_content_encoder_frozen_bit_exact(self, tiny_corpus, tmp_path, stage1_result):
        stage1 = tr.load_checkpoint(stage1_result.final_ckpt)
        cfg = tr.TrainConfig(stage=2, steps=12, seed=2, **TINY_TRAIN)
        result = tr.train_stage2(tiny_corpus, stage1, cfg, tmp_path / "s2")
        stage2 = tr.load_checkpoint(result.final_ckpt)
        for name, arr in stage1.params.items():
            comp = name.split(".", 1)[0]
            if comp in ("content_encoder", "duration_predictor"):
                np.testing.assert_array_equal(stage2.params[name], arr)

    def test_requires_stage1_checkpoint(self, tiny_corpus, tmp_path):
        cfg = tr.TrainConfig(stage=2, steps=2, seed=0)
        with pytest.raises(ConfigError):
            tr.train_stage2(tiny_corpus, None, cfg, tmp_path / "x")

    def test_alignment_checked_every_step(self, tiny_corpus, tmp_path, stage1_result):
        stage1 = tr.load_checkpoint(stage1_result.final_ckpt)
        cfg = tr.TrainConfig(stage=2, steps=6, seed=2, **TINY_TRAIN)
        result = tr.train_stage2(tiny_corpus, stage1, cfg, tmp_path / "s2b")
        assert result.alignment_checks >= 6 * 4  # every batch item, every step


class TestOptimization:
    def test_single_step_decreases_loss_with_small_lr(self, tiny_corpus):
        utts = [tiny_corpus.load(tiny_corpus.split_rows("train")[0]["utt_id"])]
        index = tr.speaker_indexer(tiny_corpus)
        batch = tr.make_batch(utts, index, np.float64)

        decreased = False
        for lr in (1e-3, 1e-4, 1e-5):
            model = md.Model(_model_config(tiny_corpus), seed=7, dtype=np.float64)
            cfg = tr.TrainConfig(stage=1, steps=1, seed=7, learning_rate=lr,
                                 dtype="float64")
            params = {k: p for k, p in model.named_parameters().items()
                      if k.split(".", 1)[0] in tr.STAGE_COMPONENTS[1]}
            optimizer = tr.Adam(params, lr, 0.9, 0.999, 1e-8)
            total, before = tr._stage1_losses(model, batch, cfg, 0)
            optimizer.zero_grad()
            total.backward()
            optimizer.step()
            _, after = tr._stage1_losses(model, batch, cfg, 1)
            if after.total < before.total:
                decreased = True
                break
        assert decreased

    def test_loss_csv_round_trip(self, stage1_result):
        rows = tr.read_loss_csv(stage1_result.train_csv)
        assert [r.row() for r in rows] == [r.row() for r in stage1_result.reports]
        val = tr.read_loss_csv(stage1_result.val_csv)
        assert val[0].step == 0 and val[-1].step == 20
