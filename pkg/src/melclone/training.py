"""Two-stage optimization and bit-exact checkpointing.

Stage 1 trains the content encoder, duration predictor, and the
speaker-conditional decoder on L1 mel reconstruction plus normalized-duration
MSE.  Stage 2 freezes the content encoder (and, by default, the duration
predictor), then trains the style encoder and AdaIN decoder against the
joint L1 + content-consistency loss with the target mel doubling as the
style reference.  Every random draw comes from counter-based streams keyed
by (seed, step), so runs are reproducible and resume is exact.
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from . import autodiff as ad
from . import model as md
from . import nn
from .autodiff import Tensor
from .container import read_arrays, write_arrays
from .corpus import Corpus, seeded_rng
from .errors import (AlignmentError, CheckpointError, ConfigError, DivergenceError,
                     InputError)

LOSS_CSV_HEADER = ["step", "l1_mel", "l2_content", "mse_duration", "total"]
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class TrainConfig:
    stage: int
    steps: int
    batch_size: int = 8
    learning_rate: float = 1e-3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    lambda_mel: float = 1.0
    lambda_content: float = 1.0
    lambda_duration: float = 1.0
    checkpoint_interval: int = 2000
    val_interval: int = 50
    dtype: str = "float32"
    single_level_stats: bool = False
    train_duration_predictor: bool = False
    stage1_holdout_per_speaker: int = 3

    def __post_init__(self):
        if self.stage not in (1, 2):
            raise ConfigError(f"stage must be 1 or 2, got {self.stage}")
        if self.steps <= 0 or self.learning_rate <= 0 or self.batch_size <= 0:
            raise ConfigError("steps, learning_rate and batch_size must be positive")

    @property
    def np_dtype(self):
        return np.dtype(self.dtype)


@dataclass
class LossReport:
    step: int
    l1_mel: float
    l2_content: float
    mse_duration: float
    total: float

    def __post_init__(self):
        self.l1_mel = float(self.l1_mel)
        self.l2_content = float(self.l2_content)
        self.mse_duration = float(self.mse_duration)
        self.total = float(self.total)
        parts = (self.l1_mel, self.l2_content, self.mse_duration, self.total)
        if not all(np.isfinite(parts)):
            raise DivergenceError(f"non-finite loss at step {self.step}: {parts}")

    def row(self) -> list:
        return [self.step, repr(self.l1_mel), repr(self.l2_content),
                repr(self.mse_duration), repr(self.total)]


class Adam:
    """Plain Adam over a named parameter dict; state round-trips exactly."""

    def __init__(self, params: dict[str, Tensor], lr: float, beta1: float,
                 beta2: float, eps: float):
        self.params = params
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}

    def step(self) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for name, p in self.params.items():
            g = p.grad
            if g is None:
                continue
            m = self.m[name]
            v = self.v[name]
            m += (1.0 - self.beta1) * (g - m)
            v += (1.0 - self.beta2) * (g * g - v)
            p.data -= (self.lr / c1) * m / (np.sqrt(v / c2) + self.eps)

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def state_arrays(self) -> dict[str, np.ndarray]:
        out = {}
        for name in self.params:
            out[f"adam.m.{name}"] = self.m[name]
            out[f"adam.v.{name}"] = self.v[name]
        return out

    def load_state(self, arrays: dict[str, np.ndarray], t: int) -> None:
        self.t = t
        for name in self.params:
            self.m[name] = arrays[f"adam.m.{name}"].copy()
            self.v[name] = arrays[f"adam.v.{name}"].copy()


# -- batching -------------------------------------------------------------------

@dataclass
class Batch:
    phone_ids: np.ndarray  # (B, P) int
    phone_mask: np.ndarray  # (B, 1, P)
    durations: np.ndarray  # (B, P) int, 0-padded
    duration_z: np.ndarray  # (B, P) float, z-scored per utterance
    mel: np.ndarray  # (B, n_mels, T)
    frame_mask: np.ndarray  # (B, 1, T)
    speaker_idx: np.ndarray  # (B,) int


def speaker_indexer(corpus: Corpus) -> dict[str, int]:
    return {spk: i for i, spk in enumerate(sorted(corpus.speakers))}


def assert_aligned(utt) -> None:
    if int(utt.durations.sum()) != utt.mel.frames:
        raise AlignmentError(
            f"{utt.utt_id}: content/mel misaligned "
            f"({utt.durations.sum()} expanded frames vs {utt.mel.frames} mel frames)"
        )


def make_batch(utts, speaker_index: dict[str, int], dtype) -> Batch:
    for utt in utts:
        assert_aligned(utt)
    bsz = len(utts)
    p_max = max(u.phone_ids.size for u in utts)
    t_max = max(u.mel.frames for u in utts)
    phone_ids = np.zeros((bsz, p_max), dtype=np.int64)
    phone_mask = np.zeros((bsz, 1, p_max))
    durations = np.zeros((bsz, p_max), dtype=np.int64)
    duration_z = np.zeros((bsz, p_max))
    mel = np.zeros((bsz, utts[0].mel.n_mels, t_max), dtype=dtype)
    frame_mask = np.zeros((bsz, 1, t_max))
    speaker_idx = np.zeros(bsz, dtype=np.int64)
    for b, utt in enumerate(utts):
        n, t = utt.phone_ids.size, utt.mel.frames
        phone_ids[b, :n] = utt.phone_ids
        phone_mask[b, 0, :n] = 1.0
        durations[b, :n] = utt.durations
        duration_z[b, :n] = md.zscore_durations(utt.durations)
        mel[b, :, :t] = utt.mel.data.T
        frame_mask[b, 0, :t] = 1.0
        speaker_idx[b] = speaker_index[utt.speaker_id]
    return Batch(phone_ids, phone_mask, durations, duration_z, mel, frame_mask,
                 speaker_idx)


# -- losses ---------------------------------------------------------------------

def _masked_mean(x: Tensor, mask: np.ndarray, per_channel: int) -> Tensor:
    m = Tensor(mask.astype(x.dtype))
    denom = float(mask.sum()) * per_channel
    return ad.mul(ad.tsum(ad.mul(x, m)), 1.0 / denom)


def masked_l1(pred: Tensor, target: Tensor, frame_mask: np.ndarray) -> Tensor:
    """Mean absolute error over unpadded frame-bins."""
    return _masked_mean(ad.absolute(pred - target), frame_mask, pred.shape[1])


def masked_mse(pred: Tensor, target: Tensor, frame_mask: np.ndarray,
               per_channel: int | None = None) -> Tensor:
    """Mean squared error over unpadded positions (times channels if 3-D)."""
    channels = per_channel if per_channel is not None else (
        pred.shape[1] if pred.ndim == 3 else 1
    )
    diff = ad.square(pred - target)
    if diff.ndim == 2:  # (B, P) duration heads: mask is (B, 1, P)
        diff = ad.reshape(diff, (diff.shape[0], 1, diff.shape[1]))
    return _masked_mean(diff, frame_mask, channels)


def compute_stage2_loss(mel_true: Tensor, mel_pred: Tensor, content: Tensor,
                        content_pred: Tensor, mask: np.ndarray,
                        lambda_mel: float = 1.0, lambda_content: float = 1.0,
                        step: int = 0) -> tuple[Tensor, LossReport]:
    """Joint reconstruction + content-consistency loss over unmasked frames."""
    if mel_true.shape != mel_pred.shape or content.shape != content_pred.shape:
        raise InputError(
            f"loss shape mismatch: mel {mel_true.shape} vs {mel_pred.shape}, "
            f"content {content.shape} vs {content_pred.shape}"
        )
    if mel_true.shape[2] != content.shape[2]:
        raise InputError("mel and content are not aligned in time")
    l1 = masked_l1(mel_pred, mel_true, mask)
    l2 = masked_mse(content_pred, content, mask)
    total = ad.mul(l1, lambda_mel) + ad.mul(l2, lambda_content)
    report = LossReport(step, l1.item(), l2.item(), 0.0,
                        lambda_mel * l1.item() + lambda_content * l2.item())
    return total, report


# -- checkpoints ------------------------------------------------------------------

STAGE_COMPONENTS = {
    1: ("content_encoder", "duration_predictor", "pretrain_decoder"),
    2: ("content_encoder", "duration_predictor", "style_encoder", "decoder"),
}


@dataclass
class Checkpoint:
    stage: int
    step: int
    model_config: md.ModelConfig
    seed: int
    dtype: str
    params: dict[str, np.ndarray]
    adam_arrays: dict[str, np.ndarray] = field(default_factory=dict)
    adam_t: int = 0
    extra: dict = field(default_factory=dict)


def save_checkpoint(path, ckpt: Checkpoint) -> None:
    arrays = {f"param.{k}": v for k, v in ckpt.params.items()}
    arrays.update(ckpt.adam_arrays)
    meta = {
        "kind": "checkpoint",
        "version": CHECKPOINT_VERSION,
        "stage": ckpt.stage,
        "step": ckpt.step,
        "model_config": ckpt.model_config.to_dict(),
        "rng": {"seed": ckpt.seed, "steps_consumed": ckpt.step},
        "adam_t": ckpt.adam_t,
        "dtype": ckpt.dtype,
        "extra": ckpt.extra,
    }
    write_arrays(path, arrays, meta)


def load_checkpoint(path, expect_config: md.ModelConfig | None = None) -> Checkpoint:
    arrays, meta = read_arrays(path)
    if meta.get("kind") != "checkpoint":
        raise CheckpointError(f"{path} is not a checkpoint container")
    if meta.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {meta.get('version')}")
    config = md.ModelConfig.from_dict(meta["model_config"])
    if expect_config is not None and config != expect_config:
        raise CheckpointError(
            f"checkpoint model config {config} does not match expected {expect_config}"
        )
    params = {k[len("param."):]: v for k, v in arrays.items() if k.startswith("param.")}
    adam = {k: v for k, v in arrays.items() if k.startswith("adam.")}
    return Checkpoint(meta["stage"], meta["step"], config, meta["rng"]["seed"],
                      meta["dtype"], params, adam, meta["adam_t"], meta.get("extra", {}))


def model_checkpoint(model: md.Model, stage: int, step: int, seed: int,
                     optimizer: Adam | None = None, extra: dict | None = None
                     ) -> Checkpoint:
    names = STAGE_COMPONENTS[stage]
    params = {
        k: p.data for k, p in model.named_parameters().items()
        if k.split(".", 1)[0] in names
    }
    return Checkpoint(stage, step, model.config, seed, str(model.np_dtype), params,
                      optimizer.state_arrays() if optimizer else {},
                      optimizer.t if optimizer else 0, extra or {})


def load_params_into(model: md.Model, params: dict[str, np.ndarray],
                     components: tuple[str, ...]) -> None:
    model_params = model.named_parameters()
    for name, value in params.items():
        if name.split(".", 1)[0] not in components:
            continue
        if name not in model_params:
            raise CheckpointError(f"checkpoint parameter {name!r} not in model")
        if model_params[name].data.shape != value.shape:
            raise CheckpointError(f"shape mismatch for {name!r}")
        model_params[name].data = value.astype(model.np_dtype, copy=True)


def build_model(ckpt: Checkpoint, dtype=None) -> md.Model:
    """Reconstruct a model carrying a checkpoint's parameters."""
    model = md.Model(ckpt.model_config, seed=ckpt.seed,
                     dtype=np.dtype(dtype or ckpt.dtype))
    load_params_into(model, ckpt.params, STAGE_COMPONENTS[ckpt.stage])
    return model


# -- training loops ----------------------------------------------------------------

@dataclass
class TrainResult:
    final_ckpt: Path
    best_ckpt: Path
    train_csv: Path
    val_csv: Path
    reports: list[LossReport]
    val_reports: list[LossReport]
    alignment_checks: int
    runtime_s: float


class _CsvLog:
    def __init__(self, path, resume: bool):
        self.path = Path(path)
        mode = "a" if resume and self.path.exists() else "w"
        self._fh = open(self.path, mode, newline="")
        self._writer = csv.writer(self._fh)
        if mode == "w":
            self._writer.writerow(LOSS_CSV_HEADER)

    def write(self, report: LossReport):
        self._writer.writerow(report.row())
        self._fh.flush()

    def close(self):
        self._fh.close()


def read_loss_csv(path) -> list[LossReport]:
    with open(path) as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0] != LOSS_CSV_HEADER:
        raise InputError(f"{path} is not a loss CSV")
    return [LossReport(int(r[0]), float(r[1]), float(r[2]), float(r[3]), float(r[4]))
            for r in rows[1:]]


def _stage1_rows(corpus: Corpus, holdout: int):
    train, val = [], []
    cutoff = corpus.spec.utterances_per_speaker - holdout
    for row in corpus.split_rows("train"):
        (val if row["text_id"] >= cutoff else train).append(row)
    return train, val


def _stage1_losses(mdl: md.Model, batch: Batch, cfg: TrainConfig, step: int):
    hiddens = md.content_encode(mdl, batch.phone_ids, batch.phone_mask)
    pred_z = md.predict_durations_normalized(mdl, hiddens, batch.phone_mask)
    dur_loss = masked_mse(pred_z, Tensor(batch.duration_z.astype(pred_z.dtype)),
                          batch.phone_mask, per_channel=1)
    expanded, frame_mask = md.length_regulate_batch(
        hiddens, batch.durations, batch.phone_mask, total_frames=batch.mel.shape[2])
    mel_pred = mdl.pretrain_decoder(expanded, batch.speaker_idx, frame_mask)
    l1 = masked_l1(mel_pred, Tensor(batch.mel), frame_mask)
    total = ad.mul(l1, cfg.lambda_mel) + ad.mul(dur_loss, cfg.lambda_duration)
    report = LossReport(step, l1.item(), 0.0, dur_loss.item(),
                        cfg.lambda_mel * l1.item() + cfg.lambda_duration * dur_loss.item())
    return total, report


def _stage2_losses(mdl: md.Model, batch: Batch, cfg: TrainConfig, step: int,
                   content_override: Tensor | None = None):
    if content_override is not None:
        hiddens = content_override
    else:
        hiddens = md.content_encode(mdl, batch.phone_ids, batch.phone_mask)
    expanded, frame_mask = md.length_regulate_batch(
        hiddens, batch.durations, batch.phone_mask, total_frames=batch.mel.shape[2])
    mel_true = Tensor(batch.mel)
    stats, content_pred = md.style_encode(mdl, mel_true, frame_mask)
    mel_pred = md.mel_decode(mdl, expanded, stats, frame_mask,
                             single_level=cfg.single_level_stats)
    return compute_stage2_loss(mel_true, mel_pred, expanded.detach(), content_pred,
                               frame_mask, cfg.lambda_mel, cfg.lambda_content, step)


def _avg_reports(reports: list[LossReport], weights: list[float], step: int) -> LossReport:
    w = np.asarray(weights) / np.sum(weights)
    vals = [sum(getattr(r, f) * wi for r, wi in zip(reports, w))
            for f in ("l1_mel", "l2_content", "mse_duration", "total")]
    return LossReport(step, *vals)


class Trainer:
    """Shared machinery for both stages; switched by config.stage."""

    def __init__(self, corpus: Corpus, config: TrainConfig, out_dir,
                 model_config: md.ModelConfig,
                 stage1_ckpt: Checkpoint | None = None,
                 resume_from: Checkpoint | None = None):
        self.corpus = corpus
        self.config = config
        self.out_dir = Path(out_dir)
        self.out_dir.mkdir(parents=True, exist_ok=True)
        self.speaker_index = speaker_indexer(corpus)
        self.model = md.Model(model_config, seed=config.seed, dtype=config.np_dtype)

        if config.stage == 2:
            if stage1_ckpt is None and resume_from is None:
                raise ConfigError("stage 2 requires a stage-1 checkpoint")
            if stage1_ckpt is not None:
                if stage1_ckpt.stage != 1:
                    raise CheckpointError("stage-2 training expects a stage-1 checkpoint")
                if stage1_ckpt.model_config != model_config:
                    raise CheckpointError(
                        "stage-1 checkpoint model config does not match corpus/model config"
                    )
                load_params_into(self.model, stage1_ckpt.params,
                                 ("content_encoder", "duration_predictor"))
            frozen = ("content_encoder",) if config.train_duration_predictor else (
                "content_encoder", "duration_predictor")
            trainable_components = tuple(
                c for c in STAGE_COMPONENTS[2] if c not in frozen)
        else:
            trainable_components = STAGE_COMPONENTS[1]

        all_params = self.model.named_parameters()
        self.trainable = {k: p for k, p in all_params.items()
                          if k.split(".", 1)[0] in trainable_components}
        for name, p in all_params.items():
            p.requires_grad = name in self.trainable
        self.frozen_snapshot = {
            k: p.data.copy() for k, p in all_params.items() if k not in self.trainable
        }

        self.optimizer = Adam(self.trainable, config.learning_rate, config.adam_beta1,
                              config.adam_beta2, config.adam_eps)
        self.start_step = 0
        if resume_from is not None:
            if resume_from.stage != config.stage:
                raise CheckpointError("resume checkpoint is for a different stage")
            if resume_from.model_config != model_config:
                raise CheckpointError("resume checkpoint model config mismatch")
            load_params_into(self.model, resume_from.params,
                             STAGE_COMPONENTS[config.stage])
            self.optimizer.load_state(resume_from.adam_arrays, resume_from.adam_t)
            self.start_step = resume_from.step

        if config.stage == 1:
            self.train_rows, self.val_rows = _stage1_rows(
                corpus, config.stage1_holdout_per_speaker)
        else:
            self.train_rows = corpus.split_rows("train")
            self.val_rows = corpus.split_rows("val")
        if not self.train_rows or not self.val_rows:
            raise ConfigError("empty train or validation row set")

        # With the content encoder frozen, its per-utterance outputs are
        # constants; cache them and skip the encoder forward per step.
        self._content_cache: dict[str, np.ndarray] | None = None
        if config.stage == 2:
            self._content_cache = {}

        self.alignment_checks = 0

    # -- data ------------------------------------------------------------
    def _sample_batch(self, step: int):
        rng = seeded_rng(self.config.seed, "batch", self.config.stage, step)
        idx = rng.choice(len(self.train_rows), size=min(self.config.batch_size,
                                                        len(self.train_rows)),
                         replace=False)
        utts = [self.corpus.load(self.train_rows[i]["utt_id"]) for i in idx]
        self.alignment_checks += len(utts)
        return utts, make_batch(utts, self.speaker_index, self.config.np_dtype)

    def _val_batches(self):
        utts = [self.corpus.load(r["utt_id"]) for r in self.val_rows]
        self.alignment_checks += len(utts)
        bs = self.config.batch_size
        return [(utts[i:i + bs],
                 make_batch(utts[i:i + bs], self.speaker_index, self.config.np_dtype))
                for i in range(0, len(utts), bs)]

    def _content_for(self, utts, batch: Batch) -> Tensor | None:
        """Frozen-encoder content hiddens assembled from a per-utterance cache."""
        if self._content_cache is None:
            return None
        hidden = self.model.config.hidden
        out = np.zeros((len(utts), hidden, batch.phone_ids.shape[1]),
                       dtype=self.config.np_dtype)
        for b, utt in enumerate(utts):
            rows = self._content_cache.get(utt.utt_id)
            if rows is None:
                with ad.no_grad():
                    rows = md.content_encode(self.model,
                                             utt.phone_ids[None, :]).data[0].copy()
                self._content_cache[utt.utt_id] = rows
            out[b, :, : rows.shape[1]] = rows
        return Tensor(out)

    # -- steps ------------------------------------------------------------
    def _losses(self, utts, batch: Batch, step: int):
        if self.config.stage == 1:
            return _stage1_losses(self.model, batch, self.config, step)
        return _stage2_losses(self.model, batch, self.config, step,
                              content_override=self._content_for(utts, batch))

    def _validate(self, step: int) -> LossReport:
        reports, weights = [], []
        with ad.no_grad():
            for utts, batch in self._val_batches():
                _, rep = self._losses(utts, batch, step)
                reports.append(rep)
                weights.append(float(batch.frame_mask.sum()))
        return _avg_reports(reports, weights, step)

    def run(self) -> TrainResult:
        cfg = self.config
        t0 = time.time()
        resume = self.start_step > 0
        train_log = _CsvLog(self.out_dir / f"losses_stage{cfg.stage}.csv", resume)
        val_log = _CsvLog(self.out_dir / f"val_losses_stage{cfg.stage}.csv", resume)
        reports: list[LossReport] = []
        val_reports: list[LossReport] = []
        best_path = self.out_dir / f"best_stage{cfg.stage}.ckpt"
        final_path = self.out_dir / f"final_stage{cfg.stage}.ckpt"
        best_val = np.inf

        if not resume:
            first = self._validate(0)
            val_reports.append(first)
            val_log.write(first)
            best_val = first.total

        for step in range(self.start_step + 1, cfg.steps + 1):
            utts, batch = self._sample_batch(step)
            total, report = self._losses(utts, batch, step)
            self.optimizer.zero_grad()
            total.backward()
            self.optimizer.step()
            reports.append(report)
            train_log.write(report)

            if step % cfg.val_interval == 0 or step == cfg.steps:
                val_report = self._validate(step)
                val_reports.append(val_report)
                val_log.write(val_report)
                if val_report.total < best_val:
                    best_val = val_report.total
                    save_checkpoint(best_path, self._checkpoint(step,
                                                                {"best_val": best_val}))
            if step % cfg.checkpoint_interval == 0 and step < cfg.steps:
                save_checkpoint(self.out_dir / f"step{step}_stage{cfg.stage}.ckpt",
                                self._checkpoint(step))

        self._assert_frozen()
        save_checkpoint(final_path, self._checkpoint(cfg.steps))
        if not best_path.exists():
            save_checkpoint(best_path, self._checkpoint(cfg.steps))
        train_log.close()
        val_log.close()
        return TrainResult(final_path, best_path, train_log.path, val_log.path,
                           reports, val_reports, self.alignment_checks,
                           time.time() - t0)

    def _checkpoint(self, step: int, extra: dict | None = None) -> Checkpoint:
        return model_checkpoint(self.model, self.config.stage, step, self.config.seed,
                                self.optimizer, extra)

    def _assert_frozen(self) -> None:
        current = self.model.named_parameters()
        for name, snap in self.frozen_snapshot.items():
            if name.split(".", 1)[0] not in STAGE_COMPONENTS[self.config.stage]:
                continue
            if not np.array_equal(current[name].data, snap):
                raise AssertionError(f"frozen parameter {name!r} changed during training")


def _default_model_config(corpus: Corpus, hidden: int = 64, unet_levels: int = 4,
                          **overrides) -> md.ModelConfig:
    return md.ModelConfig(
        n_phonemes=corpus.inventory.n_symbols,
        n_speakers=len(corpus.speakers),
        n_mels=corpus.audio.n_mels,
        hidden=hidden,
        unet_levels=unet_levels,
        **overrides,
    )


def train_stage1(corpus: Corpus, config: TrainConfig, out_dir,
                 model_config: md.ModelConfig | None = None,
                 resume_from: Checkpoint | None = None) -> TrainResult:
    """Pre-training stage: content encoder + duration predictor + speaker decoder."""
    if config.stage != 1:
        raise ConfigError("train_stage1 requires a stage-1 TrainConfig")
    trainer = Trainer(corpus, config, out_dir,
                      model_config or _default_model_config(corpus),
                      resume_from=resume_from)
    return trainer.run()


def train_stage2(corpus: Corpus, stage1_ckpt: Checkpoint | None, config: TrainConfig,
                 out_dir, model_config: md.ModelConfig | None = None,
                 resume_from: Checkpoint | None = None) -> TrainResult:
    """Cloning stage: style encoder + AdaIN decoder over a frozen content encoder."""
    if config.stage != 2:
        raise ConfigError("train_stage2 requires a stage-2 TrainConfig")
    inferred = model_config or (stage1_ckpt.model_config if stage1_ckpt else None)
    if inferred is None:
        raise ConfigError("stage 2 needs a model config or a stage-1 checkpoint")
    trainer = Trainer(corpus, config, out_dir, inferred, stage1_ckpt=stage1_ckpt,
                      resume_from=resume_from)
    return trainer.run()
