"""Finite-difference gradient suite over every differentiable op and both
composite training losses, on a tiny 64-bit configuration.

Points whose relu pre-activations sit within RELU_KINK_MARGIN of zero are
re-sampled (central differences straddle the kink there and say nothing
about the analytic gradient).
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from . import model as md
from . import nn
from . import training as tr
from .autodiff import Tensor
from .corpus import seeded_rng

RELU_KINK_MARGIN = 1e-3
MAX_RESAMPLES = 20


def _projected(fn_out: Tensor, proj: np.ndarray) -> Tensor:
    return ad.tsum(ad.mul(fn_out, Tensor(proj)))


def _away_from_kinks(build, seeds) -> tuple:
    """Call ``build(seed)`` until no relu pre-activation is near zero."""
    for seed in seeds:
        ad.relu_kink_log = log = []
        try:
            result = build(seed)
        finally:
            ad.relu_kink_log = None
        if not log or min(log) > RELU_KINK_MARGIN:
            return result
    raise RuntimeError("could not sample a point away from relu kinks")


def check_conv1d(seed: int = 0, h: float = 1e-5) -> float:
    rng = seeded_rng(seed, "fd", "conv")
    x = Tensor(rng.normal(size=(2, 3, 7)), requires_grad=True)
    w = Tensor(rng.normal(size=(4, 3, 3)) * 0.4, requires_grad=True)
    b = Tensor(rng.normal(size=(4,)) * 0.2, requires_grad=True)
    proj = rng.normal(size=(2, 4, 7))
    return nn.finite_diff_check(
        lambda: _projected(ad.conv1d(x, w, b), proj), {"x": x, "w": w, "b": b}, h=h)


def check_instance_norm(seed: int = 0, h: float = 1e-5) -> float:
    rng = seeded_rng(seed, "fd", "in")
    x = Tensor(rng.normal(size=(2, 3, 9)), requires_grad=True)
    proj = rng.normal(size=(2, 3, 9))
    mask = np.ones((2, 1, 9))
    mask[1, 0, 6:] = 0.0

    def fn():
        y, stats = nn.instance_norm(x, mask)
        return _projected(y, proj) + ad.tsum(stats.mean) + ad.tsum(stats.std)

    return nn.finite_diff_check(fn, {"x": x}, h=h)


def check_adain(seed: int = 0, h: float = 1e-5) -> float:
    rng = seeded_rng(seed, "fd", "adain")
    x = Tensor(rng.normal(size=(2, 3, 9)), requires_grad=True)
    ref = nn.ChannelStats(
        Tensor(rng.normal(size=(2, 3, 1)), requires_grad=True),
        Tensor(0.5 + np.abs(rng.normal(size=(2, 3, 1))), requires_grad=True),
    )
    proj = rng.normal(size=(2, 3, 9))
    return nn.finite_diff_check(
        lambda: _projected(nn.adain(x, ref), proj),
        {"x": x, "ref_mean": ref.mean, "ref_std": ref.std}, h=h)


def check_self_attention(seed: int = 0, h: float = 1e-5) -> float:
    rng = seeded_rng(seed, "fd", "attn")
    layer = nn.SelfAttention(3, rng)
    x = Tensor(rng.normal(size=(2, 3, 5)), requires_grad=True)
    proj = rng.normal(size=(2, 3, 5))
    mask = np.ones((2, 1, 5))
    mask[0, 0, 4:] = 0.0
    return nn.finite_diff_check(
        lambda: _projected(layer(x, mask), proj),
        {"x": x, **layer.named_parameters()}, h=h)


def check_rescnn_block(seed: int = 0, h: float = 1e-5) -> float:
    def build(s):
        rng = seeded_rng(s, "fd", "rescnn")
        block = nn.ResCnn1d(3, 3, rng)
        x = Tensor(rng.normal(size=(2, 3, 7)), requires_grad=True)
        proj = rng.normal(size=(2, 3, 7))
        fn = lambda: _projected(block(x), proj)  # noqa: E731
        fn()  # populate the kink log
        return fn, {"x": x, **block.named_parameters()}

    fn, wrt = _away_from_kinks(build, range(seed, seed + MAX_RESAMPLES))
    return nn.finite_diff_check(fn, wrt, h=h)


def _tiny_model(hidden: int, levels: int, seed: int) -> md.Model:
    config = md.ModelConfig(
        n_phonemes=6, n_speakers=3, n_mels=8, hidden=hidden,
        kernel_content=3, kernel_unet=3, unet_levels=levels, content_blocks=2,
        out_bias=0.0,
    )
    return md.Model(config, seed=seed, dtype=np.float64)


def _tiny_batch(config: md.ModelConfig, seed: int) -> tr.Batch:
    rng = seeded_rng(seed, "fd", "batch")
    counts = [3, 2]
    p_max = max(counts)
    durations = np.zeros((2, p_max), dtype=np.int64)
    phone_mask = np.zeros((2, 1, p_max))
    phone_ids = np.zeros((2, p_max), dtype=np.int64)
    duration_z = np.zeros((2, p_max))
    for b, n in enumerate(counts):
        phone_ids[b, :n] = rng.integers(0, config.n_phonemes, size=n)
        durations[b, :n] = rng.integers(1, 4, size=n)
        phone_mask[b, 0, :n] = 1.0
        duration_z[b, :n] = md.zscore_durations(durations[b, :n])
    totals = durations.sum(axis=1)
    t_max = int(totals.max())
    mel = np.zeros((2, config.n_mels, t_max))
    frame_mask = np.zeros((2, 1, t_max))
    for b in range(2):
        mel[b, :, : totals[b]] = rng.normal(size=(config.n_mels, totals[b]))
        frame_mask[b, 0, : totals[b]] = 1.0
    speaker_idx = rng.integers(0, config.n_speakers, size=2)
    return tr.Batch(phone_ids, phone_mask, durations, duration_z, mel, frame_mask,
                    speaker_idx)


def _sample_params(model: md.Model, components: tuple[str, ...], rng,
                   per_component: int = 2) -> dict[str, Tensor]:
    """A few parameters from every requested component, for sampled FD checks."""
    by_comp: dict[str, list[tuple[str, Tensor]]] = {}
    for name, p in model.named_parameters().items():
        by_comp.setdefault(name.split(".", 1)[0], []).append((name, p))
    out = {}
    for comp in components:
        entries = by_comp[comp]
        idx = rng.choice(len(entries), size=min(per_component, len(entries)),
                         replace=False)
        for i in idx:
            out[entries[i][0]] = entries[i][1]
    return out


def check_stage1_loss(hidden: int = 16, levels: int = 2, seed: int = 0,
                      h: float = 1e-5, max_coords: int = 4) -> float:
    """Composite pre-training loss vs finite differences, sampled parameters.

    The duration predictor reads a stop-gradient copy of the content hiddens,
    so the training gradient of a content-encoder parameter is the derivative
    of the mel term alone.  Content-encoder parameters are therefore checked
    against the loss with the duration term switched off; the remaining
    components see the full loss.
    """
    model = _tiny_model(hidden, levels, seed)
    batch = _tiny_batch(model.config, seed)
    cfg = tr.TrainConfig(stage=1, steps=1, seed=seed, dtype="float64")
    cfg_mel_only = tr.TrainConfig(stage=1, steps=1, seed=seed, dtype="float64",
                                  lambda_duration=0.0)
    rng = seeded_rng(seed, "fd", "s1-params")
    wrt = _sample_params(model, tr.STAGE_COMPONENTS[1], rng)
    ce = {k: v for k, v in wrt.items() if k.startswith("content_encoder.")}
    rest = {k: v for k, v in wrt.items() if not k.startswith("content_encoder.")}
    err_ce = nn.finite_diff_check(
        lambda: tr._stage1_losses(model, batch, cfg_mel_only, 0)[0],
        ce, h=h, max_coords=max_coords, rng=rng)
    err_rest = nn.finite_diff_check(
        lambda: tr._stage1_losses(model, batch, cfg, 0)[0],
        rest, h=h, max_coords=max_coords, rng=rng)
    return max(err_ce, err_rest)


def check_stage2_loss(hidden: int = 16, levels: int = 2, seed: int = 0,
                      h: float = 1e-5, max_coords: int = 4) -> float:
    """Composite cloning loss vs finite differences over its trainable set."""
    model = _tiny_model(hidden, levels, seed)
    batch = _tiny_batch(model.config, seed)
    cfg = tr.TrainConfig(stage=2, steps=1, seed=seed, dtype="float64")
    rng = seeded_rng(seed, "fd", "s2-params")
    wrt = _sample_params(model, ("style_encoder", "decoder"), rng)
    return nn.finite_diff_check(lambda: tr._stage2_losses(model, batch, cfg, 0)[0],
                                wrt, h=h, max_coords=max_coords, rng=rng)


def run_gradient_suite(hidden: int = 16, levels: int = 2, seed: int = 0
                       ) -> dict[str, float]:
    """Max relative FD error per op plus both composite losses."""
    return {
        "conv1d": check_conv1d(seed),
        "instance_norm": check_instance_norm(seed),
        "adain": check_adain(seed),
        "self_attention": check_self_attention(seed),
        "rescnn_block": check_rescnn_block(seed),
        "stage1_composite": check_stage1_loss(hidden, levels, seed),
        "stage2_composite": check_stage2_loss(hidden, levels, seed),
    }
