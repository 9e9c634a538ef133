"""Command-line entry point: corpus generation, training, synthesis, evaluation.

Configuration resolves flag > file > default; the ``UTTS_SEED`` environment
variable overrides the default seed (flags still win).  Every subcommand
that owns an output directory drops the fully resolved configuration plus
the tool version there as ``run_config.json``.

Exit codes: 0 success, 1 usage/configuration error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import copy
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__, dsp, evaluation as ev, model as md, training as tr
from .corpus import Corpus, CorpusSpec, generate_corpus
from .diagnostics import run_gradient_suite
from .errors import ConfigError, MelcloneError, StateError


class UsageError(Exception):
    pass


DEFAULTS = {
    "seed": 0,
    "paths": {
        "corpus_root": "corpus",
        "run_dir": "runs",
        "report_dir": "reports",
    },
    "corpus": {
        "n_train_speakers": 12,
        "n_val_speakers": 2,
        "n_clone_speakers": 4,
        "utterances_per_speaker": 40,
        "min_phones": 8,
        "max_phones": 20,
        "n_phonemes": 16,
        "max_seed_retries": 5,
    },
    # Desk-scale profile; the full-scale profile raises hidden to 256.
    "model": {
        "hidden": 64,
        "unet_levels": 4,
        "content_blocks": 4,
        "kernel_content": 3,
        "kernel_unet": 9,
        "out_bias": -4.0,
    },
    "train": {
        "batch_size": 8,
        "learning_rate": 1e-3,
        "adam_beta1": 0.9,
        "adam_beta2": 0.999,
        "adam_eps": 1e-8,
        "steps_stage1": 3000,
        "steps_stage2": 3000,
        "val_interval": 50,
        "checkpoint_interval": 2000,
        "dtype": "float32",
        "stage1_holdout_per_speaker": 3,
        "train_duration_predictor": False,
    },
    "eval": {
        "mcd_texts": 5,
        "dist_texts": 8,
        "cepstral_order": 13,
    },
}


def _check_and_merge(base: dict, updates: dict, path: str = "") -> None:
    for key, value in updates.items():
        where = f"{path}{key}"
        if key not in base:
            raise ConfigError(f"unknown config key '{where}'")
        current = base[key]
        if isinstance(current, dict):
            if not isinstance(value, dict):
                raise ConfigError(f"config key '{where}' expects a section")
            _check_and_merge(current, value, where + ".")
            continue
        if isinstance(current, bool) != isinstance(value, bool):
            raise ConfigError(f"config key '{where}' expects {type(current).__name__}")
        if isinstance(current, bool):
            base[key] = bool(value)
        elif isinstance(current, float) and isinstance(value, (int, float)):
            base[key] = float(value)
        elif isinstance(current, int) and isinstance(value, int):
            base[key] = value
        elif isinstance(current, str) and isinstance(value, str):
            base[key] = value
        else:
            raise ConfigError(
                f"config key '{where}' expects {type(current).__name__}, "
                f"got {type(value).__name__}"
            )


def _nest(dotted: str, value) -> dict:
    out: dict = {}
    node = out
    parts = dotted.split(".")
    for part in parts[:-1]:
        node = node.setdefault(part, {})
    node[parts[-1]] = value
    return out


def resolve_config(config_file: str | None, overrides: dict[str, object]) -> dict:
    """Merge defaults <- UTTS_SEED <- config file <- flag overrides."""
    resolved = copy.deepcopy(DEFAULTS)
    env_seed = os.environ.get("UTTS_SEED")
    if env_seed is not None:
        try:
            resolved["seed"] = int(env_seed)
        except ValueError as exc:
            raise ConfigError(f"UTTS_SEED must be an integer, got {env_seed!r}") from exc
    if config_file is not None:
        try:
            loaded = json.loads(Path(config_file).read_text())
        except FileNotFoundError as exc:
            raise ConfigError(f"config file not found: {config_file}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"malformed config file {config_file}: {exc}") from exc
        if not isinstance(loaded, dict):
            raise ConfigError("config file must contain a JSON object")
        _check_and_merge(resolved, loaded)
    for dotted, value in overrides.items():
        _check_and_merge(resolved, _nest(dotted, value))
    return resolved


def write_run_config(out_dir, config: dict) -> None:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    payload = {"tool": "melclone", "version": __version__, "config": config}
    (out_dir / "run_config.json").write_text(json.dumps(payload, indent=2, sort_keys=True))


def _corpus_spec(config: dict) -> CorpusSpec:
    return CorpusSpec(seed=config["seed"], **config["corpus"])


def _model_config(config: dict, corpus: Corpus) -> md.ModelConfig:
    return md.ModelConfig(
        n_phonemes=corpus.inventory.n_symbols,
        n_speakers=len(corpus.speakers),
        n_mels=corpus.audio.n_mels,
        **config["model"],
    )


def _train_config(config: dict, stage: int, steps: int | None,
                  single_level: bool = False) -> tr.TrainConfig:
    section = config["train"]
    return tr.TrainConfig(
        stage=stage,
        steps=steps if steps is not None else section[f"steps_stage{stage}"],
        batch_size=section["batch_size"],
        learning_rate=section["learning_rate"],
        adam_beta1=section["adam_beta1"],
        adam_beta2=section["adam_beta2"],
        adam_eps=section["adam_eps"],
        seed=config["seed"],
        checkpoint_interval=section["checkpoint_interval"],
        val_interval=section["val_interval"],
        dtype=section["dtype"],
        single_level_stats=single_level,
        train_duration_predictor=section["train_duration_predictor"],
        stage1_holdout_per_speaker=section["stage1_holdout_per_speaker"],
    )


def _load_corpus(path) -> Corpus:
    manifest = Path(path) / "manifest.jsonl"
    if not manifest.exists():
        raise StateError(f"no corpus manifest at {manifest}")
    return Corpus(manifest)


def _load_stage2_model(ckpt_path) -> tuple[md.Model, tr.Checkpoint]:
    path = Path(ckpt_path)
    if not path.exists():
        raise StateError(f"checkpoint not found: {path}")
    ckpt = tr.load_checkpoint(path)
    if ckpt.stage != 2:
        raise StateError(
            f"{path} is a stage-{ckpt.stage} checkpoint; synthesis and evaluation "
            "need a trained stage-2 checkpoint"
        )
    return tr.build_model(ckpt), ckpt


# -- subcommand bodies ------------------------------------------------------------

def _cmd_gen_corpus(args, config) -> int:
    out = Path(args.out)
    manifest = generate_corpus(_corpus_spec(config), out)
    write_run_config(out, config)
    corpus = Corpus(manifest)
    print(f"wrote {len(corpus)} utterances to {manifest}")
    print(f"seed retries: {corpus.header['seed_retries']}, "
          f"separability gap: {corpus.header['separability_gap_db']:.2f} dB")
    return 0


def _cmd_pretrain(args, config) -> int:
    corpus = _load_corpus(args.corpus)
    cfg = _train_config(config, 1, args.steps)
    resume = tr.load_checkpoint(args.resume) if args.resume else None
    write_run_config(args.out, config)
    result = tr.train_stage1(corpus, cfg, args.out,
                             model_config=_model_config(config, corpus),
                             resume_from=resume)
    last = result.val_reports[-1]
    print(f"stage 1 done in {result.runtime_s:.0f}s; final val l1 {last.l1_mel:.4f}, "
          f"duration mse {last.mse_duration:.4f}")
    print(f"final checkpoint: {result.final_ckpt}")
    return 0


def _cmd_train(args, config) -> int:
    corpus = _load_corpus(args.corpus)
    stage1 = tr.load_checkpoint(getattr(args, "from"))
    cfg = _train_config(config, 2, args.steps, single_level=args.single_level_stats)
    resume = tr.load_checkpoint(args.resume) if args.resume else None
    write_run_config(args.out, config)
    result = tr.train_stage2(corpus, stage1, cfg, args.out,
                             model_config=_model_config(config, corpus),
                             resume_from=resume)
    last = result.val_reports[-1]
    print(f"stage 2 done in {result.runtime_s:.0f}s; final val l1 {last.l1_mel:.4f}, "
          f"content mse {last.l2_content:.4f}")
    print(f"final checkpoint: {result.final_ckpt}")
    return 0


def _cmd_synth(args, config) -> int:
    corpus = _load_corpus(args.corpus)
    model, _ = _load_stage2_model(args.ckpt)
    ref = corpus.load(args.ref)
    phone_ids = corpus.inventory.ids_from_text(args.text)
    mel, durations = md.synthesize(model, phone_ids, ref.mel, ref.durations)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    dsp.save_mel(out, mel)
    if args.csv:
        dsp.frames_to_csv(args.csv, mel)
    if args.png:
        _save_mel_png(args.png, mel)
    print(f"synthesized {mel.frames} frames "
          f"({' '.join(str(d) for d in durations)} per phoneme) -> {out}")
    return 0


def _cmd_eval_mcd(args, config) -> int:
    corpus = _load_corpus(args.corpus)
    model, _ = _load_stage2_model(args.ckpt)
    report = ev.eval_mcd_transfer(model, corpus, n_texts=args.texts,
                                  cepstral_order=config["eval"]["cepstral_order"],
                                  seed=config["seed"])
    write_run_config(args.out, config)
    path = ev.write_mcd_report(report, args.out)
    print(f"{len(report.trials)} trials: matched {report.matched_mean:.3f} dB, "
          f"mismatched {report.mismatched_mean:.3f} dB, win rate {report.win_rate:.2%}")
    print(f"trials: {path}")
    return 0


def _cmd_eval_dist(args, config) -> int:
    corpus = _load_corpus(args.corpus)
    model, _ = _load_stage2_model(args.ckpt)
    report = ev.eval_distributions(model, corpus, n_texts=args.texts,
                                   seed=config["seed"])
    write_run_config(args.out, config)
    path = ev.write_distribution_report(report, args.out)
    for style_id, dist in report.styles.items():
        print(f"{style_id:9s} median duration {dist.median_duration:5.1f} "
              f"(truth {dist.ref_median_duration:5.1f})  "
              f"median energy {dist.median_energy:7.3f} "
              f"(truth {dist.ref_median_energy:7.3f})")
    print(f"samples: {path}")
    return 0


def _cmd_inspect_embed(args, config) -> int:
    corpus = _load_corpus(args.corpus)
    model, _ = _load_stage2_model(args.ckpt)
    levels = ev.embed_levels(model, corpus, split=args.split)
    write_run_config(args.out, config)
    path = ev.write_embedding_report(levels, args.out)
    for emb in levels:
        print(f"level {emb.level}: separability {emb.separability:8.3f}, "
              f"explained variance {emb.pca.explained_variance.round(3).tolist()}")
    if args.png:
        _save_embedding_png(Path(args.out) / "embedding_levels.png", levels)
    print(f"points: {path}")
    return 0


def _cmd_ablate(args, config) -> int:
    corpus = _load_corpus(args.corpus)
    stage1 = tr.load_checkpoint(getattr(args, "from"))
    out = Path(args.out)
    write_run_config(out, config)
    model_config = _model_config(config, corpus)
    runs = {}
    for name, single in (("full", False), ("single_level", True)):
        cfg = _train_config(config, 2, args.steps, single_level=single)
        result = tr.train_stage2(corpus, stage1, cfg, out / name,
                                 model_config=model_config)
        runs[name] = result
        print(f"{name}: final val l1 {result.val_reports[-1].l1_mel:.4f} "
              f"({result.runtime_s:.0f}s)")
    cmp = ev.eval_reconstruction_curves(runs["full"].val_csv,
                                        runs["single_level"].val_csv)
    ev.write_curve_comparison(cmp, out)
    if args.png:
        _save_curves_png(out / "reconstruction_curves.png", cmp)
    print(f"final-window val l1: full {cmp.final_full:.4f}, "
          f"ablation {cmp.final_ablation:.4f}, ratio {cmp.ratio:.3f}")
    return 0


def _cmd_grad_check(args, config) -> int:
    suite = run_gradient_suite(hidden=args.hidden, levels=args.levels,
                               seed=config["seed"])
    worst = max(suite.values())
    for name, err in suite.items():
        print(f"{name:20s} {err:.3e}")
    print(f"max relative error {worst:.3e} (threshold 1e-4)")
    if worst >= 1e-4:
        print("gradient check FAILED", file=sys.stderr)
        return 2
    return 0


# -- optional PNG rendering ----------------------------------------------------------

def _matplotlib():
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    return plt


def _save_mel_png(path, mel) -> None:
    plt = _matplotlib()
    fig, ax = plt.subplots(figsize=(8, 3))
    im = ax.imshow(mel.data.T, origin="lower", aspect="auto", cmap="magma")
    ax.set_xlabel("frame")
    ax.set_ylabel("mel bin")
    fig.colorbar(im, ax=ax, label="log magnitude")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def _save_curves_png(path, cmp) -> None:
    plt = _matplotlib()
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(cmp.steps, cmp.full_l1, label="full multi-level stats")
    ax.plot(cmp.steps, cmp.ablation_l1, label="deepest level only")
    ax.set_xlabel("step")
    ax.set_ylabel("validation L1")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def _save_embedding_png(path, levels) -> None:
    plt = _matplotlib()
    fig, axes = plt.subplots(1, len(levels), figsize=(4 * len(levels), 4))
    for ax, emb in zip(np.atleast_1d(axes), levels):
        speakers = sorted(set(emb.speaker_ids))
        for spk in speakers:
            pts = emb.pca.projections[[s == spk for s in emb.speaker_ids]]
            ax.scatter(pts[:, 0], pts[:, 1], s=8, label=spk)
        ax.set_title(f"level {emb.level} (sep {emb.separability:.2f})")
    np.atleast_1d(axes)[0].legend(fontsize=6)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


# -- parser ----------------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _parse_set(values: list[str]) -> dict[str, object]:
    out: dict[str, object] = {}
    for item in values or []:
        if "=" not in item:
            raise UsageError(f"--set expects KEY=VALUE, got {item!r}")
        key, raw = item.split("=", 1)
        try:
            out[key] = json.loads(raw)
        except json.JSONDecodeError:
            out[key] = raw
    return out


def build_parser() -> _Parser:
    parser = _Parser(prog="melclone",
                     description="One-shot mel-domain voice cloning toolkit")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")

    def common(p):
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--seed", type=int, help="base seed (overrides file/env)")
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="override a config key by dotted path")

    p = sub.add_parser("gen-corpus", help="render the synthetic corpus")
    common(p)
    p.add_argument("--out", required=True, help="corpus output directory")

    p = sub.add_parser("pretrain", help="stage 1: content encoder pre-training")
    common(p)
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--steps", type=int)
    p.add_argument("--resume", help="stage-1 checkpoint to resume from")

    p = sub.add_parser("train", help="stage 2: style encoder + mel decoder")
    common(p)
    p.add_argument("--corpus", required=True)
    p.add_argument("--from", required=True, dest="from",
                   help="stage-1 checkpoint to start from")
    p.add_argument("--out", required=True)
    p.add_argument("--steps", type=int)
    p.add_argument("--single-level-stats", action="store_true",
                   help="feed only the deepest statistics pair to the decoder")
    p.add_argument("--resume", help="stage-2 checkpoint to resume from")

    p = sub.add_parser("synth", help="one-shot synthesis from a reference utterance")
    common(p)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--text", required=True, help="space-separated phoneme symbols")
    p.add_argument("--ref", required=True, help="reference utterance id")
    p.add_argument("--out", required=True, help="output mel container path")
    p.add_argument("--csv", help="also dump the mel as CSV")
    p.add_argument("--png", help="also render the mel as PNG")

    p = sub.add_parser("eval-mcd", help="matched vs mismatched speaker MCD")
    common(p)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--texts", type=int, default=5, help="eval texts per (speaker, style)")

    p = sub.add_parser("eval-dist", help="per-style duration/energy/F0 distributions")
    common(p)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--texts", type=int, default=8)

    p = sub.add_parser("inspect-embed", help="per-level statistics PCA")
    common(p)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--split", default="clone", choices=["train", "val", "clone"])
    p.add_argument("--png", action="store_true")

    p = sub.add_parser("ablate", help="paired full vs single-level training comparison")
    common(p)
    p.add_argument("--corpus", required=True)
    p.add_argument("--from", required=True, dest="from")
    p.add_argument("--out", required=True)
    p.add_argument("--steps", type=int)
    p.add_argument("--png", action="store_true")

    p = sub.add_parser("grad-check", help="finite-difference gradient suite")
    common(p)
    p.add_argument("--hidden", type=int, default=16)
    p.add_argument("--levels", type=int, default=2)

    return parser


_HANDLERS = {
    "gen-corpus": _cmd_gen_corpus,
    "pretrain": _cmd_pretrain,
    "train": _cmd_train,
    "synth": _cmd_synth,
    "eval-mcd": _cmd_eval_mcd,
    "eval-dist": _cmd_eval_dist,
    "inspect-embed": _cmd_inspect_embed,
    "ablate": _cmd_ablate,
    "grad-check": _cmd_grad_check,
}


def dispatch(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            parser.print_help()
            return 1
        overrides = _parse_set(getattr(args, "set", None))
        if getattr(args, "seed", None) is not None:
            overrides["seed"] = args.seed
        config = resolve_config(getattr(args, "config", None), overrides)
        return _HANDLERS[args.command](args, config)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        parser.print_usage(sys.stderr)
        return 1
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 1
    except MelcloneError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(dispatch())


if __name__ == "__main__":
    main()
