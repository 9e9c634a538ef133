"""Objective analyses: reconstruction curves, per-level embeddings, transfer.

Three families of reports, all deterministic given (checkpoint, corpus, seed):

- reconstruction-curve comparison between a full multi-level run and the
  single-deepest-level ablation;
- per-level PCA of concatenated (mean, std) style statistics with a
  between/within speaker separability ratio;
- voice transfer (matched vs mismatched speaker MCD) and style transfer
  (phoneme duration / energy / pitch distributions against generator truth).
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import dsp, model as md
from .corpus import Corpus, StyleProfile, sample_phone_string, seeded_rng, render_mel
from .errors import ConfigError, InputError, StateError
from .training import read_loss_csv


# -- PCA ------------------------------------------------------------------------

@dataclass
class Pca2d:
    projections: np.ndarray  # (N, 2)
    components: np.ndarray  # (2, D), orthonormal rows
    explained_variance: np.ndarray  # (2,) ratios, non-increasing
    degenerate: bool = False


def pca_2d(points: np.ndarray) -> Pca2d:
    """Project points onto the top-2 principal axes of their covariance.

    Component signs are fixed so each axis' largest-magnitude entry is
    positive.  Zero total variance yields a flagged degenerate result with
    all-zero projections.
    """
    points = np.asarray(points, dtype=np.float64)
    if points.ndim != 2 or points.shape[0] < 3:
        raise InputError(f"need an (N >= 3, D) point matrix, got {points.shape}")
    n, d = points.shape
    centered = points - points.mean(axis=0)
    cov = centered.T @ centered / n
    total = np.trace(cov)
    if total < 1e-18:
        return Pca2d(np.zeros((n, 2)), np.zeros((2, d)), np.zeros(2), degenerate=True)

    eigvals, eigvecs = np.linalg.eigh(cov)
    order = np.argsort(eigvals)[::-1][:2]
    comps = eigvecs[:, order].T
    for i in range(comps.shape[0]):
        if comps[i, np.argmax(np.abs(comps[i]))] < 0:
            comps[i] = -comps[i]
    explained = np.maximum(eigvals[order], 0.0) / total
    return Pca2d(centered @ comps.T, comps, explained)


def separability_ratio(vectors: np.ndarray, labels) -> float:
    """Between-group centroid variance over mean within-group variance."""
    vectors = np.asarray(vectors, dtype=np.float64)
    labels = np.asarray(labels)
    groups = [vectors[labels == lab] for lab in np.unique(labels)]
    if len(groups) < 2:
        raise InputError("separability needs at least two groups")
    centroids = np.stack([g.mean(axis=0) for g in groups])
    grand = centroids.mean(axis=0)
    between = float(np.mean(np.sum((centroids - grand) ** 2, axis=1)))
    within = float(np.mean([np.mean(np.sum((g - c) ** 2, axis=1))
                            for g, c in zip(groups, centroids)]))
    return between / max(within, 1e-18)


# -- per-level embeddings ---------------------------------------------------------

@dataclass
class LevelEmbedding:
    level: int  # 1-based, 1 = shallowest
    vectors: np.ndarray  # (N, 2 * hidden), mean then std
    speaker_ids: list[str]
    style_ids: list[str]
    pca: Pca2d
    separability: float


def embed_levels(mdl: md.Model, corpus: Corpus, split: str = "clone",
                 max_utterances: int | None = None) -> list[LevelEmbedding]:
    """Concatenated (mean, std) per style-encoder level, with PCA + separability."""
    rows = corpus.split_rows(split)
    if max_utterances is not None and len(rows) > max_utterances:
        stride = int(np.ceil(len(rows) / max_utterances))
        rows = rows[::stride]
    if len(rows) < 3:
        raise StateError(f"split {split!r} has too few utterances to embed")

    levels = mdl.config.unet_levels
    per_level = [[] for _ in range(levels)]
    speakers, styles = [], []
    for row in rows:
        utt = corpus.load(row["utt_id"])
        stats, _ = md.style_encode(mdl, mdl.cast(utt.mel.data.T)[None, :, :])
        for lv in range(levels):
            vec = np.concatenate([
                np.asarray(stats[lv].mean.data[0, :, 0], dtype=np.float64),
                np.asarray(stats[lv].std.data[0, :, 0], dtype=np.float64),
            ])
            per_level[lv].append(vec)
        speakers.append(row["speaker_id"])
        styles.append(row["style_id"])

    out = []
    for lv in range(levels):
        vectors = np.stack(per_level[lv])
        out.append(LevelEmbedding(
            level=lv + 1, vectors=vectors, speaker_ids=speakers, style_ids=styles,
            pca=pca_2d(vectors),
            separability=separability_ratio(vectors, speakers),
        ))
    return out


def write_embedding_report(levels: list[LevelEmbedding], out_dir) -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    points_path = out_dir / "embedding_points.csv"
    with open(points_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["level", "speaker_id", "style_id", "pc1", "pc2"])
        for emb in levels:
            for spk, sty, (p1, p2) in zip(emb.speaker_ids, emb.style_ids,
                                          emb.pca.projections):
                writer.writerow([emb.level, spk, sty, repr(p1), repr(p2)])
    summary = {
        "levels": [
            {
                "level": emb.level,
                "separability_ratio": emb.separability,
                "explained_variance": emb.pca.explained_variance.tolist(),
                "degenerate": emb.pca.degenerate,
                "n_points": len(emb.speaker_ids),
            }
            for emb in levels
        ]
    }
    (out_dir / "embedding_summary.json").write_text(json.dumps(summary, indent=2))
    return points_path


# -- MCD transfer ------------------------------------------------------------------

@dataclass
class McdTrial:
    speaker_id: str
    style_id: str
    text_index: int
    matched: float
    mismatched: float


@dataclass
class McdReport:
    trials: list[McdTrial]
    matched_mean: float
    mismatched_mean: float
    win_rate: float  # fraction of trials with matched < mismatched
    cepstral_order: int


def _eval_text(corpus: Corpus, seed: int, index: int) -> np.ndarray:
    rng = seeded_rng(seed, "eval-text", index)
    return sample_phone_string(rng, corpus.inventory, corpus.spec.min_phones,
                               corpus.spec.max_phones)


def _render_target(corpus: Corpus, phones: np.ndarray, speaker_id: str,
                   style: StyleProfile, seed: int, tag: str):
    """Generator-truth render of an eval text for a given speaker and style."""
    from .corpus import sample_durations

    rng = seeded_rng(seed, "eval-dur", tag)
    speaker = corpus.speakers[speaker_id]
    durations = sample_durations(phones, speaker, style, corpus.inventory, rng)
    render_seed = int(seeded_rng(seed, "eval-render", tag).integers(0, 2**31))
    return render_mel(phones, durations, speaker, style, corpus.inventory,
                      render_seed, corpus.audio)


def _reference_row(corpus: Corpus, speaker_id: str, style_id: str, pick: int) -> dict:
    rows = [r for r in corpus.split_rows("clone")
            if r["speaker_id"] == speaker_id and r["style_id"] == style_id]
    if not rows:
        raise ConfigError(f"no clone utterances for ({speaker_id}, {style_id})")
    return rows[pick % len(rows)]


def eval_mcd_transfer(mdl: md.Model, corpus: Corpus, n_texts: int = 5,
                      cepstral_order: int = 13, seed: int = 0) -> McdReport:
    """Matched vs mismatched speaker MCD over clone-speaker trials."""
    clone_speakers = corpus.speakers_in_split("clone")
    if len(clone_speakers) < 2:
        raise ConfigError("MCD transfer needs at least two clone speakers")
    styles = list(corpus.styles)

    trials = []
    for s_i, speaker_id in enumerate(clone_speakers):
        for style_id in styles:
            style = corpus.styles[style_id]
            for t_i in range(n_texts):
                tag = f"{speaker_id}/{style_id}/{t_i}"
                phones = _eval_text(corpus, seed, t_i)
                ref_row = _reference_row(
                    corpus, speaker_id, style_id,
                    int(seeded_rng(seed, "eval-ref", tag).integers(0, 10**6)))
                ref = corpus.load(ref_row["utt_id"])
                synth_mel, _ = md.synthesize(mdl, phones, ref.mel, ref.durations)

                matched_mel, _ = _render_target(corpus, phones, speaker_id, style,
                                                seed, tag)
                others = [s for s in clone_speakers if s != speaker_id]
                other = others[int(seeded_rng(seed, "eval-mismatch", tag)
                                   .integers(0, len(others)))]
                mism_mel, _ = _render_target(corpus, phones, other, style, seed,
                                             tag + "/mism")
                trials.append(McdTrial(
                    speaker_id, style_id, t_i,
                    dsp.mcd_time_averaged(synth_mel, matched_mel, cepstral_order),
                    dsp.mcd_time_averaged(synth_mel, mism_mel, cepstral_order),
                ))

    wins = sum(t.matched < t.mismatched for t in trials)
    return McdReport(
        trials,
        float(np.mean([t.matched for t in trials])),
        float(np.mean([t.mismatched for t in trials])),
        wins / len(trials),
        cepstral_order,
    )


def reconstruction_mcd(mdl: md.Model, corpus: Corpus, utt_id: str,
                       cepstral_order: int = 13) -> float:
    """MCD between a resynthesized utterance and itself as reference/target."""
    utt = corpus.load(utt_id)
    synth_mel, _ = md.synthesize(mdl, utt.phone_ids, utt.mel, utt.durations)
    return dsp.mcd_time_averaged(synth_mel, utt.mel, cepstral_order)


def write_mcd_report(report: McdReport, out_dir) -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / "mcd_trials.csv"
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["speaker_id", "style_id", "text_index", "matched_mcd",
                         "mismatched_mcd"])
        for t in report.trials:
            writer.writerow([t.speaker_id, t.style_id, t.text_index,
                             repr(t.matched), repr(t.mismatched)])
    summary = {
        "n_trials": len(report.trials),
        "matched_mean": report.matched_mean,
        "mismatched_mean": report.mismatched_mean,
        "win_rate": report.win_rate,
        "cepstral_order": report.cepstral_order,
    }
    (out_dir / "mcd_summary.json").write_text(json.dumps(summary, indent=2))
    return path


# -- style distributions ------------------------------------------------------------

@dataclass
class StyleDistribution:
    style_id: str
    durations: np.ndarray  # per-phoneme synthesized frame counts
    energies: np.ndarray  # per-phoneme synthesized energies
    f0_medians: np.ndarray  # per-utterance synthesized voiced-F0 medians
    median_duration: float
    median_energy: float
    median_f0: float
    ref_median_duration: float
    ref_median_energy: float
    ref_median_f0: float


@dataclass
class DistributionReport:
    styles: dict[str, StyleDistribution] = field(default_factory=dict)


MIN_DISTRIBUTION_SAMPLES = 30


def eval_distributions(mdl: md.Model, corpus: Corpus, n_texts: int = 8,
                       seed: int = 0) -> DistributionReport:
    """Synthesized vs ground-truth phoneme duration/energy/F0 per style."""
    clone_speakers = corpus.speakers_in_split("clone")
    report = DistributionReport()
    for style_id, style in corpus.styles.items():
        durations, energies, f0_medians = [], [], []
        for speaker_id in clone_speakers:
            for t_i in range(n_texts):
                tag = f"dist/{speaker_id}/{style_id}/{t_i}"
                phones = _eval_text(corpus, seed, 1000 + t_i)
                ref_row = _reference_row(
                    corpus, speaker_id, style_id,
                    int(seeded_rng(seed, "dist-ref", tag).integers(0, 10**6)))
                ref = corpus.load(ref_row["utt_id"])
                synth_mel, chosen = md.synthesize(mdl, phones, ref.mel, ref.durations)
                durations.extend(chosen.tolist())
                energies.extend(dsp.phoneme_energy(synth_mel, chosen).tolist())
                track = dsp.estimate_f0_mel(synth_mel)
                voiced = track.values[track.values > 0]
                if voiced.size:
                    f0_medians.append(float(np.median(voiced)))
        if len(durations) < MIN_DISTRIBUTION_SAMPLES:
            raise ConfigError(
                f"style {style_id!r} produced only {len(durations)} samples; "
                f"need >= {MIN_DISTRIBUTION_SAMPLES}"
            )

        gt_durations, gt_energies, gt_f0 = [], [], []
        for row in corpus.split_rows("clone"):
            if row["style_id"] != style_id:
                continue
            utt = corpus.load(row["utt_id"])
            gt_durations.extend(utt.durations.tolist())
            gt_energies.extend(dsp.phoneme_energy(utt.mel, utt.durations).tolist())
            voiced = utt.f0.values[utt.f0.values > 0]
            if voiced.size:
                gt_f0.append(float(np.median(voiced)))

        report.styles[style_id] = StyleDistribution(
            style_id=style_id,
            durations=np.asarray(durations, dtype=np.float64),
            energies=np.asarray(energies, dtype=np.float64),
            f0_medians=np.asarray(f0_medians, dtype=np.float64),
            median_duration=float(np.median(durations)),
            median_energy=float(np.median(energies)),
            median_f0=float(np.median(f0_medians)),
            ref_median_duration=float(np.median(gt_durations)),
            ref_median_energy=float(np.median(gt_energies)),
            ref_median_f0=float(np.median(gt_f0)),
        )
    return report


def write_distribution_report(report: DistributionReport, out_dir) -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / "distributions.csv"
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["style_id", "quantity", "sample_index", "value"])
        for style_id, dist in report.styles.items():
            for name, values in (("duration", dist.durations),
                                 ("energy", dist.energies),
                                 ("f0_median", dist.f0_medians)):
                for i, v in enumerate(values):
                    writer.writerow([style_id, name, i, repr(float(v))])
    summary = {
        style_id: {
            "n_duration_samples": int(dist.durations.size),
            "n_energy_samples": int(dist.energies.size),
            "n_f0_samples": int(dist.f0_medians.size),
            "median_duration": dist.median_duration,
            "median_energy": dist.median_energy,
            "median_f0": dist.median_f0,
            "ref_median_duration": dist.ref_median_duration,
            "ref_median_energy": dist.ref_median_energy,
            "ref_median_f0": dist.ref_median_f0,
        }
        for style_id, dist in report.styles.items()
    }
    (out_dir / "distributions_summary.json").write_text(json.dumps(summary, indent=2))
    return path


# -- reconstruction-loss curves -------------------------------------------------------

@dataclass
class CurveComparison:
    steps: np.ndarray
    full_l1: np.ndarray
    ablation_l1: np.ndarray
    final_full: float
    final_ablation: float
    ratio: float  # final_full / final_ablation
    final_window: int


def eval_reconstruction_curves(full_csv, ablation_csv,
                               final_window: int = 5) -> CurveComparison:
    """Align two validation-loss CSVs and compare their final-window means."""
    full = read_loss_csv(full_csv)
    ablation = read_loss_csv(ablation_csv)
    steps_full = np.array([r.step for r in full])
    steps_abl = np.array([r.step for r in ablation])
    if steps_full.shape != steps_abl.shape or (steps_full != steps_abl).any():
        raise InputError("validation step grids of the two runs do not match")
    if len(full) < final_window:
        raise InputError(f"curves shorter than the final window ({final_window})")
    l1_full = np.array([r.l1_mel for r in full])
    l1_abl = np.array([r.l1_mel for r in ablation])
    final_full = float(l1_full[-final_window:].mean())
    final_abl = float(l1_abl[-final_window:].mean())
    return CurveComparison(steps_full, l1_full, l1_abl, final_full, final_abl,
                           final_full / final_abl, final_window)


def median_filter_curve(values: np.ndarray, window: int) -> np.ndarray:
    """Centered running median with edge shrinkage (odd effective windows)."""
    values = np.asarray(values, dtype=np.float64)
    half = max(window // 2, 1)
    out = np.empty_like(values)
    for i in range(values.size):
        lo, hi = max(0, i - half), min(values.size, i + half + 1)
        out[i] = np.median(values[lo:hi])
    return out


def write_curve_comparison(cmp: CurveComparison, out_dir) -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / "reconstruction_curves.csv"
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "full_l1", "ablation_l1"])
        for s, a, b in zip(cmp.steps, cmp.full_l1, cmp.ablation_l1):
            writer.writerow([int(s), repr(float(a)), repr(float(b))])
    summary = {
        "final_window": cmp.final_window,
        "final_full_l1": cmp.final_full,
        "final_ablation_l1": cmp.final_ablation,
        "ratio_full_over_ablation": cmp.ratio,
    }
    (out_dir / "reconstruction_summary.json").write_text(json.dumps(summary, indent=2))
    return path
