"""Transfer analyses on the toy model from demo 04: matched vs mismatched
speaker MCD, per-style duration/energy medians, and per-level PCA of the
style statistics.

Run:  python demos/04_train_tiny.py  (once), then
      python demos/05_transfer_analysis.py
"""

import sys
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from melclone import corpus as cp
from melclone import evaluation as ev
from melclone import training as tr

BASE = Path(__file__).parent / "output" / "04_train_tiny"
OUT = Path(__file__).parent / "output" / "05_transfer_analysis"
OUT.mkdir(parents=True, exist_ok=True)

ckpt_path = BASE / "s2" / "final_stage2.ckpt"
if not ckpt_path.exists():
    sys.exit("run demos/04_train_tiny.py first (it trains the toy model)")

corpus = cp.Corpus(BASE / "corpus" / "manifest.jsonl")
model = tr.build_model(tr.load_checkpoint(ckpt_path))

# 1. Voice transfer: does a clone synthesized from speaker s sit closer (in
#    time-averaged cepstra) to s's own render than to another speaker's?
report = ev.eval_mcd_transfer(model, corpus, n_texts=5, seed=0)
ev.write_mcd_report(report, OUT)
print(f"MCD over {len(report.trials)} trials: matched {report.matched_mean:.2f} dB, "
      f"mismatched {report.mismatched_mean:.2f} dB, "
      f"matched wins {report.win_rate:.0%}")

fig, ax = plt.subplots(figsize=(5, 4))
ax.scatter([t.matched for t in report.trials],
           [t.mismatched for t in report.trials], s=10)
lim = max(max(t.matched for t in report.trials),
          max(t.mismatched for t in report.trials)) * 1.05
ax.plot([0, lim], [0, lim], "k--", lw=1)
ax.set_xlabel("matched-speaker MCD (dB)")
ax.set_ylabel("mismatched-speaker MCD (dB)")
ax.set_title("points above the diagonal = correct voice")
fig.tight_layout()
fig.savefig(OUT / "mcd_scatter.png", dpi=120)

# 2. Style transfer: medians of synthesized phoneme duration and energy per
#    style, against the generator's ground truth.
dist = ev.eval_distributions(model, corpus, n_texts=6, seed=0)
ev.write_distribution_report(dist, OUT)
print("\nstyle medians (synthesized vs generator truth):")
for style_id, d in dist.styles.items():
    print(f"  {style_id:9s} duration {d.median_duration:5.1f} vs "
          f"{d.ref_median_duration:5.1f}   energy {d.median_energy:7.3f} vs "
          f"{d.ref_median_energy:7.3f}")

styles = list(dist.styles)
fig, axes = plt.subplots(1, 2, figsize=(9, 3.5))
for ax, attr, label in ((axes[0], "median_duration", "median phoneme duration"),
                        (axes[1], "median_energy", "median phoneme energy")):
    synth = [getattr(dist.styles[s], attr) for s in styles]
    truth = [getattr(dist.styles[s], "ref_" + attr) for s in styles]
    xs = np.arange(len(styles))
    ax.bar(xs - 0.2, synth, width=0.4, label="synthesized")
    ax.bar(xs + 0.2, truth, width=0.4, label="generator truth")
    ax.set_xticks(xs, styles, rotation=30)
    ax.set_title(label)
    ax.legend(fontsize=7)
fig.tight_layout()
fig.savefig(OUT / "style_medians.png", dpi=120)

# 3. Per-level statistics embeddings: shallow levels cluster by speaker,
#    the deepest level mixes everyone together.
levels = ev.embed_levels(model, corpus, split="clone")
ev.write_embedding_report(levels, OUT)
print("\nper-level speaker separability (between/within variance):")
for emb in levels:
    print(f"  level {emb.level}: {emb.separability:.3f}")

fig, axes = plt.subplots(1, len(levels), figsize=(4 * len(levels), 3.5))
for ax, emb in zip(np.atleast_1d(axes), levels):
    for spk in sorted(set(emb.speaker_ids)):
        pts = emb.pca.projections[[s == spk for s in emb.speaker_ids]]
        ax.scatter(pts[:, 0], pts[:, 1], s=10, label=spk)
    ax.set_title(f"level {emb.level} (sep {emb.separability:.2f})")
np.atleast_1d(axes)[0].legend(fontsize=7)
fig.tight_layout()
fig.savefig(OUT / "level_pca.png", dpi=120)
print(f"\nartifacts in {OUT}")
