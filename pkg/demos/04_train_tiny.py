"""Train both stages at toy scale (hidden 16, 2 levels, a few hundred steps)
and synthesize from a cloned reference.

Run:  python demos/04_train_tiny.py      (about two minutes on a laptop)
Artifacts go to demos/output/04_train_tiny/ and are reused by demo 05.
"""

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from melclone import corpus as cp
from melclone import model as md
from melclone import training as tr

OUT = Path(__file__).parent / "output" / "04_train_tiny"
OUT.mkdir(parents=True, exist_ok=True)

spec = cp.CorpusSpec(n_train_speakers=6, n_val_speakers=1, n_clone_speakers=2,
                     utterances_per_speaker=12, seed=21)
if not (OUT / "corpus" / "manifest.jsonl").exists():
    cp.generate_corpus(spec, OUT / "corpus")
corpus = cp.Corpus(OUT / "corpus" / "manifest.jsonl")
model_config = tr._default_model_config(corpus, hidden=16, unet_levels=2,
                                        content_blocks=2, kernel_unet=3)

cfg1 = tr.TrainConfig(stage=1, steps=400, seed=0, val_interval=20,
                      stage1_holdout_per_speaker=2)
res1 = tr.train_stage1(corpus, cfg1, OUT / "s1", model_config=model_config)
print(f"stage 1: {res1.runtime_s:.0f}s, val l1 "
      f"{res1.val_reports[0].l1_mel:.3f} -> {res1.val_reports[-1].l1_mel:.3f}")

stage1 = tr.load_checkpoint(res1.final_ckpt)
cfg2 = tr.TrainConfig(stage=2, steps=400, seed=0, val_interval=20)
res2 = tr.train_stage2(corpus, stage1, cfg2, OUT / "s2", model_config=model_config)
print(f"stage 2: {res2.runtime_s:.0f}s, val l1 "
      f"{res2.val_reports[0].l1_mel:.3f} -> {res2.val_reports[-1].l1_mel:.3f}")

fig, ax = plt.subplots(figsize=(7, 4))
for res, label in ((res1, "stage 1"), (res2, "stage 2")):
    ax.plot([r.step for r in res.val_reports], [r.l1_mel for r in res.val_reports],
            marker="o", ms=3, label=f"{label} val L1")
ax.set_xlabel("step")
ax.set_ylabel("validation L1")
ax.legend()
fig.tight_layout()
fig.savefig(OUT / "loss_curves.png", dpi=120)

# One-shot synthesis: new text, single clone-speaker reference utterance.
model = tr.build_model(tr.load_checkpoint(res2.final_ckpt))
ref = corpus.load(corpus.split_rows("clone")[3]["utt_id"])
text = corpus.inventory.ids_from_text("aa ss ee mm oo kk aa")
mel, durations = md.synthesize(model, text, ref.mel, ref.durations)
print(f"synthesized {mel.frames} frames; per-phoneme durations {durations.tolist()}")

fig, axes = plt.subplots(2, 1, figsize=(8, 5))
axes[0].imshow(ref.mel.data.T, origin="lower", aspect="auto", cmap="magma")
axes[0].set_title(f"reference ({ref.speaker_id}, {ref.style_id})")
axes[1].imshow(mel.data.T, origin="lower", aspect="auto", cmap="magma")
axes[1].set_title("synthesized (new text, cloned voice)")
fig.tight_layout()
fig.savefig(OUT / "synthesis.png", dpi=120)
print(f"artifacts in {OUT}")
