"""Walk through the signal-processing layer: filterbank, log-mel analysis,
cepstra, and the time-averaged MCD score.

Run:  python demos/01_mel_pipeline.py
Writes plots and CSVs under demos/output/01_mel_pipeline/.
"""

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from melclone import dsp

OUT = Path(__file__).parent / "output" / "01_mel_pipeline"
OUT.mkdir(parents=True, exist_ok=True)

config = dsp.AudioConfig()
print(f"analysis config: {config}")

# The filterbank: 80 triangular filters on the HTK mel scale, peak 1.
fb = dsp.build_mel_filterbank(config.sample_rate, config.n_fft, config.n_mels,
                              config.f_lo, config.f_hi)
print(f"filterbank shape: {fb.shape}, row peaks all 1: {np.allclose(fb.max(axis=1), 1)}")

fig, ax = plt.subplots(figsize=(8, 3))
freqs = np.arange(fb.shape[1]) * config.sample_rate / config.n_fft
for row in fb[::8]:
    ax.plot(freqs, row, lw=0.8)
ax.set_xlabel("Hz")
ax.set_title("every 8th mel filter")
fig.tight_layout()
fig.savefig(OUT / "filterbank.png", dpi=120)

# A one-second chirp from 200 Hz to 2 kHz, analyzed to log-mels.
t = np.arange(config.sample_rate) / config.sample_rate
chirp = np.sin(2 * np.pi * (200 * t + 0.5 * 1800 * t**2))
mel = dsp.log_mel_spectrogram(chirp, config)
print(f"chirp -> {mel.frames} frames x {mel.n_mels} bins "
      f"(expected {1 + chirp.size // config.hop} frames)")

fig, ax = plt.subplots(figsize=(8, 3))
ax.imshow(mel.data.T, origin="lower", aspect="auto", cmap="magma")
ax.set_xlabel("frame")
ax.set_ylabel("mel bin")
ax.set_title("log-mel of a 200 Hz - 2 kHz chirp")
fig.tight_layout()
fig.savefig(OUT / "chirp_mel.png", dpi=120)

# Cepstra compress each frame's spectral envelope; MCD compares two
# spectrograms through their time-averaged cepstra (coefficient 0 dropped).
cep = dsp.mel_cepstrum(mel.data.mean(axis=0), 13)
print(f"first cepstral coefficients: {np.round(cep.coeffs[:5], 3)}")

tone = dsp.log_mel_spectrogram(np.sin(2 * np.pi * 440 * t), config)
print(f"MCD(chirp, chirp) = {dsp.mcd_time_averaged(mel, mel):.4f} dB (exact 0)")
print(f"MCD(chirp, 440 Hz tone) = {dsp.mcd_time_averaged(mel, tone):.2f} dB")

dsp.frames_to_csv(OUT / "chirp_mel.csv", mel)
dsp.save_mel(OUT / "chirp_mel.utt", mel)
print(f"artifacts in {OUT}")
