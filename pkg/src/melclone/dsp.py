"""Deterministic mel-domain signal processing.

Everything downstream of audio lives in log-mel land: analysis
(:func:`log_mel_spectrogram`), cepstra and the time-averaged MCD score,
per-phoneme energies, duration statistics, and a matched-template pitch
estimator that shares its harmonic stack with the synthetic corpus renderer.
All functions are pure; none hold state.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, asdict

import numpy as np
import scipy.fft

from . import container
from .errors import AlignmentError, ConfigError, InputError

LOG_FLOOR = 1e-10


@dataclass(frozen=True)
class AudioConfig:
    """Framing and filterbank parameters (defaults: 16 kHz, 80-bin log-mel)."""

    sample_rate: int = 16000
    n_fft: int = 800
    hop: int = 200
    win: int = 800
    n_mels: int = 80
    f_lo: float = 0.0
    f_hi: float = 8000.0


@dataclass
class MelSpectrogram:
    """A frames x n_mels matrix of natural-log mel magnitudes."""

    data: np.ndarray
    sample_rate: int = 16000
    n_fft: int = 800
    hop: int = 200
    win: int = 800
    n_mels: int = 80

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.ndim != 2 or self.data.shape[0] < 1:
            raise InputError(f"mel data must be (frames, n_mels), got {self.data.shape}")
        if self.data.shape[1] != self.n_mels:
            raise InputError(
                f"mel data has {self.data.shape[1]} bins, config says {self.n_mels}"
            )
        if not np.isfinite(self.data).all():
            raise InputError("mel data contains non-finite entries")

    @property
    def frames(self) -> int:
        return self.data.shape[0]

    @classmethod
    def from_config(cls, data: np.ndarray, config: AudioConfig) -> "MelSpectrogram":
        return cls(data, config.sample_rate, config.n_fft, config.hop, config.win, config.n_mels)


@dataclass
class CepstralVector:
    """First K orthonormal DCT-II coefficients of a log-mel profile."""

    coeffs: np.ndarray

    def __post_init__(self):
        self.coeffs = np.asarray(self.coeffs, dtype=np.float64)


@dataclass
class F0Track:
    """Per-frame pitch in Hz; 0 marks unvoiced frames."""

    values: np.ndarray
    search_lo: float
    search_hi: float

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        voiced = self.values[self.values > 0]
        if voiced.size and ((voiced < self.search_lo).any() or (voiced > self.search_hi).any()):
            raise InputError("voiced F0 values fall outside the search range")


@dataclass(frozen=True)
class DurationStats:
    """Mean and population standard deviation of per-phoneme frame counts."""

    mean: float
    std: float


@dataclass(frozen=True)
class HarmonicModel:
    """Harmonic stack used by both the corpus renderer and the F0 estimator.

    Harmonic h of a fundamental f0 has linear amplitude ``h ** -rolloff``,
    for all h with ``h * f0 <= f_hi`` up to ``max_harmonics``.
    """

    rolloff: float = 1.0
    max_harmonics: int = 60


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def build_mel_filterbank(
    sample_rate: int, n_fft: int, n_mels: int, f_lo: float, f_hi: float
) -> np.ndarray:
    """Triangular HTK-scale filterbank, each row peak-normalized to 1.

    Returns an ``(n_mels, n_fft // 2 + 1)`` weight matrix.
    """
    if not (0 <= f_lo < f_hi <= sample_rate / 2):
        raise ConfigError(
            f"need 0 <= f_lo < f_hi <= Nyquist, got f_lo={f_lo}, f_hi={f_hi}, "
            f"sample_rate={sample_rate}"
        )
    if n_mels < 2:
        raise ConfigError(f"n_mels must be >= 2, got {n_mels}")

    edges_hz = mel_to_hz(np.linspace(hz_to_mel(f_lo), hz_to_mel(f_hi), n_mels + 2))
    fft_freqs = np.arange(n_fft // 2 + 1) * (sample_rate / n_fft)

    fb = np.zeros((n_mels, n_fft // 2 + 1))
    for m in range(n_mels):
        left, center, right = edges_hz[m], edges_hz[m + 1], edges_hz[m + 2]
        up = (fft_freqs - left) / max(center - left, 1e-12)
        down = (right - fft_freqs) / max(right - center, 1e-12)
        fb[m] = np.maximum(0.0, np.minimum(up, down))
        peak = fb[m].max()
        if peak > 0:
            fb[m] /= peak
    return fb


_FB_CACHE: dict[AudioConfig, np.ndarray] = {}


def mel_filterbank_for(config: AudioConfig) -> np.ndarray:
    fb = _FB_CACHE.get(config)
    if fb is None:
        fb = build_mel_filterbank(
            config.sample_rate, config.n_fft, config.n_mels, config.f_lo, config.f_hi
        )
        _FB_CACHE[config] = fb
    return fb


def log_mel_spectrogram(signal: np.ndarray, config: AudioConfig = AudioConfig()) -> MelSpectrogram:
    """Center-padded Hann STFT magnitudes projected onto the mel filterbank.

    The signal is reflect-padded by ``n_fft // 2`` on each side, so a signal
    of N samples yields ``1 + N // hop`` frames.  Magnitudes are floored at
    ``LOG_FLOOR`` before the natural log.
    """
    signal = np.asarray(signal, dtype=np.float64)
    if signal.ndim != 1 or signal.size < 1:
        raise InputError("signal must be a non-empty 1-D sample array")
    if config.win > config.n_fft:
        raise ConfigError("window longer than FFT size")

    pad = config.n_fft // 2
    padded = np.pad(signal, pad, mode="reflect") if signal.size > 1 else np.full(
        2 * pad + 1, signal[0]
    )
    n_frames = 1 + signal.size // config.hop
    starts = np.arange(n_frames) * config.hop
    frames = np.stack([padded[s : s + config.n_fft] for s in starts])

    window = np.zeros(config.n_fft)
    off = (config.n_fft - config.win) // 2
    window[off : off + config.win] = _periodic_hann(config.win)

    mags = np.abs(np.fft.rfft(frames * window, axis=1))
    mel = mags @ mel_filterbank_for(config).T
    return MelSpectrogram.from_config(np.log(np.maximum(mel, LOG_FLOOR)), config)


def _periodic_hann(n: int) -> np.ndarray:
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)


def mel_cepstrum(profile: np.ndarray, k: int) -> CepstralVector:
    """First ``k`` orthonormal DCT-II coefficients of one log-mel profile."""
    profile = np.asarray(profile, dtype=np.float64)
    if profile.ndim != 1:
        raise InputError("profile must be a 1-D log-mel array")
    if k > profile.size:
        raise InputError(f"k={k} exceeds n_mels={profile.size}")
    return CepstralVector(scipy.fft.dct(profile, type=2, norm="ortho")[:k])


def _mean_cepstrum(mel: MelSpectrogram, k: int) -> np.ndarray:
    # Per-frame cepstra averaged over time (== DCT of the mean profile).
    coeffs = scipy.fft.dct(mel.data, type=2, norm="ortho", axis=1)[:, :k]
    return coeffs.mean(axis=0)


MCD_CONSTANT = 10.0 / np.log(10.0)


def mcd_time_averaged(a: MelSpectrogram, b: MelSpectrogram, k: int = 13) -> float:
    """Mel-cepstral distortion (dB) between time-averaged cepstra.

    Coefficient 0 (overall level) is excluded; the score is
    ``(10/ln 10) * sqrt(2 * sum_{i=1..k-1} (ca_i - cb_i)^2)``.
    """
    if a.n_mels != b.n_mels:
        raise InputError(f"n_mels mismatch: {a.n_mels} vs {b.n_mels}")
    if k < 2:
        raise InputError("k must be >= 2 so at least one coefficient is compared")
    diff = _mean_cepstrum(a, k)[1:] - _mean_cepstrum(b, k)[1:]
    return float(MCD_CONSTANT * np.sqrt(2.0 * np.sum(diff**2)))


def frame_energy(mel: MelSpectrogram) -> np.ndarray:
    """Per-frame energy: log of the mean linear mel magnitude over bins."""
    return np.log(np.mean(np.exp(mel.data), axis=1))


def phoneme_energy(mel: MelSpectrogram, durations: np.ndarray) -> np.ndarray:
    """Mean frame energy per phoneme segment."""
    durations = np.asarray(durations, dtype=np.int64)
    if durations.sum() != mel.frames:
        raise AlignmentError(
            f"durations sum to {durations.sum()} but spectrogram has {mel.frames} frames"
        )
    energies = frame_energy(mel)
    bounds = np.concatenate([[0], np.cumsum(durations)[:-1]])
    return np.add.reduceat(energies, bounds) / durations


def harmonic_stack_frames(
    f0_values: np.ndarray,
    config: AudioConfig = AudioConfig(),
    model: HarmonicModel = HarmonicModel(),
) -> np.ndarray:
    """Linear-magnitude mel frames of the harmonic stack, one row per f0.

    Harmonic h carries amplitude ``h ** -rolloff`` at the FFT bin nearest
    ``h * f0``; harmonics above ``f_hi`` are dropped.  Frames with f0 <= 0
    come out all zero.  This single code path serves both the corpus
    renderer and the F0 estimator's matched templates.
    """
    f0_values = np.asarray(f0_values, dtype=np.float64)
    fb = mel_filterbank_for(config)
    bin_hz = config.sample_rate / config.n_fft
    h = np.arange(1, model.max_harmonics + 1, dtype=np.float64)
    freqs = f0_values[:, None] * h[None, :]
    amps = (h ** -model.rolloff)[None, :] * (freqs <= config.f_hi) * (f0_values > 0)[:, None]
    bins = np.clip(np.rint(freqs / bin_hz).astype(np.int64), 0, fb.shape[1] - 1)
    return np.einsum("mth,th->tm", fb[:, bins], amps)


def harmonic_mel_template(
    f0: float,
    config: AudioConfig = AudioConfig(),
    model: HarmonicModel = HarmonicModel(),
) -> np.ndarray:
    """Mel projection of the harmonic stack at a single ``f0``."""
    return harmonic_stack_frames(np.array([f0]), config, model)[0]


_TEMPLATE_CACHE: dict[tuple, tuple[np.ndarray, np.ndarray]] = {}


def _f0_templates(grid: tuple, config: AudioConfig, model: HarmonicModel):
    key = (grid, config, model)
    cached = _TEMPLATE_CACHE.get(key)
    if cached is None:
        logs = np.stack(
            [
                np.log(np.maximum(harmonic_mel_template(f, config, model), LOG_FLOOR))
                for f in grid
            ]
        )
        centered = logs - logs.mean(axis=1, keepdims=True)
        norms = np.linalg.norm(centered, axis=1)
        cached = (centered / norms[:, None], np.asarray(grid, dtype=np.float64))
        _TEMPLATE_CACHE[key] = cached
    return cached


def estimate_f0_mel(
    mel: MelSpectrogram,
    grid: np.ndarray | None = None,
    model: HarmonicModel = HarmonicModel(),
    voicing_threshold: float = 0.5,
) -> F0Track:
    """Matched harmonic-template pitch search in the log-mel domain.

    Each frame is assigned the grid candidate whose log-domain template has
    the highest normalized correlation with the frame; frames whose best
    correlation falls below ``voicing_threshold`` are marked unvoiced (0).
    """
    if grid is None:
        grid = default_f0_grid()
    grid = np.asarray(grid, dtype=np.float64)
    if grid.size == 0:
        raise ConfigError("empty F0 candidate grid")
    if grid.min() < 60.0 or grid.max() > 400.0:
        raise ConfigError("F0 grid must lie within [60, 400] Hz")

    config = AudioConfig(
        sample_rate=mel.sample_rate, n_fft=mel.n_fft, hop=mel.hop, win=mel.win, n_mels=mel.n_mels
    )
    templates, grid_hz = _f0_templates(tuple(grid.tolist()), config, model)

    frames = mel.data - mel.data.mean(axis=1, keepdims=True)
    norms = np.linalg.norm(frames, axis=1)
    flat = norms < 1e-9
    corr = (frames / np.where(flat, 1.0, norms)[:, None]) @ templates.T
    best = np.argmax(corr, axis=1)
    best_corr = corr[np.arange(corr.shape[0]), best]
    values = np.where(flat | (best_corr < voicing_threshold), 0.0, grid_hz[best])
    return F0Track(values, float(grid_hz.min()), float(grid_hz.max()))


def default_f0_grid(lo: float = 60.0, hi: float = 400.0, step: float = 1.0) -> np.ndarray:
    return np.arange(lo, hi + 0.5 * step, step)


def duration_mean_std(durations: np.ndarray) -> DurationStats:
    """Arithmetic mean and population standard deviation, in frames."""
    durations = np.asarray(durations, dtype=np.float64)
    if durations.size == 0:
        raise InputError("cannot compute duration statistics of an empty sequence")
    if (durations < 1).any():
        raise InputError("every duration must be >= 1 frame")
    return DurationStats(float(durations.mean()), float(durations.std()))


# ---------------------------------------------------------------------------
# Serialization: container files plus one-frame-per-row CSV for inspection.

def save_mel(path, mel: MelSpectrogram) -> None:
    meta = {
        "kind": "mel_spectrogram",
        "sample_rate": mel.sample_rate,
        "n_fft": mel.n_fft,
        "hop": mel.hop,
        "win": mel.win,
        "n_mels": mel.n_mels,
    }
    container.write_arrays(path, {"data": mel.data}, meta)


def load_mel(path) -> MelSpectrogram:
    arrays, meta = container.read_arrays(path)
    return MelSpectrogram(
        arrays["data"], meta["sample_rate"], meta["n_fft"], meta["hop"],
        meta["win"], meta["n_mels"],
    )


def save_f0(path, track: F0Track) -> None:
    meta = {"kind": "f0_track", "search_lo": track.search_lo, "search_hi": track.search_hi}
    container.write_arrays(path, {"values": track.values}, meta)


def load_f0(path) -> F0Track:
    arrays, meta = container.read_arrays(path)
    return F0Track(arrays["values"], meta["search_lo"], meta["search_hi"])


def save_cepstrum(path, cep: CepstralVector) -> None:
    container.write_arrays(path, {"coeffs": cep.coeffs}, {"kind": "cepstral_vector"})


def load_cepstrum(path) -> CepstralVector:
    arrays, _ = container.read_arrays(path)
    return CepstralVector(arrays["coeffs"])


def frames_to_csv(path, obj) -> None:
    """Dump a MelSpectrogram, F0Track, or CepstralVector as CSV, one frame per row."""
    if isinstance(obj, MelSpectrogram):
        rows = obj.data
    elif isinstance(obj, F0Track):
        rows = obj.values[:, None]
    elif isinstance(obj, CepstralVector):
        rows = obj.coeffs[None, :]
    else:
        raise InputError(f"cannot serialize {type(obj).__name__} to CSV")
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        for row in rows:
            writer.writerow([repr(float(v)) for v in row])


def audio_config_to_dict(config: AudioConfig) -> dict:
    return asdict(config)


def audio_config_from_dict(d: dict) -> AudioConfig:
    return AudioConfig(**d)
