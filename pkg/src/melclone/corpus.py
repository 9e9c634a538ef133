"""Deterministic parametric mel-domain corpus with exact ground truth.

A small phoneme inventory (smooth seeded spectral envelopes, voicing flags,
base durations), per-speaker voice factors (pitch base, spectral tilt,
formant shift, speaking rate), and five named styles that vary duration,
pitch range, energy and pausing.  Rendering happens directly in the mel
domain via the shared harmonic stack, so phoneme durations and pitch tracks
are exact by construction and every analysis in :mod:`melclone.evaluation`
has an oracle to compare against.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, asdict
from pathlib import Path

import numpy as np
from scipy.spatial.distance import pdist, squareform

from . import container, dsp
from .dsp import AudioConfig, HarmonicModel, MelSpectrogram, F0Track, LOG_FLOOR
from .errors import ConfigError, InputError

SILENCE_ID = 0
SILENCE_SYMBOL = "sil"

STYLE_NAMES = ("neutral", "happy", "angry", "sad", "surprise")

# Amplitude of the slow sinusoidal pitch contour before style scaling.  Kept
# shallow so harmonic placement stays near-static within an utterance and the
# spectrogram is predictable from (content, style statistics).
F0_CONTOUR_DEPTH = 0.02
UNVOICED_LEVEL = 0.35
NOISE_FLOOR = 2e-4
FRAME_JITTER = 0.03
BIN_JITTER = 0.02
UNVOICED_NOISE_LO = 0.7
UNVOICED_NOISE_HI = 1.4


def seeded_rng(seed: int, *tags) -> np.random.Generator:
    """Counter-based generator keyed by (seed, hash of tags); order-independent."""
    digest = hashlib.blake2b("/".join(map(str, tags)).encode(), digest_size=8).digest()
    key = np.array([seed & 0xFFFFFFFFFFFFFFFF, int.from_bytes(digest, "little")],
                   dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


@dataclass
class PhonemeInventory:
    """Symbols, per-phoneme spectral envelope templates, voicing, base durations."""

    symbols: list[str]
    templates: np.ndarray  # (n_symbols, n_mels) positive envelopes
    voiced: np.ndarray  # (n_symbols,) bool
    base_durations: np.ndarray  # (n_symbols,) frames

    def __post_init__(self):
        if not (self.voiced[1:].any() and (~self.voiced[1:]).any()):
            raise ConfigError("inventory needs at least one voiced and one unvoiced phoneme")
        if not np.isfinite(self.templates).all():
            raise ConfigError("phoneme envelope templates must be finite")

    @property
    def n_symbols(self) -> int:
        return len(self.symbols)

    def ids_from_text(self, text: str) -> np.ndarray:
        lookup = {s: i for i, s in enumerate(self.symbols)}
        try:
            return np.array([lookup[tok] for tok in text.split()], dtype=np.int64)
        except KeyError as exc:
            raise InputError(f"unknown phoneme symbol {exc.args[0]!r}") from exc


_VOICED_SYMBOLS = ["aa", "ae", "ah", "ee", "ii", "oo", "uu", "mm", "nn", "ll", "rr"]
_UNVOICED_SYMBOLS = ["ss", "sh", "ff", "tt", "kk"]


def build_inventory(seed: int, n_phonemes: int = 16, n_mels: int = 80) -> PhonemeInventory:
    """Deterministic inventory of ``n_phonemes`` phonemes plus leading silence."""
    if n_phonemes < 2:
        raise ConfigError("need at least two phonemes")
    symbols = [SILENCE_SYMBOL]
    for i in range(n_phonemes):
        pool = _VOICED_SYMBOLS if i % 3 != 2 else _UNVOICED_SYMBOLS
        idx = (i // 3) if i % 3 == 2 else (i - i // 3)
        symbols.append(pool[idx % len(pool)] + ("" if i < 16 else str(i)))

    rng = seeded_rng(seed, "inventory")
    bins = np.linspace(0.0, 1.0, n_mels)
    templates = np.zeros((n_phonemes + 1, n_mels))
    for p in range(1, n_phonemes + 1):
        curve = np.zeros(n_mels)
        for j in range(1, 5):
            curve += rng.normal(0.0, 0.5) * np.cos(np.pi * j * bins + rng.uniform(0, 2 * np.pi))
        templates[p] = np.exp(curve)
    voiced = np.array([False] + [i % 3 != 2 for i in range(n_phonemes)])
    base = np.concatenate([[4], rng.integers(3, 9, size=n_phonemes)]).astype(np.int64)
    return PhonemeInventory(symbols, templates, voiced, base)


@dataclass(frozen=True)
class SpeakerProfile:
    speaker_id: str
    f0_base: float  # Hz
    spectral_tilt: float  # log-amplitude slope across the mel axis
    formant_shift: int  # envelope shift in mel bins
    rate_scale: float  # duration multiplier
    gain: float = 1.0  # overall linear loudness

    def __post_init__(self):
        if not 0.6 <= self.rate_scale <= 1.6:
            raise ConfigError(f"rate_scale {self.rate_scale} outside [0.6, 1.6]")


@dataclass(frozen=True)
class StyleProfile:
    style_id: str
    duration_mult: float
    f0_range_mult: float
    energy_mult: float
    pause_prob: float

    def __post_init__(self):
        if min(self.duration_mult, self.f0_range_mult, self.energy_mult) <= 0:
            raise ConfigError("style multipliers must be positive")
        if not 0.0 <= self.pause_prob < 1.0:
            raise ConfigError("pause_prob must lie in [0, 1)")


DEFAULT_STYLES = {
    "neutral": StyleProfile("neutral", 1.0, 1.0, 1.0, 0.05),
    "happy": StyleProfile("happy", 0.85, 1.5, 1.35, 0.02),
    "angry": StyleProfile("angry", 0.8, 1.25, 2.0, 0.02),
    "sad": StyleProfile("sad", 1.5, 0.6, 0.65, 0.15),
    "surprise": StyleProfile("surprise", 0.9, 1.9, 1.2, 0.08),
}


def sample_speaker(seed: int, speaker_id: str) -> SpeakerProfile:
    rng = seeded_rng(seed, "speaker", speaker_id)
    return SpeakerProfile(
        speaker_id=speaker_id,
        f0_base=float(rng.uniform(90.0, 260.0)),
        spectral_tilt=float(rng.uniform(-2.2, 2.2)),
        formant_shift=int(rng.integers(-3, 4)),
        rate_scale=float(rng.uniform(0.7, 1.5)),
        gain=float(np.exp(rng.uniform(-0.5, 0.5))),
    )


@dataclass
class Utterance:
    utt_id: str
    speaker_id: str
    style_id: str
    split: str
    text_id: int
    phone_ids: np.ndarray
    durations: np.ndarray
    mel: MelSpectrogram
    f0: F0Track

    def __post_init__(self):
        if int(self.durations.sum()) != self.mel.frames:
            raise InputError(
                f"{self.utt_id}: durations sum to {self.durations.sum()} but mel has "
                f"{self.mel.frames} frames"
            )
        if self.f0.values.shape[0] != self.mel.frames:
            raise InputError(f"{self.utt_id}: f0 length does not match frame count")


def _speaker_envelope(inventory: PhonemeInventory, speaker: SpeakerProfile) -> np.ndarray:
    n_mels = inventory.templates.shape[1]
    shifted = np.empty_like(inventory.templates)
    shift = speaker.formant_shift
    for p in range(inventory.templates.shape[0]):
        row = inventory.templates[p]
        if shift > 0:
            shifted[p] = np.concatenate([np.full(shift, row[0]), row[:-shift]])
        elif shift < 0:
            shifted[p] = np.concatenate([row[-shift:], np.full(-shift, row[-1])])
        else:
            shifted[p] = row
    frac = np.linspace(0.0, 1.0, n_mels) - 0.5
    return speaker.gain * shifted * np.exp(speaker.spectral_tilt * frac)[None, :]


def render_mel(
    phone_ids: np.ndarray,
    durations: np.ndarray,
    speaker: SpeakerProfile,
    style: StyleProfile,
    inventory: PhonemeInventory,
    seed: int,
    config: AudioConfig = AudioConfig(),
    harmonics: HarmonicModel = HarmonicModel(),
) -> tuple[MelSpectrogram, F0Track]:
    """Render one utterance to a log-mel spectrogram plus its true pitch track.

    Output frames follow the phonemes in order, each repeated for its
    duration.  Voiced phonemes carry the harmonic stack at a slow sinusoidal
    pitch contour; unvoiced ones carry shaped noise; silence sits exactly at
    the log floor.  The random draw sequence depends only on
    (phones, durations, voicing, seed), so two styles differing in a pure
    multiplier produce frame-aligned renders.
    """
    phone_ids = np.asarray(phone_ids, dtype=np.int64)
    durations = np.asarray(durations, dtype=np.int64)
    if (durations < 1).any():
        raise InputError("all durations must be >= 1 frame")
    if phone_ids.shape != durations.shape:
        raise InputError("phone_ids and durations must have equal length")

    rng = seeded_rng(seed, "render")
    total = int(durations.sum())
    t = np.arange(total)

    period = rng.uniform(40.0, 80.0)
    phase = rng.uniform(0.0, 2.0 * np.pi)
    contour = speaker.f0_base * (
        1.0 + F0_CONTOUR_DEPTH * style.f0_range_mult * np.sin(2.0 * np.pi * t / period + phase)
    )

    envelopes = _speaker_envelope(inventory, speaker)
    n_mels = config.n_mels
    linear = np.zeros((total, n_mels))
    f0_truth = np.zeros(total)

    pos = 0
    for pid, dur in zip(phone_ids, durations):
        seg = slice(pos, pos + int(dur))
        pos += int(dur)
        if pid == SILENCE_ID:
            continue
        env = envelopes[pid]
        if inventory.voiced[pid]:
            base = dsp.harmonic_stack_frames(contour[seg], config, harmonics) * env[None, :]
            f0_truth[seg] = contour[seg]
        else:
            noise = rng.uniform(UNVOICED_NOISE_LO, UNVOICED_NOISE_HI, size=(int(dur), n_mels))
            base = UNVOICED_LEVEL * env[None, :] * noise
        base = base + NOISE_FLOOR * env[None, :]
        frame_gain = np.exp(rng.normal(0.0, FRAME_JITTER, size=(int(dur), 1)))
        bin_gain = np.exp(rng.normal(0.0, BIN_JITTER, size=(int(dur), n_mels)))
        linear[seg] = base * frame_gain * bin_gain * style.energy_mult

    mel = MelSpectrogram.from_config(np.log(np.maximum(linear, LOG_FLOOR)), config)
    track = F0Track(f0_truth, 60.0, 400.0)
    return mel, track


def sample_phone_string(rng: np.random.Generator, inventory: PhonemeInventory,
                        min_len: int, max_len: int) -> np.ndarray:
    length = int(rng.integers(min_len, max_len + 1))
    return rng.integers(1, inventory.n_symbols, size=length).astype(np.int64)


def _insert_pauses(phones: np.ndarray, style: StyleProfile,
                   rng: np.random.Generator) -> np.ndarray:
    out = []
    for i, pid in enumerate(phones):
        out.append(int(pid))
        if i + 1 < phones.size and rng.uniform() < style.pause_prob:
            out.append(SILENCE_ID)
    return np.array(out, dtype=np.int64)


def sample_durations(phones: np.ndarray, speaker: SpeakerProfile, style: StyleProfile,
                     inventory: PhonemeInventory, rng: np.random.Generator) -> np.ndarray:
    base = inventory.base_durations[phones].astype(np.float64)
    noise = np.exp(rng.normal(0.0, 0.12, size=phones.size))
    scaled = base * speaker.rate_scale * style.duration_mult * noise
    return np.maximum(1, np.rint(scaled)).astype(np.int64)


@dataclass(frozen=True)
class CorpusSpec:
    n_train_speakers: int = 12
    n_val_speakers: int = 2
    n_clone_speakers: int = 4
    utterances_per_speaker: int = 40
    min_phones: int = 8
    max_phones: int = 20
    n_phonemes: int = 16
    seed: int = 0
    max_seed_retries: int = 5

    def __post_init__(self):
        if self.n_train_speakers < 4 or self.n_clone_speakers < 2:
            raise ConfigError("need >= 4 train speakers and >= 2 clone speakers")


def _build_utterance(spec: CorpusSpec, seed: int, inventory: PhonemeInventory,
                     speaker: SpeakerProfile, split: str, spk_idx: int, text_id: int,
                     style: StyleProfile, config: AudioConfig) -> Utterance:
    text_rng = seeded_rng(seed, "text", spk_idx, text_id)
    base_phones = sample_phone_string(text_rng, inventory, spec.min_phones, spec.max_phones)
    utt_rng = seeded_rng(seed, "utt", spk_idx, text_id, style.style_id)
    phones = _insert_pauses(base_phones, style, utt_rng)
    durations = sample_durations(phones, speaker, style, inventory, utt_rng)
    render_seed = int(seeded_rng(seed, "rseed", spk_idx, text_id, style.style_id)
                      .integers(0, 2**31))
    mel, f0 = render_mel(phones, durations, speaker, style, inventory, render_seed, config)
    utt_id = f"{speaker.speaker_id}_{text_id:03d}_{style.style_id}"
    return Utterance(utt_id, speaker.speaker_id, style.style_id, split, text_id,
                     phones, durations, mel, f0)


def _speaker_table(spec: CorpusSpec, seed: int) -> list[tuple[SpeakerProfile, str]]:
    total = spec.n_train_speakers + spec.n_val_speakers + spec.n_clone_speakers
    table = []
    for i in range(total):
        if i < spec.n_train_speakers:
            split = "train"
        elif i < spec.n_train_speakers + spec.n_val_speakers:
            split = "val"
        else:
            split = "clone"
        table.append((sample_speaker(seed, f"spk{i:02d}"), split))
    return table


def _render_all(spec: CorpusSpec, seed: int, config: AudioConfig) -> tuple[list[Utterance], PhonemeInventory, dict]:
    inventory = build_inventory(seed, spec.n_phonemes, config.n_mels)
    speakers = _speaker_table(spec, seed)
    utterances = []
    for spk_idx, (speaker, split) in enumerate(speakers):
        styles = STYLE_NAMES if split == "clone" else ("neutral",)
        for text_id in range(spec.utterances_per_speaker):
            for style_name in styles:
                utterances.append(
                    _build_utterance(spec, seed, inventory, speaker, split, spk_idx,
                                     text_id, DEFAULT_STYLES[style_name], config)
                )
    profiles = {s.speaker_id: {"split": split, **asdict(s)} for s, split in speakers}
    return utterances, inventory, profiles


def speaker_separability_gap(utterances: list[Utterance], k: int = 13) -> float:
    """Mean cross-speaker MCD minus mean same-speaker MCD (positive = separable)."""
    ceps = np.stack([dsp._mean_cepstrum(u.mel, k)[1:] for u in utterances])
    labels = np.array([u.speaker_id for u in utterances])
    dists = squareform(dsp.MCD_CONSTANT * np.sqrt(2.0) * pdist(ceps))
    same = labels[:, None] == labels[None, :]
    off = ~np.eye(len(utterances), dtype=bool)
    return float(dists[~same].mean() - dists[same & off].mean())


def generate_corpus(spec: CorpusSpec, out_dir,
                    config: AudioConfig = AudioConfig()) -> Path:
    """Render the full corpus to ``out_dir`` and return the manifest path.

    Deterministic given (spec, seed).  If the rendered speakers fail the
    cepstral separability check (same-speaker MCD must beat cross-speaker),
    the seed is bumped and the corpus regenerated; retries are recorded in
    the manifest header.
    """
    out_dir = Path(out_dir)
    for retry in range(spec.max_seed_retries):
        seed = spec.seed + retry
        utterances, inventory, profiles = _render_all(spec, seed, config)
        gap = speaker_separability_gap(utterances)
        if gap > 0:
            break
    else:
        raise ConfigError(
            f"no separable corpus found within {spec.max_seed_retries} seed retries"
        )

    utt_dir = out_dir / "utts"
    utt_dir.mkdir(parents=True, exist_ok=True)
    rows = []
    for utt in utterances:
        rel = f"utts/{utt.utt_id}.utt"
        container.write_arrays(
            out_dir / rel,
            {
                "mel": utt.mel.data,
                "f0": utt.f0.values,
                "phone_ids": utt.phone_ids,
                "durations": utt.durations,
            },
            meta={"kind": "utterance", "utt_id": utt.utt_id, "speaker_id": utt.speaker_id,
                  "style_id": utt.style_id, "split": utt.split, "text_id": utt.text_id},
        )
        rows.append({
            "utt_id": utt.utt_id, "speaker_id": utt.speaker_id, "style_id": utt.style_id,
            "split": utt.split, "text_id": utt.text_id, "n_frames": utt.mel.frames,
            "phone_ids": utt.phone_ids.tolist(), "durations": utt.durations.tolist(),
            "path": rel,
        })

    header = {
        "kind": "corpus_manifest",
        "version": 1,
        "spec": asdict(spec),
        "audio": asdict(config),
        "seed_used": seed,
        "seed_retries": seed - spec.seed,
        "separability_gap_db": gap,
        "n_utterances": len(rows),
        "styles": {name: asdict(s) for name, s in DEFAULT_STYLES.items()},
        "speakers": profiles,
        "phoneme_symbols": inventory.symbols,
    }
    manifest = out_dir / "manifest.jsonl"
    with open(manifest, "w") as fh:
        fh.write(json.dumps(header, sort_keys=True) + "\n")
        for row in rows:
            fh.write(json.dumps(row, sort_keys=True) + "\n")
    return manifest


class Corpus:
    """Manifest plus lazily loaded utterances, indexed by id and by split."""

    def __init__(self, manifest_path):
        self.root = Path(manifest_path).parent
        with open(manifest_path) as fh:
            lines = [json.loads(line) for line in fh]
        self.header = lines[0]
        if self.header.get("kind") != "corpus_manifest":
            raise InputError(f"{manifest_path} is not a corpus manifest")
        self.rows = lines[1:]
        self.spec = CorpusSpec(**self.header["spec"])
        self.audio = dsp.audio_config_from_dict(self.header["audio"])
        self.seed = self.header["seed_used"]
        self.inventory = build_inventory(self.seed, self.spec.n_phonemes, self.audio.n_mels)
        self.styles = {k: StyleProfile(**v) for k, v in self.header["styles"].items()}
        self.speakers = {
            k: SpeakerProfile(**{f: v[f] for f in
                                 ("speaker_id", "f0_base", "spectral_tilt",
                                  "formant_shift", "rate_scale", "gain")})
            for k, v in self.header["speakers"].items()
        }
        self.speaker_split = {k: v["split"] for k, v in self.header["speakers"].items()}
        self._by_id = {row["utt_id"]: row for row in self.rows}
        self._cache: dict[str, Utterance] = {}

    def split_rows(self, split: str) -> list[dict]:
        return [r for r in self.rows if r["split"] == split]

    def speakers_in_split(self, split: str) -> list[str]:
        return sorted(k for k, v in self.speaker_split.items() if v == split)

    def load(self, utt_id: str) -> Utterance:
        utt = self._cache.get(utt_id)
        if utt is None:
            row = self._by_id.get(utt_id)
            if row is None:
                raise InputError(f"unknown utterance id {utt_id!r}")
            arrays, meta = container.read_arrays(self.root / row["path"])
            utt = Utterance(
                meta["utt_id"], meta["speaker_id"], meta["style_id"], meta["split"],
                meta["text_id"], arrays["phone_ids"], arrays["durations"],
                MelSpectrogram.from_config(arrays["mel"], self.audio),
                F0Track(arrays["f0"], 60.0, 400.0),
            )
            self._cache[utt_id] = utt
        return utt

    def __len__(self):
        return len(self.rows)


@dataclass
class GroupStats:
    speaker_id: str
    style_id: str
    duration_stats: dsp.DurationStats
    mean_energy: float
    mean_f0: float
    n_utterances: int


def corpus_stats(corpus: Corpus, split: str | None = None,
                 style: str | None = None) -> list[GroupStats]:
    """Ground-truth per-(speaker, style) duration/energy/F0 aggregates."""
    rows = corpus.rows
    if split is not None:
        rows = [r for r in rows if r["split"] == split]
    if style is not None:
        rows = [r for r in rows if r["style_id"] == style]
    if not rows:
        raise InputError("no utterances match the requested split/style filter")

    groups: dict[tuple[str, str], list[dict]] = {}
    for row in rows:
        groups.setdefault((row["speaker_id"], row["style_id"]), []).append(row)

    out = []
    for (spk, sty), group in sorted(groups.items()):
        durations = np.concatenate([np.asarray(r["durations"]) for r in group])
        energies, f0s = [], []
        for r in group:
            utt = corpus.load(r["utt_id"])
            energies.append(dsp.phoneme_energy(utt.mel, utt.durations))
            voiced = utt.f0.values[utt.f0.values > 0]
            if voiced.size:
                f0s.append(voiced)
        out.append(GroupStats(
            speaker_id=spk, style_id=sty,
            duration_stats=dsp.duration_mean_std(durations),
            mean_energy=float(np.concatenate(energies).mean()),
            mean_f0=float(np.concatenate(f0s).mean()) if f0s else 0.0,
            n_utterances=len(group),
        ))
    return out
