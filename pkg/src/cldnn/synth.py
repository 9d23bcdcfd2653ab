"""Desk-scale synthetic emotion corpus and noise pool.

Every class is a harmonic stack shaped by a class-specific spectral envelope
peak and tilt, and amplitude-modulated at a class-specific rate, so both
spectral and temporal filters have something to find. Speakers shift the
fundamental (low for "male", high for "female") and add a mild spectral
colouring of their own.
"""

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .corpus import NoiseRef, Utterance, write_clean_manifest, write_noise_manifest
from .dsp import SAMPLE_RATE, write_wav

EMOTIONS = ("ang", "dis", "fea", "hap", "sad", "sur")

_PEAK_HZ = (450.0, 900.0, 1500.0, 2300.0, 3300.0, 4600.0)
_TILT_DB_PER_OCT = (-3.0, -9.0, -5.0, -12.0, -7.0, -4.0)
_AM_HZ = (4.0, 7.0, 11.0, 16.0, 23.0, 31.0)


@dataclass(frozen=True)
class SynthSpec:
    n_classes: int = 6
    n_speakers: int = 4
    utterances_per_speaker_per_class: int = 5
    duration: tuple = (0.30, 0.45)
    seed: int = 0
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self):
        if not 2 <= self.n_classes <= len(_PEAK_HZ):
            raise ValueError(f"n_classes must be in [2, {len(_PEAK_HZ)}]")
        if self.n_speakers < 1 or self.utterances_per_speaker_per_class < 1:
            raise ValueError("need at least one speaker and one utterance per class")
        if not 0.0 < self.duration[0] <= self.duration[1]:
            raise ValueError(f"bad duration range {self.duration}")


def class_names(n_classes):
    return EMOTIONS[:n_classes]


def speaker_profile(index):
    gender = "female" if index % 2 else "male"
    f0 = (205.0 if gender == "female" else 115.0) + 9.0 * (index // 2 % 5)
    return f"s{index + 1:02d}", gender, f0


def synth_utterance(label_index, f0, rng, duration, sample_rate=SAMPLE_RATE, speaker_color=0.0):
    n = int(round(duration * sample_rate))
    t = np.arange(n) / sample_rate
    f0 = f0 * rng.uniform(0.97, 1.03)
    vibrato = 1.0 + 0.01 * np.sin(2 * np.pi * rng.uniform(4.0, 6.0) * t)
    phase0 = 2 * np.pi * np.cumsum(f0 * vibrato) / sample_rate
    peak, tilt, am = _PEAK_HZ[label_index], _TILT_DB_PER_OCT[label_index], _AM_HZ[label_index]

    x = np.zeros(n)
    k = 1
    while k * f0 < 7000.0:
        fk = k * f0
        env_db = tilt * np.log2(fk / 100.0) + 18.0 * np.exp(-0.5 * ((fk - peak) / 250.0) ** 2)
        env_db += speaker_color * np.sin(fk / 1000.0)
        x += 10.0 ** (env_db / 20.0) * np.sin(k * phase0 + rng.uniform(0, 2 * np.pi))
        k += 1
    x *= 1.0 + 0.6 * np.sin(2 * np.pi * am * t + rng.uniform(0, 2 * np.pi))
    x /= np.max(np.abs(x)) + 1e-12
    x *= rng.uniform(0.2, 0.5)
    x += 1e-3 * rng.standard_normal(n)
    return x


def generate(spec):
    """Yield (uid, speaker, gender, label, samples) for every synthetic utterance."""
    rng = np.random.default_rng(spec.seed)
    names = class_names(spec.n_classes)
    for s in range(spec.n_speakers):
        speaker, gender, f0 = speaker_profile(s)
        color = rng.uniform(-3.0, 3.0)
        for c, label in enumerate(names):
            for j in range(spec.utterances_per_speaker_per_class):
                dur = rng.uniform(*spec.duration)
                x = synth_utterance(c, f0, rng, dur, spec.sample_rate, color)
                yield f"{speaker}_{label}_{j:02d}", speaker, gender, label, x


def synth_corpus(spec, out_dir):
    """Write WAVs plus ``manifest.csv``; returns the manifest path."""
    out_dir = Path(out_dir)
    wav_dir = out_dir / "wav"
    wav_dir.mkdir(parents=True, exist_ok=True)
    utts = []
    for uid, speaker, gender, label, x in generate(spec):
        path = wav_dir / f"{uid}.wav"
        write_wav(path, x, spec.sample_rate)
        utts.append(Utterance(uid, str(path), speaker, label, gender))
    manifest = out_dir / "manifest.csv"
    write_clean_manifest(manifest, utts)
    return manifest


# -- noise --

_NOISE_KINDS = ("white", "pink", "brown", "dtmf", "hum", "band", "burst", "chirp")


def synth_noise(kind, rng, duration=1.0, sample_rate=SAMPLE_RATE):
    n = int(round(duration * sample_rate))
    t = np.arange(n) / sample_rate
    if kind == "white":
        x = rng.standard_normal(n)
    elif kind in ("pink", "brown", "band"):
        spec = np.fft.rfft(rng.standard_normal(n))
        f = np.fft.rfftfreq(n, 1.0 / sample_rate)
        f[0] = f[1]
        if kind == "pink":
            spec /= np.sqrt(f)
        elif kind == "brown":
            spec /= f
        else:
            lo = rng.uniform(200.0, 4000.0)
            spec *= (f > lo) & (f < lo * 1.5)
        x = np.fft.irfft(spec, n)
    elif kind == "dtmf":
        lo, hi = rng.choice([697, 770, 852, 941]), rng.choice([1209, 1336, 1477])
        x = np.sin(2 * np.pi * lo * t) + np.sin(2 * np.pi * hi * t)
    elif kind == "hum":
        base = rng.choice([50.0, 60.0])
        x = sum(np.sin(2 * np.pi * base * h * t) / h for h in range(1, 8))
    elif kind == "burst":
        x = rng.standard_normal(n) * (np.sin(2 * np.pi * rng.uniform(2, 6) * t) > 0.3)
        x[0] += 1.0
    else:
        f_start, f_end = rng.uniform(200, 1000), rng.uniform(2000, 6000)
        x = np.sin(2 * np.pi * (f_start * t + (f_end - f_start) * t * t / (2 * duration)))
    x = x / (np.max(np.abs(x)) + 1e-12)
    return 0.5 * x


def synth_noise_pool(n_clips, out_dir, seed=0, duration=1.0):
    """Write ``n_clips`` assorted noise WAVs and ``manifest.csv``; returns its path."""
    out_dir = Path(out_dir)
    wav_dir = out_dir / "wav"
    wav_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng([seed, 0x9015E])
    refs = []
    for i in range(n_clips):
        kind = _NOISE_KINDS[i % len(_NOISE_KINDS)]
        nid = f"noise-{kind}-{i:03d}"
        path = wav_dir / f"{nid}.wav"
        write_wav(path, synth_noise(kind, rng, duration))
        refs.append(NoiseRef(nid, str(path)))
    manifest = out_dir / "manifest.csv"
    write_noise_manifest(manifest, refs)
    return manifest
