"""Noise augmentation: mix clean utterances with looped noise clips at random SNRs.

For every clean utterance, ``n_noise`` clips are drawn without replacement
from the pool and ``n_snr`` SNR levels uniformly from ``snr_range``; the
utterance is mixed with every (clip, level) combination. The levels are drawn
once per utterance and shared by all of its clips.
"""

from dataclasses import dataclass

import numpy as np

from .corpus import Utterance
from .errors import CannotComputeSNR, PoolTooSmall

SNR_RANGE = (-10.0, 15.0)
N_NOISE = 20
N_SNR = 3


@dataclass(frozen=True)
class NoiseClip:
    id: str
    samples: np.ndarray

    def __post_init__(self):
        if rms_power(self.samples) <= 0.0:
            raise CannotComputeSNR(f"noise clip {self.id!r} is silent")


@dataclass(frozen=True)
class MixSpec:
    clean_id: str
    noise_id: str
    snr_db: float
    noise_offset: int
    seed: int


def rms_power(samples):
    """Mean of squared samples."""
    x = np.asarray(samples, dtype=np.float64)
    return float(np.mean(x * x))


def looped_segment(noise, start, length):
    """``length`` samples of ``noise`` starting at ``start``, wrapping cyclically."""
    noise = np.asarray(noise, dtype=np.float64)
    idx = (start + np.arange(length)) % noise.shape[0]
    return noise[idx]


def scaled_noise(clean, noise, snr_db, offset=0):
    """The noise component g * segment such that P(clean) / P(g * segment) = 10^(snr/10).

    The power is measured on the segment actually added, so the realized SNR
    matches the request even when the clip's loudness varies over time.
    """
    clean = np.asarray(clean, dtype=np.float64)
    samples = noise.samples if isinstance(noise, NoiseClip) else np.asarray(noise, dtype=np.float64)
    seg = looped_segment(samples, offset, clean.shape[0])
    p_clean, p_noise = rms_power(clean), rms_power(seg)
    if p_clean <= 0.0:
        raise CannotComputeSNR("clean signal is silent")
    if p_noise <= 0.0:
        raise CannotComputeSNR("noise segment is silent")
    g = np.sqrt(p_clean / (p_noise * 10.0 ** (snr_db / 10.0)))
    return g * seg


def mix_at_snr(clean, noise, snr_db, offset=0):
    clean = np.asarray(clean, dtype=np.float64)
    return clean + scaled_noise(clean, noise, snr_db, offset)


def measured_snr_db(clean, mixed):
    clean = np.asarray(clean, dtype=np.float64)
    return 10.0 * np.log10(rms_power(clean) / rms_power(np.asarray(mixed) - clean))


def utterance_seed(seed, index):
    """Independent 64-bit seed for the ``index``-th clean utterance."""
    return int(np.random.SeedSequence([seed, index]).generate_state(1, np.uint64)[0])


def plan_mixes(clean_id, noise_lengths, n_noise, n_snr, snr_range, seed):
    """Draw the (clip, SNR, offset) combinations for one utterance."""
    ids = list(noise_lengths)
    if len(ids) < n_noise:
        raise PoolTooSmall(f"pool has {len(ids)} clips, need {n_noise}")
    rng = np.random.default_rng(seed)
    chosen = rng.choice(len(ids), size=n_noise, replace=False)
    levels = rng.uniform(snr_range[0], snr_range[1], size=n_snr)
    specs = []
    for j in chosen:
        nid = ids[j]
        offset = int(rng.integers(0, noise_lengths[nid]))
        for snr in levels:
            specs.append(MixSpec(clean_id, nid, float(snr), offset, seed))
    return specs


def augment_corpus(clean, pool, n_noise=N_NOISE, n_snr=N_SNR, snr_range=SNR_RANGE, seed=0):
    """Noisy children for every clean utterance.

    ``pool`` maps noise id to clip length in samples (or is a list of
    :class:`NoiseClip`). Each child carries its parent's label, speaker and
    gender plus the full mix recipe. ``len(result) == len(clean) * n_noise * n_snr``.
    """
    if not pool:
        raise PoolTooSmall("noise pool is empty")
    if not isinstance(pool, dict):
        pool = {c.id: len(c.samples) for c in pool}
    out = []
    for index, u in enumerate(clean):
        useed = utterance_seed(seed, index)
        for k, spec in enumerate(plan_mixes(u.uid, pool, n_noise, n_snr, snr_range, useed)):
            out.append(Utterance(uid=f"{u.uid}~{k:03d}", path=u.path, speaker=u.speaker,
                                 label=u.label, gender=u.gender, parent_id=u.uid,
                                 noise_id=spec.noise_id, snr_db=spec.snr_db,
                                 offset=spec.noise_offset, seed=useed))
    return out


def render(utt, clean_samples, noise_samples):
    """Re-create the audio of an augmented utterance from its recipe."""
    return mix_at_snr(clean_samples, noise_samples, utt.snr_db, utt.offset)
