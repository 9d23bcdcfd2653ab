"""
Noise augmentation
==================

Every clean utterance is mixed with 20 noise clips at 3 SNR levels drawn
from [-10, 15] dB, giving 60 noisy copies. The mix recipe (clip, SNR,
offset) is stored, so any noisy utterance can be re-rendered exactly.
"""

import numpy as np

from cldnn import augment as A
from cldnn import synth
from cldnn.corpus import Utterance

rng = np.random.default_rng(3)
clean = [Utterance(uid, f"{uid}.wav", spk, lab, g)
         for uid, spk, g, lab, _ in synth.generate(synth.SynthSpec(n_speakers=2,
                                                   utterances_per_speaker_per_class=1))]
audio = {uid: x for uid, _, _, _, x in synth.generate(synth.SynthSpec(n_speakers=2,
                                                      utterances_per_speaker_per_class=1))}
kinds = ("white", "pink", "brown", "dtmf", "hum", "band", "burst", "chirp")
noise = {f"n{i:02d}": synth.synth_noise(kinds[i % 8], rng, 0.5) for i in range(24)}

noisy = A.augment_corpus(clean, {k: len(v) for k, v in noise.items()}, seed=0)
print(f"{len(clean)} clean -> {len(noisy)} noisy, {len(clean) + len(noisy)} total")

u = noisy[0]
mixed = A.render(u, audio[u.parent_id], noise[u.noise_id])
print(f"{u.uid}: clip {u.noise_id}, offset {u.offset}, requested {u.snr_db:.3f} dB, "
      f"measured {A.measured_snr_db(audio[u.parent_id], mixed):.3f} dB")

# a 1257-utterance corpus becomes 75,420 noisy utterances
big = [Utterance(f"u{i}", "x.wav", "s", "ang") for i in range(1257)]
print("1257 clean ->", len(A.augment_corpus(big, {k: len(v) for k, v in noise.items()})))
