"""
Log-Mel and MFCC features
=========================

A synthetic utterance is turned into 40 log-Mel energies per 10 ms frame,
then into 13 MFCCs, and finally spliced into the 40 x 16 context blocks the
models consume. The last step shows that the MFCC transform is exactly an
S-type convolution whose 13 filters are DCT rows.
"""

import numpy as np

from cldnn import conv, dsp, synth

# one 0.4 s utterance of the "hap" class from a 120 Hz speaker
rng = np.random.default_rng(0)
x = synth.synth_utterance(synth.EMOTIONS.index("hap"), 120.0, rng, 0.4)
print("samples:", x.shape)

# log-Mels: Hann 25 ms window, 10 ms hop, 512-point FFT, 40 triangular bands
lm = dsp.log_mels(x)
print("log-Mel frames:", lm.frames.shape)

# MFCCs keep the first 13 DCT coefficients of every log-Mel frame
mf = dsp.mfcc_from_logmels(lm)
print("MFCC frames:", mf.frames.shape)

# splicing stacks 10 left and 5 right context frames around each frame
blocks = dsp.splice(lm).blocks
print("spliced blocks:", blocks.shape)

# the DCT as a full-height spectral convolution with 13 maps and no bias
spec = conv.ConvLayerSpec(conv.ConvType.S, 1, 13, 40, 1, activation="identity")
params = conv.ConvParams(dsp.dct_filters(40)[:13].reshape(13, 1, 40, 1), np.zeros(13))
as_conv = conv.conv_layer(lm.frames.T[None], params, spec)[:, 0, :].T
print("max |conv - MFCC|:", np.abs(as_conv - mf.frames).max())
