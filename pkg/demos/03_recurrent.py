"""
LSTM and BLSTM
==============

The BLSTM runs one LSTM forward and one backward in time and concatenates
their outputs. With tied weights, reversing the input swaps the two halves
of the temporal mean, which is a quick sanity check of the wiring.
"""

import numpy as np

from cldnn import recurrent as R

rng = np.random.default_rng(2)
p = R.LSTMParams.init(40, 128, rng)
xs = rng.standard_normal((25, 40))

z, _ = R.blstm_forward(xs, p, R.LSTMParams.init(40, 128, rng))
print("BLSTM outputs:", z.shape)

m = R.blstm_forward(xs, p, p)[0].mean(axis=0)
mr = R.blstm_forward(xs[::-1], p, p)[0].mean(axis=0)
print("tied reversal, max |swap(mean) - mean(reversed)|:",
      np.abs(np.concatenate([m[128:], m[:128]]) - mr).max())

# a closed input gate and open forget gate hold the cell state
q = R.LSTMParams.zeros(2, 3)
q.b[:3], q.b[3:6] = -50.0, 50.0
state = R.LSTMState(np.array([0.3, -0.7, 1.2]), np.zeros(3))
for x in rng.standard_normal((10, 2)):
    state = R.lstm_step(x, state, q)
print("held cell state:", np.round(state.c, 6))
