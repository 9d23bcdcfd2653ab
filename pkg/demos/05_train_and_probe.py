"""
Training an FST-CLDNN and probing its modules
=============================================

A small synthetic corpus is split by speaker, an FST-CLDNN is trained with
Adam and early stopping, and each module's utterance representation is
probed with a linear classifier and the inertia ratio rho.
"""

import numpy as np

from cldnn import dsp, synth
from cldnn import models as M
from cldnn import probing as P
from cldnn import training as T

spec = synth.SynthSpec(n_speakers=4, utterances_per_speaker_per_class=3, seed=0)
data = list(synth.generate(spec))
names = synth.class_names(6)
examples = [T.Example(dsp.splice(dsp.log_mels(x)).blocks, names.index(lab), uid, spk)
            for uid, spk, _, lab, x in data]

part = T.make_partitions([e.speaker for e in examples], seed=0)
print("speakers per split:", part.sizes())
train = [e for e in examples if e.speaker in part.train]
val = [e for e in examples if e.speaker in part.val]
test = [e for e in examples if e.speaker in part.test]

cfg = M.make_config("FST", "logmel")
res = T.train(cfg, train, val, seed=0, max_epochs=15)
for h in res.history:
    print(f"epoch {h.epoch:2d}  loss {h.train_loss:.3f}  val UA {h.val_ua:.3f}")
print("best epoch", res.best_epoch, "test UA", T.evaluate(test, res.params, cfg))

# temporal means at each tap, then one probe per tap on the emotion labels
def taps(exs):
    reps = [P.representations(e.blocks, res.params, cfg) for e in exs]
    return {t: np.array([r[t] for r in reps]) for t in P.taps_for(cfg)}

tr, te = taps(train + val), taps(test)
ytr = np.array([e.label for e in train + val])
yte = np.array([e.label for e in test])
for t in P.taps_for(cfg):
    _, ua = P.train_linear_probe(tr[t], ytr, te[t], yte)
    rho = P.cluster_inertia(tr[t], ytr).rho
    print(f"{t.value:6s} probe UA {ua:.3f}  rho {rho:.3f}")
