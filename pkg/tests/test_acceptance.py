"""The ten acceptance criteria, each at its stated tolerance and time budget.

A summary line per criterion is printed at the end of the pytest run.
"""

import csv
import time
from pathlib import Path

import numpy as np
import pytest

from cldnn import augment as A
from cldnn import conv as C
from cldnn import dsp, synth
from cldnn import experiment as E
from cldnn import models as M
from cldnn import recurrent as R
from cldnn import training as T
from cldnn.corpus import Utterance
from oracles import brute_inertia, naive_conv, naive_pool, numeric_grad, random_spec, rel_error
from test_conv import layer_grad_check
from test_models import model_grad_errors, small_config
from test_recurrent import rand_lstm


def detail(request, text):
    request.node.user_properties.append(("detail", text))


def write_cfg(path, **kv):
    path.write_text("".join(f"{k} = {v}\n" for k, v in kv.items()))
    return path


@pytest.mark.criterion(1, "convolution oracle equivalence")
def test_criterion_1_conv_oracle(request):
    rng = np.random.default_rng(2024)
    worst, lib_time, types = 0.0, 0.0, set()
    start = time.perf_counter()
    for _ in range(1000):
        spec, Mh, W = random_spec(rng, max_dim=8)
        types.add(spec.conv_type)
        x = rng.standard_normal((spec.in_channels, Mh, W))
        p = C.ConvParams(rng.standard_normal((spec.out_maps, spec.in_channels, spec.filter_h,
                                              spec.filter_w)), rng.standard_normal(spec.out_maps))
        t0 = time.perf_counter()
        y = C.conv_forward(x, p, spec)
        pooled = C.pool_forward(y, spec)
        lib_time += time.perf_counter() - t0
        worst = max(worst, np.abs(y - naive_conv(x, p.maps, p.bias, spec.stride)).max(),
                    np.abs(pooled - naive_pool(y, spec.pool, spec.pool_stride)).max())
    total = time.perf_counter() - start
    detail(request, f"max abs err {worst:.1e}, {total:.1f} s")
    assert types == set(C.ConvType)
    assert worst < 1e-12
    assert total < 10.0


@pytest.mark.criterion(2, "gradient suite")
def test_criterion_2_gradients(request):
    start = time.perf_counter()
    rng = np.random.default_rng(7)
    errs = {}
    for ct, h, w in (("S", 3, 1), ("T", 1, 3), ("ST", 3, 2), ("FST", 6, 3)):
        for act, mode in (("tanh", "max"), ("identity", "mean"), ("relu", "max")):
            spec = C.ConvLayerSpec.preset(ct, 2, 3, h, w, activation=act, pool_mode=mode)
            errs[f"conv {ct} {act} {mode}-pool"] = max(layer_grad_check(spec, 6, 8, rng))
    pf, pb = rand_lstm(rng, 3, 4), rand_lstm(rng, 3, 4)
    xs = rng.standard_normal((5, 3))
    G = rng.standard_normal((5, 4))
    _, cache = R.lstm_forward(xs, pf)
    gx, gp = R.lstm_backward(G, cache)
    loss = lambda: float(np.sum(R.lstm_forward(xs, pf)[0] * G))
    errs["lstm"] = max([rel_error(gx, numeric_grad(loss, xs))] +
                       [rel_error(getattr(gp, k), numeric_grad(loss, getattr(pf, k)))
                        for k in ("Wx", "Ws", "b")])
    G2 = rng.standard_normal((5, 8))
    _, cache = R.blstm_forward(xs, pf, pb)
    gx, gf, gb = R.blstm_backward(G2, cache)
    loss = lambda: float(np.sum(R.blstm_forward(xs, pf, pb)[0] * G2))
    errs["blstm"] = max([rel_error(gx, numeric_grad(loss, xs))] +
                        [rel_error(getattr(g, k), numeric_grad(loss, getattr(p, k)))
                         for p, g in ((pf, gf), (pb, gb)) for k in ("Wx", "Ws", "b")])
    z = rng.standard_normal(6)
    _, g = M.cross_entropy(M.softmax(z), 3)
    errs["softmax+ce"] = rel_error(g, numeric_grad(lambda: M.cross_entropy(M.softmax(z), 3)[0], z))
    # the LDNN check covers the FC stack, dropout and the temporal mean
    for ct, kind in M.VARIANTS:
        e = model_grad_errors(small_config(ct, kind), 7)
        errs[f"end-to-end {ct or 'LDNN'} {kind}"] = max(e.values())
    total = time.perf_counter() - start
    worst = max(errs, key=errs.get)
    detail(request, f"{len(errs)} checks, worst {errs[worst]:.1e} ({worst}), {total:.1f} s")
    bad = {k: v for k, v in errs.items() if not v < 1e-5}
    assert not bad, bad
    assert total < 60.0


@pytest.mark.criterion(3, "DCT-conv identity")
def test_criterion_3_dct_identity(request):
    start = time.perf_counter()
    lm = dsp.log_mels(np.random.default_rng(3).standard_normal(8000))
    spec = C.ConvLayerSpec(C.ConvType.S, 1, 13, 40, 1, activation=C.Activation.IDENTITY)
    C.validate_spec(spec, 40)
    p = C.ConvParams(dsp.dct_filters(40)[:13].reshape(13, 1, 40, 1), np.zeros(13))
    conv = C.conv_layer(lm.frames.T[None], p, spec)[:, 0, :].T
    err = np.abs(conv - dsp.mfcc_from_logmels(lm).frames).max()
    c = dsp.mfcc_from_logmels(dsp.SpectralSequence(np.full((4, 40), 1.75), dsp.FeatureKind.LOGMEL))
    const_err = max(np.abs(c.frames[:, 0] - 40 * 1.75).max(), np.abs(c.frames[:, 1:]).max())
    total = time.perf_counter() - start
    detail(request, f"conv vs mfcc {err:.1e}, constant frame {const_err:.1e}, {total:.2f} s")
    assert err < 1e-12 and const_err < 1e-10 and total < 1.0


@pytest.mark.criterion(4, "augmentation fidelity")
def test_criterion_4_augmentation(request, tmp_path):
    start = time.perf_counter()
    spec = synth.SynthSpec(n_classes=5, n_speakers=4, utterances_per_speaker_per_class=1, seed=4)
    clean, audio = [], {}
    for uid, spk, gender, lab, x in synth.generate(spec):
        clean.append(Utterance(uid, f"{uid}.wav", spk, lab, gender))
        audio[uid] = x
    assert len(clean) == 20
    rng = np.random.default_rng(4)
    kinds = ("white", "pink", "brown", "dtmf", "hum", "band", "burst", "chirp")
    noise = {f"n{i:02d}": synth.synth_noise(kinds[i % 8], rng, 0.2 + 0.05 * i) for i in range(24)}
    noisy = A.augment_corpus(clean, {k: len(v) for k, v in noise.items()}, seed=4)
    worst = 0.0
    for u in noisy:
        mixed = A.render(u, audio[u.parent_id], noise[u.noise_id])
        worst = max(worst, abs(A.measured_snr_db(audio[u.parent_id], mixed) - u.snr_db))
    assert len(noisy) == 1200 and len(noisy) + len(clean) == 20 * 61
    big = [Utterance(f"u{i}", "x.wav", f"s{i % 42}", "ang") for i in range(1257)]
    assert len(A.augment_corpus(big, {k: len(v) for k, v in noise.items()}, seed=0)) == 75420
    total = time.perf_counter() - start
    detail(request, f"1220 total, worst SNR error {worst:.1e} dB, {total:.1f} s")
    assert worst < 1e-6 and total < 30.0


@pytest.mark.criterion(5, "BLSTM symmetry")
def test_criterion_5_blstm_symmetry(request):
    rng = np.random.default_rng(5)
    worst = 0.0
    for _ in range(200):
        H, D, Tn = int(rng.integers(1, 9)), int(rng.integers(1, 6)), int(rng.integers(1, 20))
        p = rand_lstm(rng, D, H)
        xs = rng.standard_normal((Tn, D))
        m = R.blstm_forward(xs, p, p)[0].mean(axis=0)
        mr = R.blstm_forward(xs[::-1], p, p)[0].mean(axis=0)
        worst = max(worst, np.abs(mr - np.concatenate([m[H:], m[:H]])).max())
    detail(request, f"200 random cases, worst {worst:.1e}")
    assert worst <= 1e-12


@pytest.fixture(scope="module")
def synthetic_examples():
    spec = synth.SynthSpec(n_classes=6, n_speakers=4, utterances_per_speaker_per_class=5, seed=0)
    data = list(synth.generate(spec))
    names = synth.class_names(6)
    fb = dsp.default_filterbank()
    out = {}
    for kind in ("logmel", "mfcc"):
        fk = M.InputKind(kind).feature_kind
        out[kind] = [T.Example(dsp.splice(dsp.extract(x, fk, fb)).blocks, names.index(lab), uid, spk)
                     for uid, spk, _, lab, x in data]
    return out


@pytest.mark.criterion(6, "overfit capability")
def test_criterion_6_overfit(request, synthetic_examples):
    start = time.perf_counter()
    reached = {}
    for ct, kind in M.VARIANTS:
        cfg = M.make_config(ct, kind)
        res = T.train(cfg, synthetic_examples[kind], [], seed=0, max_epochs=50, patience=None,
                      target_train_ua=1.0)
        reached[cfg.name] = (res.history[-1].train_ua, len(res.history))
    total = time.perf_counter() - start
    epochs = ", ".join(f"{n}: {e}" for n, (_, e) in reached.items())
    detail(request, f"epochs to 100%: {epochs}; {total:.0f} s")
    assert all(ua == 1.0 for ua, _ in reached.values()), reached
    assert total < 600.0


@pytest.mark.criterion(7, "probe trend")
def test_criterion_7_probe_trend(request, tmp_path):
    path = write_cfg(tmp_path / "exp.cfg", name="fst", corpus="data/corpus/manifest.csv",
                     noise="data/noise/manifest.csv", conv_type="FST", input_kind="logmel",
                     condition="noisy", n_noise=2, n_snr=2, max_epochs=30, seed=0)
    cfg = E.load_config(path)
    E.synth_data(cfg)
    ws = E.run_experiment(cfg)
    with open(ws / "reports" / "probe.csv", newline="") as f:
        table = {(r["tap"], r["label_type"]): (float(r["probe_ua"]), float(r["rho"]))
                 for r in csv.DictReader(f)}
    ua = [table[(t, "emotion")][0] for t in ("Raw", "CNN", "BLSTM")]
    rho_cnn, rho_mlp = table[("CNN", "emotion")][1], table[("MLP", "emotion")][1]
    detail(request, "emotion UA Raw/CNN/BLSTM " + "/".join(f"{v:.3f}" for v in ua) +
           f", rho CNN {rho_cnn:.3f} > MLP {rho_mlp:.3f}")
    assert ua[0] <= ua[1] <= ua[2]
    assert rho_mlp < rho_cnn


@pytest.mark.criterion(8, "inertia correctness")
def test_criterion_8_inertia(request):
    from cldnn import probing as P

    s = P.cluster_inertia(np.array([[0, 0], [0, 2], [4, 0], [4, 2]], dtype=float), [0, 0, 1, 1])
    assert (s.intra, s.inter, s.rho) == (1.0, 16.0, 0.0625)
    rng = np.random.default_rng(8)
    worst = 0.0
    for _ in range(100):
        K = int(rng.integers(2, 7))
        n = int(rng.integers(K, 40))
        labels = np.concatenate([np.arange(K), rng.integers(0, K, n - K)])
        X = rng.standard_normal((n, int(rng.integers(1, 9))))
        got = P.cluster_inertia(X, labels)
        want = brute_inertia(X, list(labels))
        worst = max(worst, *(abs(a - b) for a, b in zip((got.intra, got.inter, got.rho), want)))
    detail(request, f"fixture exact, 100 random fixtures worst {worst:.1e}")
    assert worst < 1e-10


def _tree_bytes(root):
    return {str(p.relative_to(root)): p.read_bytes() for p in sorted(Path(root).rglob("*"))
            if p.is_file()}


@pytest.mark.criterion(9, "determinism")
def test_criterion_9_determinism(request, tmp_path):
    keys = dict(name="det", corpus="data/corpus/manifest.csv", noise="data/noise/manifest.csv",
                conv_type="FST", conv_maps=4, blstm_cells=8, fc_hidden="8,8,8", n_noise=2,
                n_snr=1, max_epochs=3, seed=11, **{"synth.utterances": 1, "synth.noise_clips": 4,
                                                    "synth.noise_duration": 0.5})
    trees = []
    for run in ("a", "b"):
        root = tmp_path / run
        root.mkdir()
        cfg = E.load_config(write_cfg(root / "exp.cfg", **keys))
        E.synth_data(cfg)
        trees.append(_tree_bytes(E.run_experiment(cfg)))
    a, b = trees
    ckpts = [k for k in a if k.startswith("checkpoints")]
    reports = [k for k in a if k.startswith("reports")]
    detail(request, f"{len(ckpts)} checkpoints, {len(reports)} reports, {len(a)} files identical")
    assert ckpts and "reports/probe.csv" in reports
    assert a.keys() == b.keys()
    assert all(a[k] == b[k] for k in a)


@pytest.mark.criterion(10, "partition independence")
def test_criterion_10_partitions(request):
    speakers = [f"spk{i:02d}" for i in range(42)]
    for seed in range(1000):
        part = T.make_partitions(speakers, seed=seed)
        tr, va, te = part.train, part.val, part.test
        assert (len(tr), len(va), len(te)) == (29, 4, 9)
        assert not (tr & va) and not (tr & te) and not (va & te)
        assert tr | va | te == set(speakers)
    detail(request, "1000 seeds, disjoint 29/4/9")
