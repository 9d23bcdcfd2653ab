import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cldnn import conv as C
from cldnn import dsp
from cldnn import models as M
from cldnn.errors import FormatError, GeometryError, ShapeError, SpecError
from oracles import numeric_grad, rel_error, sample_indices


def small_config(conv_type="FST", kind="logmel", **kw):
    kw = {"conv_maps": 3, "blstm_cells": 4, "fc_hidden": (5, 4, 3), "n_classes": 4, **kw}
    return M.make_config(conv_type, kind, **kw)


def toy_blocks(config, T=3, seed=0):
    return np.random.default_rng(seed).standard_normal((T,) + config.block_shape)


# -- configs --

def test_fst_shape_walkthrough():
    cfg = M.make_config("FST", "logmel", w1=5, w2=2)
    assert cfg.conv1.output_shape(40, 16) == (32, 1, 5)
    assert cfg.conv_output_shape() == (32, 1, 1)
    assert cfg.frame_dim == 32


def test_all_variants_build():
    names = [M.make_config(ct, kind).name for ct, kind in M.VARIANTS]
    assert len(set(names)) == 8
    assert "FST-CLDNN (log-Mels)" in names and "LDNN (MFCCs)" in names


@pytest.mark.parametrize("ct", ["S", "ST"])
def test_spectral_convs_rejected_on_mfcc(ct):
    with pytest.raises(SpecError):
        M.make_config(ct, "mfcc", h1=3, h2=2)


def test_collapsing_stack_rejected():
    with pytest.raises((GeometryError, SpecError)):
        M.make_config("T", "logmel", w1=15, w2=2)


def test_ldnn_fc_sizes():
    cfg = M.make_config(None, "mfcc", n_classes=6)
    assert cfg.ldnn.fc_sizes == (128, 32, 32, 6)
    assert cfg.frame_dim == 13 * 16
    with pytest.raises(SpecError):
        M.LDNNConfig(dropout=1.0)


def test_config_dict_roundtrip():
    for ct, kind in M.VARIANTS:
        cfg = M.make_config(ct, kind)
        assert M.ModelConfig.from_dict(cfg.to_dict()) == cfg


# -- forward --

@pytest.mark.parametrize("ct, kind", M.VARIANTS)
def test_probabilities_on_simplex(ct, kind):
    cfg = small_config(ct, kind)
    params = M.init_params(cfg, np.random.default_rng(1))
    p = M.predict_proba(toy_blocks(cfg, 4), params, cfg)
    assert p.shape == (4,) and (p > 0).all() and (p < 1).all()
    assert abs(p.sum() - 1.0) <= 1e-12


def test_eval_is_deterministic_and_dropout_free():
    cfg = small_config("T")
    params = M.init_params(cfg, np.random.default_rng(2))
    x = toy_blocks(cfg, 5)
    a = M.predict_proba(x, params, cfg)
    assert a.tobytes() == M.predict_proba(x, params, cfg).tobytes()
    cfg0 = M.with_dropout(cfg, 0.0)
    b, _ = M.forward(x, params, cfg0, M.Mode.TRAIN, np.random.default_rng(3))
    assert a.tobytes() == b.tobytes()


def test_dropout_expectation():
    rng = np.random.default_rng(4)
    c = rng.uniform(0.5, 1.5, 64)
    p = 0.2
    masks = (rng.random((20000, 64)) >= p) / (1 - p)
    np.testing.assert_allclose((masks * c).mean(axis=0), c, rtol=0.04)
    assert abs((masks * c).mean() / c.mean() - 1.0) < 0.01
    # the model draws masks of exactly this form
    cfg = small_config(None, "mfcc", dropout=p)
    params = M.init_params(cfg, rng)
    _, cache = M.forward(toy_blocks(cfg), params, cfg, M.Mode.TRAIN, np.random.default_rng(5))
    assert set(np.unique(cache.mask)) <= {0.0, 1 / (1 - p)}


def test_train_mode_needs_rng():
    cfg = small_config(None, "mfcc")
    with pytest.raises(ValueError):
        M.forward(toy_blocks(cfg), M.init_params(cfg, np.random.default_rng(0)), cfg, M.Mode.TRAIN)


def test_bad_block_shape():
    cfg = small_config("FST")
    with pytest.raises(ShapeError):
        M.predict_proba(np.zeros((3, 13, 16)), M.init_params(cfg, np.random.default_rng(0)), cfg)


# -- loss --

def test_cross_entropy_cases():
    loss, g = M.cross_entropy(np.array([0.0, 1.0, 0.0]), 1)
    assert loss == 0.0
    np.testing.assert_array_equal(g, 0.0)
    loss, _ = M.cross_entropy(np.full(6, 1 / 6), 2)
    assert loss == pytest.approx(np.log(6), abs=1e-12)
    loss, _ = M.cross_entropy(np.array([1.0, 0.0]), 1)
    assert np.isfinite(loss) and loss == pytest.approx(-np.log(1e-300))


def test_softmax_cross_entropy_gradient():
    rng = np.random.default_rng(6)
    z = rng.standard_normal(6)
    _, g = M.cross_entropy(M.softmax(z), 3)
    fd = numeric_grad(lambda: M.cross_entropy(M.softmax(z), 3)[0], z)
    assert np.abs(g - fd).max() < 1e-8


# -- gradients --

# FD roundoff is ~1e-11 absolute, so gradients below 1e-5 are compared absolutely
FD_FLOOR = 1e-5
KINK_MARGIN = 5e-5   # five eps: a perturbed parameter cannot carry a unit across a kink


def _margins(cache):
    """Smallest distance of any ReLU input from 0 and of any max-pool winner from its runner-up."""
    zs = [np.abs(z).min() for z in cache.fc_pre[:-1]]
    gaps = []
    for cc in (cache.conv1, cache.conv2):
        if cc is None:
            continue
        if cc.spec.activation is C.Activation.RELU:
            zs.append(np.abs(cc.z).min())
        if cc.spec.has_pooling:
            m, n = cc.spec.pool
            win = np.lib.stride_tricks.sliding_window_view(cc.a, (m, n), axis=(2, 3))
            win = win[:, :, ::cc.spec.pool_stride[0], ::cc.spec.pool_stride[1]]
            top2 = np.sort(win.reshape(win.shape[:4] + (-1,)), axis=-1)[..., -2:]
            # ties among zeros (dead units) are harmless: both sides stay zero
            live = top2[..., 1] > 0
            if live.any():
                gaps.append((top2[..., 1] - top2[..., 0])[live].min())
    return min(zs + gaps)


def kink_safe_fixture(cfg, seed):
    """First seed from ``seed`` whose fixture keeps every kink and pooling switch at least KINK_MARGIN away."""
    for s in range(seed, seed + 200):
        rng = np.random.default_rng(s)
        params = M.init_params(cfg, rng)
        for k in params:
            if k.endswith((".b", ".bias")):
                params[k] = 0.1 * rng.standard_normal(params[k].shape)
        # a small input keeps the gates out of saturation, where gradients sink into roundoff
        x = 0.2 * toy_blocks(cfg, 3, s)
        mask = (rng.random(2 * cfg.ldnn.blstm_cells) >= 0.2) / 0.8
        loss, grads, _ = M.loss_and_grads(x, 1, params, cfg, M.Mode.TRAIN, mask=mask)
        _, cache = M.forward(x, params, cfg, M.Mode.TRAIN, mask=mask)
        alive = all(np.abs(grads[k]).max() > 1e-6 for k in grads)
        if alive and _margins(cache) > KINK_MARGIN:
            return params, x, mask, grads, rng
    raise RuntimeError("no kink-safe fixture found")


def model_grad_errors(cfg, seed, limit=40):
    """Relative FD error per parameter tensor over (at most ``limit``) sampled entries."""
    params, x, mask, grads, rng = kink_safe_fixture(cfg, seed)
    f = lambda: M.loss_and_grads(x, 1, params, cfg, M.Mode.TRAIN, mask=mask)[0]
    errs = {}
    for k in params:
        idx = sample_indices(params[k].shape, rng, limit)
        fd = numeric_grad(f, params[k], indices=idx)
        errs[k] = rel_error([grads[k][i] for i in idx], [fd[i] for i in idx], FD_FLOOR)
    return errs


@pytest.mark.parametrize("ct, kind", M.VARIANTS)
def test_end_to_end_gradients(ct, kind):
    # the toy sizes keep the FD sweep fast; the dropout mask is held fixed
    errs = model_grad_errors(small_config(ct, kind), 7)
    bad = {k: e for k, e in errs.items() if e >= 1e-5}
    assert not bad, bad


def test_zero_upstream_zero_grads():
    cfg = small_config("ST")
    params = M.init_params(cfg, np.random.default_rng(8))
    _, cache = M.forward(toy_blocks(cfg), params, cfg, M.Mode.EVAL)
    grads = M.model_backward(np.zeros(4), cache, params, cfg)
    assert set(grads) == set(params)
    assert not any(g.any() for g in grads.values())


# -- DCT / cross-pipeline equivalence --

def dct_cldnn(blstm_cells=4, fc_hidden=(5, 4, 3), n_classes=4):
    conv1 = C.ConvLayerSpec(C.ConvType.S, 1, 13, 40, 1, activation=C.Activation.IDENTITY)
    conv2 = C.ConvLayerSpec(C.ConvType.S, 13, 13, 1, 1, activation=C.Activation.IDENTITY)
    ld = M.LDNNConfig(n_classes, blstm_cells, fc_hidden, 0.2)
    return M.ModelConfig(M.InputKind.LOGMEL, ld, conv1, conv2)


def test_s_cldnn_with_dct_filters_reproduces_ldnn_on_mfcc():
    x = np.random.default_rng(9).standard_normal(4800)
    lm = dsp.log_mels(x)
    blocks_lm = dsp.splice(lm).blocks
    blocks_mfcc = dsp.splice(dsp.mfcc_from_logmels(lm)).blocks

    ldnn = M.make_config(None, "mfcc", n_classes=4, blstm_cells=4, fc_hidden=(5, 4, 3))
    lp = M.init_params(ldnn, np.random.default_rng(10))
    cfg = dct_cldnn()
    assert cfg.frame_dim == ldnn.frame_dim
    params = dict(lp)
    params["conv1.maps"] = dsp.dct_filters(40)[:13].reshape(13, 1, 40, 1)
    params["conv1.bias"] = np.zeros(13)
    params["conv2.maps"] = np.eye(13).reshape(13, 13, 1, 1)
    params["conv2.bias"] = np.zeros(13)

    _, c_ldnn = M.forward(blocks_mfcc, lp, ldnn)
    _, c_cldnn = M.forward(blocks_lm, params, cfg)
    np.testing.assert_allclose(c_cldnn.frames, c_ldnn.frames, rtol=0, atol=1e-9)
    np.testing.assert_allclose(c_cldnn.logits, c_ldnn.logits, rtol=1e-9, atol=1e-12)


# -- checkpoints --

def test_checkpoint_roundtrip(tmp_path):
    cfg = small_config("ST")
    params = M.init_params(cfg, np.random.default_rng(11))
    extra = {"adam.m.fc1.W": np.ones((5, 8))}
    path = tmp_path / "m.ckpt"
    M.save_checkpoint(path, cfg, params, extra, {"epoch": 3})
    data = path.read_bytes()
    assert data[:4] == b"CKPT"
    assert b"blstm.fwd.U_ix" in data and b"blstm.bwd.u_g" in data
    cfg2, p2, extra2, meta = M.read_checkpoint(path)
    assert cfg2 == cfg and meta == {"epoch": 3}
    assert list(p2) == list(params)
    for k in params:
        np.testing.assert_array_equal(p2[k], params[k])
    np.testing.assert_array_equal(extra2["adam.m.fc1.W"], 1.0)
    assert M.dump_checkpoint(cfg2, p2, extra2, meta) == data


def test_checkpoint_rejects_garbage():
    with pytest.raises(FormatError):
        M.load_checkpoint(b"NOPE" + bytes(16))
    cfg = small_config(None, "mfcc")
    data = M.dump_checkpoint(cfg, {"fc1.W": np.zeros((5, 8))})
    with pytest.raises(FormatError):
        M.load_checkpoint(data)


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 2**31), T=st.integers(1, 6))
def test_simplex_property(seed, T):
    cfg = small_config("T", "mfcc")
    params = M.init_params(cfg, np.random.default_rng(seed))
    p = M.predict_proba(10 * toy_blocks(cfg, T, seed), params, cfg)
    assert (p >= 0).all() and abs(p.sum() - 1) <= 1e-12
