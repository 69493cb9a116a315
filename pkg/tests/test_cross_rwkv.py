import numpy as np
import pytest
from scipy.signal import correlate2d

from evrwkv.config import RunConfig
from evrwkv.cross_rwkv import (
    ChannelMix,
    CrossRWKVBlock,
    CrossUNet,
    CSShift,
    OmniShift,
    SpatialMix,
    to_grid,
    to_tokens,
)
from evrwkv.model import EvRWKV
from evrwkv.tensor import Value
from helpers import assert_gradients


@pytest.fixture
def rng():
    return np.random.default_rng(2024)


# -- independent numpy transcriptions ---------------------------------------------------


def np_layer_norm(t, gamma, beta, eps=1e-5):
    mu = t.mean(-1, keepdims=True)
    var = ((t - mu) ** 2).mean(-1, keepdims=True)
    return (t - mu) / np.sqrt(var + eps) * gamma + beta


def np_depthwise(x, kernel):
    return np.stack([correlate2d(x[c], kernel[c], mode="same") for c in range(x.shape[0])])


def np_conv(x, weight, bias=None):
    k = weight.shape[-1]
    out = np.stack([
        sum(correlate2d(x[i], weight[o, i], mode="same") for i in range(x.shape[0]))
        for o in range(weight.shape[0])
    ])
    assert k % 2 == 1
    return out if bias is None else out + bias[:, None, None]


def np_omni(x, shift):
    w = shift.branch_weights.data
    return w[0] * x + sum(w[i + 1] * np_depthwise(x, conv.kernel.data) for i, conv in enumerate(shift.convs))


def np_wkv_line(k, v, w, u):
    """Direct loop over one (T, C) sequence."""
    T = k.shape[0]
    out = np.empty_like(v)
    for t in range(T):
        num, den = np.zeros(k.shape[1]), np.zeros(k.shape[1])
        for i in range(T):
            e = u + k[t] if i == t else -(abs(t - i) - 1) / T * w + k[i]
            num += np.exp(e) * v[i]
            den += np.exp(e)
        out[t] = num / den
    return out


def np_re_wkv(k, v, direction_h, direction_v):
    """k, v are (C, H, W); rows first, then columns."""
    wh, uh = np.exp(direction_h.log_w.data), direction_h.u.data
    wv, uv = np.exp(direction_v.log_w.data), direction_v.u.data
    out = v.copy()
    for r in range(v.shape[1]):
        out[:, r, :] = np_wkv_line(k[:, r, :].T, out[:, r, :].T, wh, uh).T
    for c in range(v.shape[2]):
        out[:, :, c] = np_wkv_line(k[:, :, c].T, out[:, :, c].T, wv, uv).T
    return out


def sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def np_spatial_mix(m: SpatialMix, x_img, x_ev):
    c, h, w = x_img.shape
    tok = lambda g: g.reshape(c, -1).T
    grid = lambda t: t.T.reshape(c, h, w)
    t_img, t_ev = tok(x_img), tok(x_ev)
    n_img = grid(np_layer_norm(t_img, m.ln_img.gamma.data, m.ln_img.beta.data))
    n_ev = grid(np_layer_norm(t_ev, m.ln_ev.gamma.data, m.ln_ev.beta.data))
    s_img, s_ev = np_omni(n_img, m.cs_shift.img), np_omni(n_ev, m.cs_shift.ev)

    def key(dp, s):
        return np.einsum("oi,ihw->ohw", dp.pointwise.weight.data[:, :, 0, 0], np_depthwise(s, dp.depthwise.kernel.data))

    k_img, k_ev = key(m.key_img, s_img), key(m.key_ev, s_ev)
    v_img, v_ev = tok(s_img) @ m.value_img.weight.data, tok(s_ev) @ m.value_ev.weight.data
    r_img, r_ev = tok(s_img) @ m.receptance_img.weight.data, tok(s_ev) @ m.receptance_ev.weight.data
    wkv_img = tok(np_re_wkv(k_ev, grid(v_img), m.wkv_img.horizontal, m.wkv_img.vertical))
    wkv_ev = tok(np_re_wkv(k_img, grid(v_ev), m.wkv_ev.horizontal, m.wkv_ev.vertical))
    g_img, g_ev = sigmoid(m.alpha_img.data), sigmoid(m.alpha_ev.data)
    x1 = g_img * wkv_img + (1 - g_img) * t_ev
    x2 = g_ev * wkv_ev + (1 - g_ev) * t_img
    o_img = (sigmoid(r_img) * x1) @ m.out_img.weight.data
    o_ev = (sigmoid(r_ev) * x2) @ m.out_ev.weight.data
    return x_img + grid(o_img), x_ev + grid(o_ev)


def np_channel_mix(m: ChannelMix, x):
    c, h, w = x.shape
    xn = np_layer_norm(x.reshape(c, -1).T, m.ln.gamma.data, m.ln.beta.data).T.reshape(c, h, w)
    xc = np_omni(np_conv(xn, m.conv.weight.data), m.shift).reshape(c, -1).T
    kc = np.maximum(xc @ m.key.weight.data, 0) ** 2
    vc = kc @ m.value.weight.data
    rc = sigmoid(xc @ m.receptance.weight.data)
    return x + (rc * vc).T.reshape(c, h, w)


def _randomize(module, rng, scale=0.3):
    for p in module.parameters():
        p.data = p.data + scale * rng.normal(size=p.shape)


# -- token layout ---------------------------------------------------------------------


def test_tokens_are_raster_order(rng):
    g = rng.normal(size=(3, 2, 4))
    t = to_tokens(Value(g)).data
    assert t.shape == (8, 3)
    np.testing.assert_array_equal(t[5], g[:, 1, 1])
    np.testing.assert_array_equal(to_grid(Value(t), 2, 4).data, g)
    with pytest.raises(ValueError, match="token count"):
        to_grid(Value(t), 3, 3)


# -- CS-Shift -------------------------------------------------------------------------


def _shift_inputs(rng, c=3, h=8, w=8):
    return Value(rng.normal(size=(h * w, c))), Value(rng.normal(size=(h * w, c)))


def test_cs_shift_identity_weight_is_identity(rng):
    cs = CSShift(rng, 3)
    for o in (cs.img, cs.ev):
        o.branch_weights.data = np.array([1.0, 0, 0, 0])
    a, b = _shift_inputs(rng)
    out_a, out_b = cs(a, b, 8, 8)
    np.testing.assert_array_equal(out_a.data, a.data)
    np.testing.assert_array_equal(out_b.data, b.data)


def test_cs_shift_unit_pointwise_branch_is_identity(rng):
    cs = CSShift(rng, 3)
    for o in (cs.img, cs.ev):
        o.branch_weights.data = np.array([0.0, 1, 0, 0])
        o.convs[0].kernel.data = np.ones_like(o.convs[0].kernel.data)
    a, b = _shift_inputs(rng)
    out_a, out_b = cs(a, b, 8, 8)
    np.testing.assert_allclose(out_a.data, a.data, rtol=0, atol=1e-15)
    np.testing.assert_allclose(out_b.data, b.data, rtol=0, atol=1e-15)


def test_cs_shift_random_weights_equal_sum_of_branches(rng):
    cs = CSShift(rng, 3)
    for o in (cs.img, cs.ev):
        o.branch_weights.data = rng.normal(size=4)
    a, b = _shift_inputs(rng)
    out_a, out_b = cs(a, b, 8, 8)
    ga = a.data.T.reshape(3, 8, 8)
    gb = b.data.T.reshape(3, 8, 8)
    ref_a = np_omni(ga, cs.img).reshape(3, -1).T
    ref_b = np_omni(gb, cs.ev).reshape(3, -1).T
    assert np.max(np.abs(out_a.data - ref_a)) < 1e-12
    assert np.max(np.abs(out_b.data - ref_b)) < 1e-12


def test_cs_shift_cross_adds_other_modality_branches(rng):
    cs = CSShift(rng, 2, cross=True)
    a, b = _shift_inputs(rng, c=2, h=4, w=4)
    out_a, _ = cs(a, b, 4, 4)
    ga, gb = a.data.T.reshape(2, 4, 4), b.data.T.reshape(2, 4, 4)
    # event branches (event kernels) weighted by the image weights
    w = cs.img.branch_weights.data
    ev_branches = w[0] * gb + sum(w[i + 1] * np_depthwise(gb, conv.kernel.data) for i, conv in enumerate(cs.ev.convs))
    ref = (np_omni(ga, cs.img) + ev_branches).reshape(2, -1).T
    assert np.max(np.abs(out_a.data - ref)) < 1e-12


def test_cs_shift_rejects_bad_token_count_and_mismatch(rng):
    cs = CSShift(rng, 3)
    a, b = _shift_inputs(rng)
    with pytest.raises(ValueError, match="token count"):
        cs(a, b, 8, 7)
    with pytest.raises(ValueError, match="share shape"):
        cs(a, Value(rng.normal(size=(64, 2))), 8, 8)


def test_omnishift_gradients(rng):
    shift = OmniShift(rng, 2)
    shift.branch_weights.data = rng.normal(size=4)
    x = Value(rng.normal(size=(2, 5, 5)), requires_grad=True)
    params = dict(shift.named_parameters(), x=x)
    assert_gradients(lambda p: shift(x), params, rng)


# -- Spatial Mix ----------------------------------------------------------------------


def test_spatial_mix_zero_alpha_is_even_blend(rng):
    m = SpatialMix(rng, 3)
    x_img, x_ev = Value(rng.normal(size=(3, 4, 4))), Value(rng.normal(size=(3, 4, 4)))
    out = m.mix(x_img, x_ev)
    expected = 0.5 * out["wkv_img"].data + 0.5 * out["t_ev"].data
    np.testing.assert_array_equal(out["x1"].data, expected)


def test_spatial_mix_gate_saturates(rng):
    m = SpatialMix(rng, 3)
    x_img, x_ev = Value(rng.normal(size=(3, 4, 4))), Value(rng.normal(size=(3, 4, 4)))
    m.alpha_img.data[:] = 50.0
    out = m.mix(x_img, x_ev)
    np.testing.assert_allclose(out["x1"].data, out["wkv_img"].data, atol=1e-12)
    m.alpha_img.data[:] = -50.0
    out = m.mix(x_img, x_ev)
    np.testing.assert_allclose(out["x1"].data, out["t_ev"].data, atol=1e-12)


def test_spatial_mix_fused_state_lies_between_sources(rng):
    m = SpatialMix(rng, 4)
    m.alpha_img.data = rng.normal(size=4) * 3
    out = m.mix(Value(rng.normal(size=(4, 4, 4))), Value(rng.normal(size=(4, 4, 4))))
    a, b, x1 = out["wkv_img"].data, out["t_ev"].data, out["x1"].data
    lo, hi = np.minimum(a, b), np.maximum(a, b)
    assert np.all(x1 >= lo - 1e-12) and np.all(x1 <= hi + 1e-12)


def test_spatial_mix_matches_straight_line_transcription(rng):
    m = SpatialMix(rng, 3)
    _randomize(m, rng)
    x_img, x_ev = rng.normal(size=(3, 4, 4)), rng.normal(size=(3, 4, 4))
    got_img, got_ev = m(Value(x_img), Value(x_ev))
    ref_img, ref_ev = np_spatial_mix(m, x_img, x_ev)
    assert np.max(np.abs(got_img.data - ref_img)) < 1e-10
    assert np.max(np.abs(got_ev.data - ref_ev)) < 1e-10


def test_spatial_mix_keys_are_exchanged(rng):
    # perturbing only the event keys changes the image stream's WKV output
    m = SpatialMix(rng, 2)
    x_img, x_ev = Value(rng.normal(size=(2, 4, 4))), Value(rng.normal(size=(2, 4, 4)))
    base = m.mix(x_img, x_ev)["wkv_img"].data
    m.key_ev.pointwise.weight.data = m.key_ev.pointwise.weight.data * 3.0
    moved = m.mix(x_img, x_ev)["wkv_img"].data
    assert np.max(np.abs(moved - base)) > 1e-6


def test_spatial_mix_without_residual(rng):
    m = SpatialMix(rng, 2, residual=False)
    x_img, x_ev = Value(rng.normal(size=(2, 4, 4))), Value(rng.normal(size=(2, 4, 4)))
    o_img, _ = m(x_img, x_ev)
    np.testing.assert_allclose(o_img.data, to_grid(m.mix(x_img, x_ev)["o_img"], 4, 4).data)


# -- Channel Mix ----------------------------------------------------------------------


def test_channel_mix_matches_straight_line_transcription(rng):
    m = ChannelMix(rng, 3)
    _randomize(m, rng)
    x = rng.normal(size=(3, 4, 4))
    assert np.max(np.abs(m(Value(x)).data - np_channel_mix(m, x))) < 1e-12


def test_channel_mix_negative_keys_leave_residual_only(rng):
    m = ChannelMix(rng, 3)
    # the normalised input becomes the constant 1 and passes the conv/shift unchanged
    m.ln.gamma.data, m.ln.beta.data = np.zeros(3), np.ones(3)
    m.conv.weight.data = np.eye(3)[:, :, None, None]
    m.shift.branch_weights.data = np.array([1.0, 0, 0, 0])
    m.key.weight.data = -np.abs(m.key.weight.data) - 0.1
    x = rng.normal(size=(3, 4, 4))
    np.testing.assert_array_equal(m(Value(x)).data, x)


def test_channel_mix_zero_input(rng):
    m = ChannelMix(rng, 3)
    out = m(Value(np.zeros((3, 4, 4))))
    np.testing.assert_array_equal(out.data, np.zeros((3, 4, 4)))


# -- block and U-Net ------------------------------------------------------------------


def test_block_ablations_are_identity(rng):
    blk = CrossRWKVBlock(rng, 2, spatial_mix=False, channel_mix=False)
    a, b = Value(rng.normal(size=(2, 4, 4))), Value(rng.normal(size=(2, 4, 4)))
    o_a, o_b = blk(a, b)
    assert o_a is a and o_b is b
    assert blk.named_parameters() == {}


def test_block_gradients_reach_every_parameter(rng):
    blk = CrossRWKVBlock(rng, 2, hidden_ratio=2)
    _randomize(blk, rng, 0.2)
    x_img = Value(rng.normal(size=(2, 4, 4)), requires_grad=True)
    x_ev = Value(rng.normal(size=(2, 4, 4)), requires_grad=True)

    def fn(p):
        a, b = blk(x_img, x_ev)
        return a * 1.3 + b * 0.7

    params = dict(blk.named_parameters(), x_img=x_img, x_ev=x_ev)
    report = assert_gradients(fn, params, rng, max_entries=4)
    assert set(report) == set(params)
    for name, p in blk.named_parameters().items():
        assert p.grad is not None and np.any(p.grad != 0), f"dead parameter {name}"


def test_unet_shapes_and_divisibility(rng):
    net = CrossUNet(rng, 2, hidden_ratio=2)
    o_img, o_ev = net(rng.normal(size=(2, 8, 16)), rng.normal(size=(2, 8, 16)))
    assert o_img.shape == (2, 8, 16) and o_ev.shape == (2, 8, 16)
    with pytest.raises(ValueError, match="divisible by 8"):
        net(rng.normal(size=(2, 12, 16)), rng.normal(size=(2, 12, 16)))
    with pytest.raises(ValueError, match="multipliers"):
        CrossUNet(rng, 2, levels=3)


def test_unet_zero_input_gives_zero_output(rng):
    # every bias starts at zero and each mix of zero features is zero
    net = CrossUNet(rng, 2, hidden_ratio=2)
    o_img, o_ev = net(np.zeros((2, 8, 8)), np.zeros((2, 8, 8)))
    assert np.all(o_img.data == 0) and np.all(o_ev.data == 0)


def test_unet_gradients(rng):
    net = CrossUNet(rng, 2, hidden_ratio=2)
    _randomize(net, rng, 0.1)
    x_img = Value(rng.normal(size=(2, 8, 8)), requires_grad=True)
    x_ev = Value(rng.normal(size=(2, 8, 8)), requires_grad=True)

    def fn(p):
        a, b = net(x_img, x_ev)
        return a + 2.0 * b

    params = {"x_img": x_img, "x_ev": x_ev, **{k: v for k, v in net.named_parameters().items()
                                             if k.startswith(("down_img.0", "up_ev.1", "bottleneck", "split"))}}
    # deep composition: a wider step keeps round-off below the tolerance
    assert_gradients(fn, params, rng, max_entries=3, h=1e-4)


# -- parameter ledger -----------------------------------------------------------------


def _conv(i, o, k, bias=True):
    return o * i * k * k + (o if bias else 0)


def _block(c, r=4):
    omni = 4 + 35 * c  # branch weights + 1x1, 3x3, 5x5 depthwise
    spatial = (2 * 2 * c  # two layer norms
               + 2 * omni  # CS-Shift
               + 2 * (9 * c + c * c)  # depthwise-pointwise keys
               + 3 * 2 * c * c  # value, receptance, output per modality
               + 2 * 4 * c  # two Re-WKV, each with two (w, u) pairs
               + 2 * c)  # gates
    channel = 2 * c + c * c + omni + 2 * r * c * c + c * c
    return spatial + channel


def _ledger(c, bins=32):
    ch = [c, 2 * c, 4 * c, 8 * c]
    unet = 2 * sum(_block(x) for x in ch[:3]) + _block(ch[3]) + _conv(2 * c, 2 * c, 3)
    for i in range(3):
        unet += 2 * _conv(ch[i], ch[i + 1], 3) + 2 * (4 * ch[i + 1] * ch[i] + ch[i]) + 2 * _conv(2 * ch[i], ch[i], 1)
    hidden = c // 4
    eisfe = (2 * _conv(3 * c, c, 1) + c + _conv(c, 18, 3) + 9 * c * c + c + 2 * _conv(2, 1, 7)
             + 2 * c * hidden + hidden + c)
    stems = _conv(4, 1, 3) + _conv(3, c, 3) + _conv(c, c, 3) + _conv(bins, c, 3) + _conv(c, c, 3)
    head = _conv(c, c, 1) + 16 * c * c + c + _conv(c, 3, 1)
    return stems + unet + eisfe + head


def test_parameter_count_matches_hand_ledger():
    assert _ledger(16) == 869_704
    assert EvRWKV(RunConfig()).num_parameters() == 869_704
    assert EvRWKV(RunConfig(channels=8, bins=8)).num_parameters() == _ledger(8, bins=8)
