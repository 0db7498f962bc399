import numpy as np
import pytest

from streamduct import tensor as T
from streamduct.layers import (
    DualAvgPool,
    DualConv1D,
    DualNorm,
    DualSelfAttention,
    Mode,
    SEBlock,
    dual_avg_pool_forward,
)
from streamduct.tensor import Tensor


def direct_conv_sum(x, taps, offsets):
    """Independent convolution oracle: y[t] = sum_j taps[j] * x[t + offsets[j]]."""
    t_len = len(x)
    out = np.zeros(t_len)
    for t in range(t_len):
        acc = 0.0
        for w, off in zip(taps, offsets):
            src = t + off
            if 0 <= src < t_len:
                acc += w * x[src]
        out[t] = acc
    return out


def make_single_channel_conv(weights, depthwise=False):
    k = len(weights)
    rng = np.random.default_rng(0)
    layer = DualConv1D(1, 1, k, rng, depthwise=depthwise)
    shape = (k, 1) if depthwise else (k, 1, 1)
    layer.kernel = Tensor(np.asarray(weights, dtype=np.float64).reshape(shape), requires_grad=True)
    layer.bias = Tensor(np.zeros(1), requires_grad=True)
    return layer


@pytest.mark.parametrize("depthwise", [False, True])
def test_dual_conv_hand_case(depthwise):
    layer = make_single_channel_conv([1.0, 1.0, 1.0], depthwise=depthwise)
    x = Tensor(np.array([1.0, 2.0, 3.0, 4.0])[:, None])

    full = layer(x, Mode.FULL_CONTEXT).data[:, 0]
    expect_full = direct_conv_sum([1, 2, 3, 4], [1, 1, 1], [-1, 0, 1])
    np.testing.assert_allclose(full, expect_full)
    np.testing.assert_allclose(full, [3, 6, 9, 7])

    stream = layer(x, Mode.STREAMING).data[:, 0]
    expect_stream = direct_conv_sum([1, 2, 3, 4], [1, 1], [-1, 0])
    np.testing.assert_allclose(stream, expect_stream)
    np.testing.assert_allclose(stream, [1, 3, 5, 7])


def test_dual_conv_zero_input_gives_zero_output():
    layer = make_single_channel_conv([0.3, -0.7, 1.1])
    x = Tensor(np.zeros((5, 1)))
    for mode in Mode:
        np.testing.assert_array_equal(layer(x, mode).data, np.zeros((5, 1)))


@pytest.mark.parametrize("k", [3, 5, 7])
@pytest.mark.parametrize("depthwise", [False, True])
def test_streaming_conv_equals_standalone_causal_conv(k, depthwise):
    rng = np.random.default_rng(k)
    c = 3
    layer = DualConv1D(c, c, k, rng, depthwise=depthwise)
    x = Tensor(rng.normal(size=(9, c)))
    streamed = layer(x, Mode.STREAMING).data
    sliced = layer.causal_slice_forward(x).data
    assert np.max(np.abs(streamed - sliced)) <= 1e-12

    # Standalone causal convolution built from the left (k+1)/2 taps.
    kc = (k + 1) // 2
    standalone = DualConv1D(c, c, 2 * kc - 1, rng, depthwise=depthwise, causal_only=True)
    standalone.kernel = Tensor(layer.kernel.data[:kc].copy(), requires_grad=True)
    standalone.bias = layer.bias
    np.testing.assert_allclose(standalone(x, Mode.STREAMING).data, streamed, atol=1e-12)


def test_dual_conv_stream_mask_shape():
    layer = DualConv1D(2, 4, 5, np.random.default_rng(1))
    flat = layer.stream_mask.reshape(5, -1)[:, 0]
    np.testing.assert_array_equal(flat, [1, 1, 1, 0, 0])


def test_dual_conv_rejects_channel_mismatch():
    layer = DualConv1D(2, 2, 3, np.random.default_rng(2))
    with pytest.raises(T.ShapeMismatchError):
        layer(Tensor(np.zeros((4, 3))), Mode.STREAMING)


def test_avg_pool_hand_case():
    x = Tensor(np.array([2.0, 4.0, 6.0])[:, None])
    stream = dual_avg_pool_forward(x, Mode.STREAMING).data[:, 0]
    prefix = np.cumsum([2.0, 4.0, 6.0]) / np.arange(1, 4)
    np.testing.assert_allclose(stream, prefix)
    np.testing.assert_allclose(stream, [2.0, 3.0, 4.0])
    full = dual_avg_pool_forward(x, Mode.FULL_CONTEXT).data[:, 0]
    np.testing.assert_allclose(full, [4.0, 4.0, 4.0])


def test_avg_pool_single_frame_is_identity():
    x = Tensor(np.array([[1.5, -2.0]]))
    for mode in Mode:
        np.testing.assert_allclose(dual_avg_pool_forward(x, mode).data, x.data)


def test_avg_pool_prefix_consistency():
    rng = np.random.default_rng(3)
    x = Tensor(rng.normal(size=(11, 4)))
    stream_last = dual_avg_pool_forward(x, Mode.STREAMING).data[-1]
    full = dual_avg_pool_forward(x, Mode.FULL_CONTEXT).data[0]
    np.testing.assert_allclose(stream_last, full, atol=1e-9)


def test_attention_single_key_softmax_is_identity_weight():
    rng = np.random.default_rng(4)
    attn = DualSelfAttention(4, 1, rng)
    x = Tensor(rng.normal(size=(3, 4)))
    out = attn(x, Mode.STREAMING)
    # Row 1 sees only itself: output equals output-projected value row 1.
    v1 = attn.wv(x).data[0]
    expected = v1 @ attn.wo.weight.data + attn.wo.bias.data
    np.testing.assert_allclose(out.data[0], expected, atol=1e-12)


def test_attention_uniform_weights_for_identical_keys():
    rng = np.random.default_rng(5)
    attn = DualSelfAttention(4, 2, rng)
    row = rng.normal(size=4)
    x = Tensor(np.tile(row, (5, 1)))
    out_full = attn(x, Mode.FULL_CONTEXT).data
    # With identical rows every attention weight is 1/T; all outputs equal.
    np.testing.assert_allclose(out_full, np.tile(out_full[0], (5, 1)), atol=1e-12)


def test_attention_streaming_ignores_future():
    rng = np.random.default_rng(6)
    attn = DualSelfAttention(6, 2, rng)
    x = rng.normal(size=(7, 6))
    t = 4
    base = attn(Tensor(x), Mode.STREAMING).data
    perturbed = x.copy()
    perturbed[t:] += rng.normal(size=(7 - t, 6)) * 10
    pert = attn(Tensor(perturbed), Mode.STREAMING).data
    np.testing.assert_allclose(pert[:t], base[:t], atol=1e-12)


def test_attention_rejects_dim_mismatch():
    attn = DualSelfAttention(4, 2, np.random.default_rng(7))
    with pytest.raises(T.ShapeMismatchError):
        attn(Tensor(np.zeros((3, 5))), Mode.STREAMING)


@pytest.mark.parametrize("kind", ["layer", "batch"])
def test_norm_identity_on_standardized_input(kind):
    rng = np.random.default_rng(8)
    raw = rng.normal(size=(6, 5))
    axis = 1 if kind == "layer" else 0
    std = (raw - raw.mean(axis=axis, keepdims=True)) / raw.std(axis=axis, keepdims=True)
    norm = DualNorm(5, kind=kind)
    out = norm(Tensor(std), Mode.STREAMING, training=True).data
    np.testing.assert_allclose(out, std, atol=1e-4)


def test_norm_gamma_zero_outputs_beta():
    norm = DualNorm(3, kind="layer")
    norm.gamma[Mode.STREAMING] = Tensor(np.zeros(3), requires_grad=True)
    norm.beta[Mode.STREAMING] = Tensor(np.array([1.0, 2.0, 3.0]), requires_grad=True)
    out = norm(Tensor(np.random.default_rng(9).normal(size=(4, 3))), Mode.STREAMING).data
    np.testing.assert_allclose(out, np.tile([1.0, 2.0, 3.0], (4, 1)))


def test_batch_norm_mode_isolation():
    norm = DualNorm(4, kind="batch")
    before_mean = norm.running_mean[Mode.FULL_CONTEXT].copy()
    before_var = norm.running_var[Mode.FULL_CONTEXT].copy()
    x = Tensor(np.random.default_rng(10).normal(size=(8, 4)) + 3.0)
    norm(x, Mode.STREAMING, training=True)
    np.testing.assert_array_equal(norm.running_mean[Mode.FULL_CONTEXT], before_mean)
    np.testing.assert_array_equal(norm.running_var[Mode.FULL_CONTEXT], before_var)
    assert not np.array_equal(norm.running_mean[Mode.STREAMING], np.zeros(4))


def test_se_block_saturated_gates():
    rng = np.random.default_rng(11)
    se = SEBlock(4, 2, rng)
    x = Tensor(rng.normal(size=(5, 4)))

    se.ff2.bias = Tensor(np.full(4, 50.0), requires_grad=True)
    np.testing.assert_allclose(se(x, Mode.STREAMING).data, x.data, atol=1e-6)

    se.ff2.bias = Tensor(np.full(4, -50.0), requires_grad=True)
    np.testing.assert_allclose(se(x, Mode.FULL_CONTEXT).data, np.zeros((5, 4)), atol=1e-6)


def test_se_block_streaming_causal():
    rng = np.random.default_rng(12)
    se = SEBlock(3, 2, rng)
    x = rng.normal(size=(6, 3))
    t = 3
    base = se(Tensor(x), Mode.STREAMING).data
    perturbed = x.copy()
    perturbed[t:] = rng.normal(size=(3, 3)) * 7
    pert = se(Tensor(perturbed), Mode.STREAMING).data
    np.testing.assert_allclose(pert[:t], base[:t], atol=1e-12)


def layer_cases(rng):
    conv = DualConv1D(3, 3, 5, rng)
    dconv = DualConv1D(3, 3, 5, rng, depthwise=True)
    pool = DualAvgPool()
    attn = DualSelfAttention(3, 1, rng)
    se = SEBlock(3, 2, rng)
    norm = DualNorm(3, kind="layer")
    return [
        ("conv", lambda x: conv(x, Mode.STREAMING)),
        ("depthwise_conv", lambda x: dconv(x, Mode.STREAMING)),
        ("pool", lambda x: pool(x, Mode.STREAMING)),
        ("attention", lambda x: attn(x, Mode.STREAMING)),
        ("se", lambda x: se(x, Mode.STREAMING)),
        ("norm", lambda x: norm(x, Mode.STREAMING)),
    ]


def test_streaming_causality_randomized():
    rng = np.random.default_rng(13)
    for name, fwd in layer_cases(rng):
        for _ in range(20):
            t_len = int(rng.integers(2, 10))
            x = rng.normal(size=(t_len, 3))
            cut = int(rng.integers(1, t_len))
            base = fwd(Tensor(x)).data
            perturbed = x.copy()
            perturbed[cut:] += rng.normal(size=(t_len - cut, 3)) * rng.uniform(0.1, 20)
            pert = fwd(Tensor(perturbed)).data
            assert np.max(np.abs(pert[:cut] - base[:cut])) <= 1e-12, name


def test_dual_layer_parameter_accounting():
    rng = np.random.default_rng(14)
    k = 5
    dual = DualConv1D(4, 4, k, rng, depthwise=True)
    causal = DualConv1D(4, 4, k, rng, depthwise=True, causal_only=True)
    dual_n = sum(p.data.size for p in dual.params().values())
    causal_n = sum(p.data.size for p in causal.params().values())
    assert dual_n - causal_n == (k - 1) // 2 * 4  # extra future taps only

    # Attention and SE add nothing per mode; DualNorm duplicates gamma/beta.
    norm = DualNorm(6, kind="layer")
    single = DualNorm(6, kind="layer", modes=(Mode.STREAMING,))
    assert sum(p.data.size for p in norm.params().values()) == 2 * sum(
        p.data.size for p in single.params().values()
    )


def test_gradients_flow_through_dual_layers():
    rng = np.random.default_rng(15)
    conv = DualConv1D(2, 2, 3, rng)
    attn = DualSelfAttention(2, 1, rng)

    def f(x):
        h = conv(x, Mode.STREAMING)
        h = attn(h, Mode.STREAMING)
        return T.reduce_sum(h * h)

    x = Tensor(rng.normal(size=(5, 2)), requires_grad=True)
    loss = f(x)
    loss.backward()
    fd = T.finite_difference_gradient(f, x)
    denom = np.linalg.norm(x.grad) + np.linalg.norm(fd)
    assert np.linalg.norm(x.grad - fd) / denom < 1e-5
