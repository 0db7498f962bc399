import numpy as np
import pytest

from streamduct.encoder import ConfigError, EncoderConfig, build_encoder, encode
from streamduct.layers import Mode
from streamduct.tensor import ShapeMismatchError, Tensor


def contextnet_expected_params(cfg):
    """Closed-form parameter count from the documented layer stack."""
    c, k, d = cfg.channels, cfg.kernel_size, cfg.feature_dim
    bottleneck = c // 2
    input_proj = d * c + c
    time_reduce = (2 * cfg.stride - 1) * c + c
    dw = k * c + c
    pw = c * c + c
    norm = 2 * (c + c)  # two per-mode gamma/beta sets
    se = (c * bottleneck + bottleneck) + (bottleneck * c + c)
    per_block = dw + 3 * pw + norm + se
    return input_proj + time_reduce + cfg.blocks * per_block


def test_contextnet_parameter_count_closed_form():
    cfg = EncoderConfig(architecture="contextnet_lite", blocks=2, channels=16, kernel_size=5)
    enc = build_encoder(cfg, seed=0)
    assert enc.param_count() == contextnet_expected_params(cfg)


def test_same_seed_identical_parameters():
    cfg = EncoderConfig()
    a = build_encoder(cfg, seed=7)
    b = build_encoder(cfg, seed=7)
    for (na, pa), (nb, pb) in zip(a.params().items(), b.params().items()):
        assert na == nb
        np.testing.assert_array_equal(pa.data, pb.data)


def test_even_kernel_rejected():
    with pytest.raises(ConfigError) as exc:
        build_encoder(EncoderConfig(kernel_size=4))
    assert "kernel_size" in str(exc.value)


def test_bad_architecture_rejected():
    with pytest.raises(ConfigError) as exc:
        build_encoder(EncoderConfig(architecture="lstm"))
    assert "architecture" in str(exc.value)


def test_feature_dim_mismatch():
    enc = build_encoder(EncoderConfig(feature_dim=8), seed=0)
    with pytest.raises(ShapeMismatchError):
        encode(enc, np.zeros((10, 5)), Mode.STREAMING)


def test_length_arithmetic():
    cfg = EncoderConfig(stride=3, feature_dim=4)
    enc = build_encoder(cfg, seed=1)
    out = encode(enc, np.random.default_rng(0).normal(size=(3, 4)), Mode.STREAMING)
    assert out.length == 1
    out = encode(enc, np.random.default_rng(0).normal(size=(7, 4)), Mode.STREAMING)
    assert out.length == int(np.ceil(7 / 3))


@pytest.mark.parametrize("arch", ["contextnet_lite", "conformer_lite"])
def test_modes_differ_on_random_input(arch):
    cfg = EncoderConfig(architecture=arch, blocks=1, channels=8, feature_dim=4, heads=2)
    enc = build_encoder(cfg, seed=2)
    x = np.random.default_rng(3).normal(size=(9, 4))
    s = encode(enc, x, Mode.STREAMING).hidden.data
    f = encode(enc, x, Mode.FULL_CONTEXT).hidden.data
    assert np.max(np.abs(s - f)) > 0


@pytest.mark.parametrize("arch", ["contextnet_lite", "conformer_lite"])
def test_streaming_prefix_invariance(arch):
    rng = np.random.default_rng(4)
    cfg = EncoderConfig(architecture=arch, blocks=2, channels=8, feature_dim=4, heads=2, stride=2)
    enc = build_encoder(cfg, seed=5)
    for _ in range(20):
        t_len = int(rng.integers(4, 16))
        x = rng.normal(size=(t_len, 4))
        cut = int(rng.integers(1, t_len))
        base = encode(enc, x, Mode.STREAMING).hidden.data
        pert = x.copy()
        pert[cut:] += rng.normal(size=(t_len - cut, 4)) * 10
        out = encode(enc, pert, Mode.STREAMING).hidden.data
        # reduced frames covering source frames <= cut must be unchanged
        safe = cut // enc.stride_total
        if safe:
            assert np.max(np.abs(out[:safe] - base[:safe])) <= 1e-9


def test_unshared_fraction_below_five_percent_default_contextnet():
    # Count both per-mode gamma/beta sets as unshared, plus the future taps.
    cfg = EncoderConfig(architecture="contextnet_lite")
    enc = build_encoder(cfg, seed=6)
    unshared = enc.extra_future_tap_count() + 2 * enc.norm_duplicate_count()
    assert unshared / enc.param_count() < 0.05


def test_causal_only_variant_differs_by_taps_and_norm_duplicates():
    for arch in ("contextnet_lite", "conformer_lite"):
        cfg = EncoderConfig(architecture=arch, blocks=2, channels=16, heads=2)
        dual = build_encoder(cfg, seed=7)
        causal = build_encoder(EncoderConfig(**{**cfg.__dict__, "causal_only": True}), seed=7)
        diff = dual.param_count() - causal.param_count()
        assert diff == dual.extra_future_tap_count() + dual.norm_duplicate_count()


def test_causal_only_rejects_full_context():
    enc = build_encoder(EncoderConfig(causal_only=True, feature_dim=4), seed=8)
    with pytest.raises(ValueError):
        encode(enc, np.zeros((4, 4)), Mode.FULL_CONTEXT)
