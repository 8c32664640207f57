import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from defian.autograd import DiffNode, backward, default_dtype, mean, mul
from defian.config import ModelConfig, defian_l, defian_s
from defian.model import FEM, RCAB, DeFiAM, build_model, count_flops, count_params, count_params_for

from test_nn import loop_conv


def micro(**kw):
    base = dict(n_modules=1, n_blocks=1, channels=4, scale=2)
    base.update(kw)
    return ModelConfig(**base)


def test_rcab_zero_convs_is_identity():
    block = RCAB(8, np.random.default_rng(0))
    for conv in (block.conv1, block.conv2):
        conv.weight.value[...] = 0
        conv.bias.value[...] = 0
    x = np.random.default_rng(1).standard_normal((2, 8, 5, 5)).astype(np.float32)
    np.testing.assert_array_equal(block(x).value, x)


def test_channel_attention_in_open_unit_interval():
    block = RCAB(16, np.random.default_rng(0))
    ca = block.channel_attention(np.random.default_rng(1).standard_normal((3, 16, 4, 4)) * 10)
    assert np.all((ca.value > 0) & (ca.value < 1))


def test_rcab_matches_composed_oracles():
    rng = np.random.default_rng(2)
    block = RCAB(16, rng)
    x = rng.standard_normal((1, 16, 5, 5))
    with default_dtype(np.float64):
        got = block(x).value
    w1, b1 = block.conv1.weight.value.astype(float), block.conv1.bias.value.astype(float)
    w2, b2 = block.conv2.weight.value.astype(float), block.conv2.bias.value.astype(float)
    fe = loop_conv(np.maximum(loop_conv(x, w1, b1, 1, 1), 0), w2, b2, 1, 1)
    pooled = [sum(fe[0, c].ravel()) / 25 for c in range(16)]
    f1, f2 = block.ca_fc1, block.ca_fc2
    hidden = [max(0.0, sum(f1.weight.value[o, i] * pooled[i] for i in range(16)) + f1.bias.value[o]) for o in range(1)]
    ca = [1 / (1 + np.exp(-(sum(f2.weight.value[o, i] * hidden[i] for i in range(1)) + f2.bias.value[o]))) for o in range(16)]
    ref = x + fe * np.array(ca)[None, :, None, None]
    assert np.max(np.abs(got - ref)) <= 1e-5


def test_rcab_channel_mismatch():
    with pytest.raises(ValueError, match="channels"):
        RCAB(8, np.random.default_rng(0))(np.ones((1, 4, 5, 5)))


def test_fem_compositions():
    rng = np.random.default_rng(3)
    x = rng.standard_normal((1, 4, 6, 6)).astype(np.float32)
    np.testing.assert_array_equal(FEM(4, 0, rng)(x).value, x)
    one = FEM(4, 1, rng)
    np.testing.assert_array_equal(one(x).value, one.blocks[0](x).value)
    three = FEM(4, 3, rng)
    manual = three.blocks[2](three.blocks[1](three.blocks[0](x)))
    np.testing.assert_array_equal(three(x).value, manual.value)


@pytest.fixture
def module():
    return DeFiAM(micro(channels=8), np.random.default_rng(4))


def test_forced_unit_attention_is_plain_residual(module):
    x = np.random.default_rng(5).standard_normal((2, 8, 9, 9)).astype(np.float32)
    expected = x + module.fem(x).value
    np.testing.assert_array_equal(module(x, attention=1.0).value, expected)


def test_zero_attention_suppresses_residual(module):
    x = np.random.default_rng(6).standard_normal((1, 8, 9, 9)).astype(np.float32)
    np.testing.assert_array_equal(module(x, attention=0.0).value, x)


def test_attention_shape_and_range(module):
    x = np.random.default_rng(7).standard_normal((2, 8, 9, 9)).astype(np.float32)
    a = module.attention(module.fem(x), DiffNode(x)).value
    assert a.shape == x.shape
    assert np.all((a >= 0) & (a <= 1))
    assert module(x).shape == x.shape


@pytest.mark.parametrize("flags", list(itertools.product([False, True], repeat=3)))
def test_ablation_variants_run(flags):
    cfg = micro(channels=8, use_mshf=flags[0], use_diendec=flags[1], use_dac=flags[2])
    m = DeFiAM(cfg, np.random.default_rng(8))
    x = np.random.default_rng(9).standard_normal((1, 8, 9, 9)).astype(np.float32)
    y = m(x)
    assert y.shape == x.shape and np.all(np.isfinite(y.value))
    if not any(flags):
        np.testing.assert_array_equal(y.value, x + m.fem(x).value)


@pytest.mark.parametrize("s", [2, 3, 4])
@pytest.mark.parametrize("size", [8, 24])
def test_output_dims(s, size):
    model = build_model(micro(scale=s))
    out = model(np.random.default_rng(0).random((1, 3, size, size)).astype(np.float32))
    assert out.shape == (1, 3, s * size, s * size)


def test_zero_parameters_output_rgb_mean():
    cfg = micro()
    model = build_model(cfg)
    for p in model.parameters():
        p.value[...] = 0
    out = model(np.random.default_rng(0).random((2, 3, 8, 8)).astype(np.float32)).value
    expected = np.broadcast_to(np.asarray(cfg.rgb_mean, np.float32)[None, :, None, None], out.shape)
    np.testing.assert_array_equal(out, expected)


def test_forward_deterministic():
    model = build_model(micro())
    x = np.random.default_rng(1).random((1, 3, 10, 10)).astype(np.float32)
    np.testing.assert_array_equal(model(x).value, model(x).value)
    np.testing.assert_array_equal(build_model(micro(), seed=0)(x).value, model(x).value)


def test_non_rgb_input_rejected():
    with pytest.raises(ValueError, match="RGB"):
        build_model(micro())(np.ones((1, 4, 8, 8)))


@settings(max_examples=25, deadline=None)
@given(
    c=st.sampled_from([4, 8, 16, 32]),
    n=st.integers(1, 2),
    m=st.integers(0, 2),
    s=st.sampled_from([2, 3, 4]),
    flags=st.tuples(st.booleans(), st.booleans(), st.booleans()),
    scales=st.sampled_from([(3,), (3, 5), (3, 5, 7), (5, 7)]),
)
def test_param_count_matches_analytic(c, n, m, s, flags, scales):
    cfg = ModelConfig(n_modules=n, n_blocks=m, channels=c, scale=s, mshf_scales=scales,
                      use_mshf=flags[0], use_diendec=flags[1], use_dac=flags[2])
    assert count_params(build_model(cfg)) == count_params_for(cfg)


def test_presets():
    assert (defian_s().n_modules, defian_s().n_blocks, defian_s().channels) == (5, 10, 32)
    assert (defian_l().n_modules, defian_l().n_blocks, defian_l().channels) == (10, 20, 64)


def test_flops_of_single_conv_definition():
    from defian.nn import Conv2d, ConvSpec

    conv = Conv2d(ConvSpec(3, 16, 16), np.random.default_rng(0))
    assert conv.macs(12, 20) == 16 * 16 * 9 * 12 * 20


def test_flops_scale_with_image_area():
    model = build_model(micro(channels=8))
    from defian.nn import Linear

    # fully connected layers act on pooled vectors, so only they ignore the image size
    fc = sum(m.macs() for m in model.modules() if isinstance(m, Linear))
    a = count_flops(model, (48, 64))
    b = count_flops(model, (96, 128))
    assert b - fc == 4 * (a - fc)


def model_grad_check(dtype, rtol, atol, eps=1e-6, seed=11):
    """Autodiff gradients of the micro network at ``dtype`` against float64 central differences.

    The differences are always taken in float64 so that, at float32, the
    check measures the accuracy of the float32 backward pass rather than the
    round-off of a float32 difference quotient.
    """
    rng = np.random.default_rng(seed + 1)
    x = rng.random((1, 3, 8, 8))
    probe = rng.standard_normal((1, 3, 16, 16))
    with default_dtype(dtype):
        model = build_model(micro(), seed=seed)
        backward(mean(mul(model(x.astype(dtype)), probe.astype(dtype))))
    with default_dtype(np.float64):
        ref = build_model(micro(), seed=seed)
        ref.load_state(model.named_state())
        loss = lambda: float(mean(mul(ref(x), probe)).value)  # noqa: E731
        ref_params = dict(ref.named_parameters())
        worst = 0.0
        for name, p in model.named_parameters():
            flat = ref_params[name].value.reshape(-1)
            for idx in rng.choice(flat.size, size=min(2, flat.size), replace=False):
                orig = flat[idx]
                flat[idx] = orig + eps
                up = loss()
                flat[idx] = orig - eps
                down = loss()
                flat[idx] = orig
                numeric = (up - down) / (2 * eps)
                analytic = float(p.grad.reshape(-1)[idx])
                err = abs(numeric - analytic)
                assert err <= atol + rtol * max(abs(numeric), abs(analytic)), (name, analytic, numeric)
                worst = max(worst, err / max(abs(numeric), abs(analytic), 1e-12))
    return worst


def test_end_to_end_gradients_float64():
    model_grad_check(np.float64, rtol=1e-4, atol=1e-9)


def test_end_to_end_gradients_float32():
    model_grad_check(np.float32, rtol=1e-2, atol=1e-6)
