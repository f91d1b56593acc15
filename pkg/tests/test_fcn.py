import numpy as np
import pytest

from reference import conv_oracle, finite_diff, pool_oracle

from arim import kernels
from arim.errors import ConfigError, FormatError, ShapeError, StateError
from arim.fcn import (
    ArchConfig,
    build_fcn,
    conv2d,
    leaky_relu,
    leaky_relu_grad,
    load_checkpoint,
    maxpool_2x1,
    save_checkpoint,
    vertical_collapse,
)
from arim.train import LossConfig, composite_loss

TINY = ArchConfig(
    input_frames=6, n_fft=16,
    block_channels=(2, 2, 2, 2),
    block_kernel_sizes=(3, 3, 3, 3),
    convs_per_block=(1, 1, 1, 2),
    pool_after_block=(True, True, True, False),
)


def test_arch_validation():
    with pytest.raises(ConfigError):
        ArchConfig(input_frames=6, n_fft=16, block_kernel_sizes=(4, 9, 5, 5))
    with pytest.raises(ConfigError):
        ArchConfig(input_frames=6, n_fft=16, capacity_scale=0.0)
    with pytest.raises(ConfigError):
        ArchConfig(input_frames=6, n_fft=16, convs_per_block=(3, 3, 2))


def test_default_arch_has_ten_convs_three_pools():
    cfg = ArchConfig(input_frames=154, n_fft=2048)
    assert cfg.n_convs == 10
    assert sum(cfg.pool_after_block) == 3
    shapes = cfg.conv_shapes()
    assert shapes[0] == (13, 3, 32)
    assert shapes[-1] == (1, 128, 3)  # final 1x1 onto 3 channels
    assert [s[0] for s in shapes] == [13, 13, 13, 9, 9, 9, 5, 5, 5, 1]


def test_half_capacity_rounds_channels_up():
    cfg = ArchConfig(input_frames=154, n_fft=2048, capacity_scale=0.5)
    assert cfg.scaled_channels() == (16, 32, 48, 64)
    odd = ArchConfig(input_frames=8, n_fft=16, block_channels=(3, 5, 7, 9),
                     capacity_scale=0.5)
    assert odd.scaled_channels() == (2, 3, 4, 5)


def test_parameter_count_formula():
    model = build_fcn(TINY, np.random.default_rng(0))
    expected = 0
    for k, ci, co in TINY.conv_shapes():
        expected += k * k * ci * co + co
    assert model.parameter_count == expected
    assert expected == sum(p.size for p in model.parameters)


def test_build_is_deterministic():
    a = build_fcn(TINY, np.random.default_rng(9))
    b = build_fcn(TINY, np.random.default_rng(9))
    for pa, pb in zip(a.parameters, b.parameters):
        np.testing.assert_array_equal(pa, pb)


def test_conv2d_identity_kernel(rng):
    x = rng.standard_normal((4, 6, 2))
    kernels_ = np.zeros((1, 1, 2, 2))
    kernels_[0, 0, 0, 0] = 1.0
    kernels_[0, 0, 1, 1] = 1.0
    out = conv2d(x, kernels_, np.zeros(2))
    np.testing.assert_allclose(out, x, atol=1e-14)


def test_conv2d_circular_wrap_at_column_zero():
    # 1x3 averaging kernel on a single-row ring: column 0 wraps to the end
    w = 5
    x = np.arange(w, dtype=float).reshape(1, w, 1)
    kernels_ = np.full((3, 3, 1, 1), 0.0)
    kernels_[1, :, 0, 0] = 1.0 / 3.0
    out = conv2d(x, kernels_, np.zeros(1))
    assert out[0, 0, 0] == pytest.approx((x[0, w - 1, 0] + x[0, 0, 0] + x[0, 1, 0]) / 3)
    assert out[0, 2, 0] == pytest.approx((1 + 2 + 3) / 3)


def test_conv2d_rejects_even_kernel(rng):
    with pytest.raises(ConfigError):
        conv2d(rng.standard_normal((4, 4, 1)), rng.standard_normal((2, 2, 1, 1)),
               np.zeros(1))


def test_conv2d_matches_bruteforce_oracle(rng):
    for _ in range(30):
        h = int(rng.integers(1, 9))
        w = int(rng.integers(1, 9))
        ci = int(rng.integers(1, 4))
        co = int(rng.integers(1, 4))
        k = int(rng.choice([1, 3, 5]))
        x = rng.standard_normal((h, w, ci))
        ker = rng.standard_normal((k, k, ci, co))
        b = rng.standard_normal(co)
        np.testing.assert_allclose(conv2d(x, ker, b), conv_oracle(x, ker, b), atol=1e-10)


def test_backends_agree(rng):
    x = rng.standard_normal((6, 8, 2))
    ker = rng.standard_normal((3, 3, 2, 4))
    b = rng.standard_normal(4)
    g = rng.standard_normal((6, 8, 4))
    np.testing.assert_allclose(
        kernels.conv2d_forward(x, ker, b), kernels.numpy_conv2d_forward(x, ker, b),
        atol=1e-12,
    )
    np.testing.assert_allclose(
        kernels.conv2d_grad_kernels(x, g, 3), kernels.numpy_conv2d_grad_kernels(x, g, 3),
        atol=1e-12,
    )


def test_maxpool_examples_and_exhaustive(rng):
    col = np.array([1.0, 3.0, 2.0, 0.0]).reshape(4, 1, 1)
    np.testing.assert_array_equal(maxpool_2x1(col).ravel(), [3.0, 2.0])
    odd = np.array([1.0, 3.0, 2.0]).reshape(3, 1, 1)
    np.testing.assert_array_equal(maxpool_2x1(odd).ravel(), [3.0, 2.0])
    for _ in range(20):
        x = rng.standard_normal((int(rng.integers(1, 8)), 3, 2))
        out = pool_oracle(x)
        np.testing.assert_array_equal(maxpool_2x1(x), out)
        # every output dominates the window it covers
        for i in range(out.shape[0]):
            assert np.all(out[i] >= x[2 * i])
            if 2 * i + 1 < x.shape[0]:
                assert np.all(out[i] >= x[2 * i + 1])


def test_leaky_relu_values_and_grad():
    assert leaky_relu(np.array(0.0), 0.01) == 0.0
    assert leaky_relu(np.array(-2.0), 0.01) == pytest.approx(-0.02)
    assert leaky_relu_grad(np.array(-2.0), 0.01) == 0.01
    assert leaky_relu_grad(np.array(0.0), 0.01) == 0.01  # subgradient choice
    assert leaky_relu_grad(np.array(1.5), 0.01) == 1.0
    with pytest.raises(ConfigError):
        leaky_relu(np.array(1.0), 1.0)


def test_vertical_collapse():
    x = np.array([[[2.0]], [[4.0]]])
    np.testing.assert_array_equal(vertical_collapse(x), [[[3.0]]])
    one = np.arange(6.0).reshape(1, 3, 2)
    np.testing.assert_array_equal(vertical_collapse(one), one)


def test_forward_shape_contract_and_zero_params(rng):
    model = build_fcn(TINY, rng)
    for p in model.parameters:
        p[...] = 0.0
    out = model.forward(rng.standard_normal((6, 16, 3)))
    assert out.shape == (1, 16, 3)
    assert not out.any()
    with pytest.raises(ShapeError):
        model.forward(rng.standard_normal((5, 16, 3)))


def test_forward_is_shift_covariant(rng):
    model = build_fcn(TINY, rng)
    x = rng.standard_normal((6, 16, 3))
    base = model.infer(x)
    for k in (1, 5, 11):
        shifted = model.infer(np.roll(x, k, axis=1))
        np.testing.assert_allclose(shifted, np.roll(base, k, axis=1), atol=1e-8)


def test_backward_before_forward_raises(rng):
    model = build_fcn(TINY, rng)
    with pytest.raises(StateError):
        model.backward(np.zeros((1, 16, 3)))


def test_backward_zero_grad_and_last_bias(rng):
    model = build_fcn(TINY, rng)
    model.forward(rng.standard_normal((6, 16, 3)))
    grads = model.backward(np.zeros((1, 16, 3)))
    assert all(not g.any() for g in grads)

    # d(sum of outputs)/d(last bias) = n_fft per output channel
    model.forward(rng.standard_normal((6, 16, 3)))
    grads = model.backward(np.ones((1, 16, 3)))
    np.testing.assert_allclose(grads[-1], np.full(3, 16.0), atol=1e-12)


def test_gradients_match_finite_differences(rng):
    model = build_fcn(TINY, rng)
    x = rng.standard_normal((6, 16, 3))
    label = rng.standard_normal((1, 16, 3))
    loss_cfg = LossConfig()

    pred = model.forward(x)
    loss, gy = composite_loss(pred, label, loss_cfg)
    analytic = model.backward(gy)

    def loss_now():
        out, _ = composite_loss(model.infer(x), label, loss_cfg)
        return out

    numeric = finite_diff(loss_now, model.parameters, h=1e-4)
    for a, n in zip(analytic, numeric):
        denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), 1e-6)
        assert np.max(np.abs(a - n) / denom) < 1e-4


def test_collapse_gradient_distributes_uniformly(rng):
    # single-block net: conv then collapse; d(out)/d(x) = K(sum)/H per row
    cfg = ArchConfig(input_frames=4, n_fft=8, block_channels=(3,),
                     block_kernel_sizes=(1,), convs_per_block=(1,),
                     pool_after_block=(False,))
    model = build_fcn(cfg, rng)
    x = rng.standard_normal((4, 8, 3))
    label = np.zeros((1, 8, 3))
    pred = model.forward(x)
    _, gy = composite_loss(pred, label, LossConfig())
    analytic = model.backward(gy)

    def loss_now():
        out, _ = composite_loss(model.infer(x), label, LossConfig())
        return out

    numeric = finite_diff(loss_now, model.parameters, h=1e-5)
    for a, n in zip(analytic, numeric):
        np.testing.assert_allclose(a, n, atol=1e-6)


def test_random_arch_output_shape(rng):
    for _ in range(8):
        n_blocks = int(rng.integers(1, 4))
        cfg = ArchConfig(
            input_frames=int(rng.integers(1, 9)),
            n_fft=int(rng.integers(4, 17)),
            block_channels=tuple(int(rng.integers(1, 5)) for _ in range(n_blocks)),
            block_kernel_sizes=tuple(int(rng.choice([1, 3, 5])) for _ in range(n_blocks)),
            convs_per_block=tuple(int(rng.integers(1, 3)) for _ in range(n_blocks)),
            pool_after_block=tuple(bool(rng.integers(2)) for _ in range(n_blocks)),
        )
        model = build_fcn(cfg, rng)
        out = model.infer(rng.standard_normal((cfg.input_frames, cfg.n_fft, 3)))
        assert out.shape == (1, cfg.n_fft, 3)


def test_checkpoint_roundtrip(tmp_path, rng):
    model = build_fcn(TINY, rng)
    path = tmp_path / "model.fcnw"
    save_checkpoint(model, path)
    loaded = load_checkpoint(path)
    assert loaded.cfg == model.cfg
    for a, b in zip(model.parameters, loaded.parameters):
        np.testing.assert_array_equal(a.astype(np.float32), b.astype(np.float32))
    # float32 storage: saving the loaded model reproduces the bytes
    save_checkpoint(loaded, tmp_path / "again.fcnw")
    assert (tmp_path / "again.fcnw").read_bytes() == path.read_bytes()


def test_checkpoint_errors(tmp_path, rng):
    model = build_fcn(TINY, rng)
    path = tmp_path / "model.fcnw"
    save_checkpoint(model, path)
    blob = path.read_bytes()
    (tmp_path / "trunc.fcnw").write_bytes(blob[:-10])
    with pytest.raises(FormatError):
        load_checkpoint(tmp_path / "trunc.fcnw")
    (tmp_path / "magic.fcnw").write_bytes(b"XXXX" + blob[4:])
    with pytest.raises(FormatError):
        load_checkpoint(tmp_path / "magic.fcnw")
