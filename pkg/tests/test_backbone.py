import numpy as np
import numpy.testing as npt
import pytest

from latticeseg.backbone import BackboneConfig, BackboneParams, backbone_backward, backbone_forward
from latticeseg.errors import DimensionError, StateError
from latticeseg.tensor import conv2d, maxpool2d, relu
from oracles import fd_gradient, max_rel_err


def make_backbone(rng, channels_in=2, filters=(4, 6)):
    kernels, biases = [], []
    c_in = channels_in
    for c_out in filters:
        kernels.append(rng.standard_normal((3, 3, c_in, c_out)) * 0.4)
        biases.append(rng.standard_normal(c_out) * 0.1)
        c_in = c_out
    return BackboneConfig(filters, tuple(range(1, len(filters) + 1))), BackboneParams(kernels, biases)


class TestConfig:
    def test_tap_validation(self):
        with pytest.raises(DimensionError):
            BackboneConfig((8, 16), (2, 1))
        with pytest.raises(DimensionError):
            BackboneConfig((8, 16), (1, 3))
        cfg = BackboneConfig((8, 16, 32), (1, 2, 3))
        assert cfg.tap_channels() == (8, 16, 32)
        assert cfg.tap_strides() == (2, 4, 8)


class TestForward:
    def test_zero_params_zero_taps(self):
        cfg = BackboneConfig((3, 5), (1, 2))
        params = BackboneParams(
            [np.zeros((3, 3, 1, 3)), np.zeros((3, 3, 3, 5))], [np.zeros(3), np.zeros(5)]
        )
        taps, _ = backbone_forward(np.random.default_rng(0).uniform(size=(8, 8, 1)), params, cfg)
        assert not taps[0].any() and not taps[1].any()

    def test_tap_shapes(self):
        rng = np.random.default_rng(1)
        cfg, params = make_backbone(rng)
        taps, _ = backbone_forward(rng.standard_normal((16, 12, 2)), params, cfg)
        assert taps[0].shape == (8, 6, 4)
        assert taps[1].shape == (4, 3, 6)

    def test_matches_stagewise_composition(self):
        rng = np.random.default_rng(2)
        cfg, params = make_backbone(rng)
        x = rng.standard_normal((8, 8, 2))
        taps, _ = backbone_forward(x, params, cfg)
        stage1, _ = maxpool2d(relu(conv2d(x, params.kernels[0], params.biases[0])))
        stage2, _ = maxpool2d(relu(conv2d(stage1, params.kernels[1], params.biases[1])))
        npt.assert_array_equal(taps[0], stage1)
        npt.assert_array_equal(taps[1], stage2)

    def test_indivisible_dims_error_mentions_padding(self):
        rng = np.random.default_rng(3)
        cfg, params = make_backbone(rng)
        with pytest.raises(DimensionError, match="pad"):
            backbone_forward(rng.standard_normal((10, 8, 2)), params, cfg)


class TestBackward:
    def test_zero_cotangents(self):
        rng = np.random.default_rng(4)
        cfg, params = make_backbone(rng)
        taps, cache = backbone_forward(rng.standard_normal((8, 8, 2)), params, cfg)
        grads, d_img = backbone_backward(cache, params, cfg, [np.zeros_like(t) for t in taps])
        assert not d_img.any()
        for _, arr in grads.named_arrays():
            assert not arr.any()

    def test_finite_differences_all_stages(self):
        rng = np.random.default_rng(5)
        cfg, params = make_backbone(rng)
        x = rng.standard_normal((8, 8, 2))
        taps, cache = backbone_forward(x, params, cfg)
        targets = [rng.standard_normal(t.shape) for t in taps]

        def loss():
            taps2, _ = backbone_forward(x, params, cfg)
            return float(sum(np.sum(t * d) for t, d in zip(taps2, targets)))

        grads, d_img = backbone_backward(cache, params, cfg, targets)
        analytic = dict(grads.named_arrays())
        for name, arr in params.named_arrays():
            assert max_rel_err(analytic[name], fd_gradient(loss, arr, step=1e-6)) < 1e-5, name
        assert max_rel_err(d_img, fd_gradient(loss, x, step=1e-6)) < 1e-5

    def test_untapped_trailing_stage_gets_zero_gradient(self):
        rng = np.random.default_rng(6)
        cfg = BackboneConfig((4, 6), (1,))
        _, params = make_backbone(rng)
        x = rng.standard_normal((8, 8, 2))
        taps, cache = backbone_forward(x, params, cfg)
        target = rng.standard_normal(taps[0].shape)

        def loss():
            taps2, _ = backbone_forward(x, params, cfg)
            return float(np.sum(taps2[0] * target))

        grads, d_img = backbone_backward(cache, params, cfg, [target])
        assert not grads.kernels[1].any() and not grads.biases[1].any()
        assert max_rel_err(grads.kernels[0], fd_gradient(loss, params.kernels[0], step=1e-6)) < 1e-5
        assert max_rel_err(d_img, fd_gradient(loss, x, step=1e-6)) < 1e-5

    def test_cache_single_use(self):
        rng = np.random.default_rng(7)
        cfg, params = make_backbone(rng)
        taps, cache = backbone_forward(rng.standard_normal((8, 8, 2)), params, cfg)
        zeros = [np.zeros_like(t) for t in taps]
        backbone_backward(cache, params, cfg, zeros)
        with pytest.raises(StateError):
            backbone_backward(cache, params, cfg, zeros)
