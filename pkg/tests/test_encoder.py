import numpy as np
import pytest

from mfcontrast.encoder import (EncoderConfig, TapSet, conformer_block,
                                encode_with_taps, init_encoder_params,
                                subsample_frontend, subsampled_length,
                                _block_fwd, _encoder_bwd, _encoder_fwd)
from mfcontrast.features import LengthError
from mfcontrast.nn import ShapeError

from oracles import rel_error

TOY = EncoderConfig(num_blocks=2, model_dim=16, num_heads=2, ff_expansion=2,
                    conv_kernel=7, dropout=0.0, input_dim=8)


def toy_setup(seed=0):
    rng = np.random.default_rng(seed)
    params, state = init_encoder_params(TOY, rng)
    return params, state, rng


class TestSubsampleFrontend:
    def test_half_rate_arithmetic(self):
        assert subsampled_length(298) == 149
        assert subsampled_length(4) == 2

    def test_shapes(self):
        params, state, rng = toy_setup()
        x = rng.standard_normal((298, 8))
        out = subsample_frontend(x, params, TOY)
        assert out.shape == (149, 16)

    def test_minimal_input(self):
        params, state, rng = toy_setup()
        out = subsample_frontend(rng.standard_normal((4, 8)), params, TOY)
        assert out.shape == (2, 16)

    def test_doubling_frames_doubles_output(self):
        params, state, rng = toy_setup()
        for t in (11, 24, 37):
            a = subsample_frontend(rng.standard_normal((t, 8)), params, TOY).shape[0]
            b = subsample_frontend(rng.standard_normal((2 * t, 8)), params, TOY).shape[0]
            assert abs(b - 2 * a) <= 1

    def test_too_short_raises(self):
        params, state, rng = toy_setup()
        with pytest.raises(LengthError):
            subsample_frontend(rng.standard_normal((3, 8)), params, TOY)

    def test_wrong_width_raises(self):
        params, state, rng = toy_setup()
        with pytest.raises(ShapeError):
            subsample_frontend(rng.standard_normal((10, 9)), params, TOY)


class TestConformerBlock:
    def test_output_shape_equals_input_shape(self):
        params, state, rng = toy_setup()
        h = rng.standard_normal((12, 16))
        out = conformer_block(h, params, TOY, block=0, state=state)
        assert out.shape == h.shape

    def test_eval_determinism(self):
        params, state, rng = toy_setup()
        h = rng.standard_normal((12, 16))
        a = conformer_block(h, params, TOY, block=0, state=state)
        b = conformer_block(h, params, TOY, block=0, state=state)
        np.testing.assert_array_equal(a, b)

    def test_shape_mismatch_raises(self):
        params, state, rng = toy_setup()
        with pytest.raises(ShapeError):
            conformer_block(rng.standard_normal((12, 8)), params, TOY)

    def test_gradient_matches_finite_differences(self):
        # scalar readout of one block on a 4 x 8 toy map, input gradient
        cfg = EncoderConfig(num_blocks=1, model_dim=8, num_heads=2,
                            ff_expansion=2, conv_kernel=3, dropout=0.0,
                            input_dim=4)
        rng = np.random.default_rng(3)
        params, state = init_encoder_params(cfg, rng)
        h = rng.standard_normal((1, 4, 8))
        r = rng.standard_normal((1, 4, 8))
        pre = "encoder.block0"

        out, cache, _ = _block_fwd(h, params, pre, cfg, state, "train", None)
        grads = {}
        from mfcontrast.encoder import _block_bwd
        dh = _block_bwd(r.copy(), cache, pre, grads)

        def f():
            y, _, _ = _block_fwd(h, params, pre, cfg, state, "train", None)
            return (y * r).sum()

        step = 1e-6
        fd = np.zeros_like(h)
        it = np.nditer(h, flags=["multi_index"])
        while not it.finished:
            i = it.multi_index
            old = h[i]
            h[i] = old + step
            fp = f()
            h[i] = old - step
            fm = f()
            h[i] = old
            fd[i] = (fp - fm) / (2 * step)
            it.iternext()
        assert rel_error(dh, fd) < 1e-4


class TestEncodeWithTaps:
    def test_tap_count_matches_blocks(self):
        cfg = EncoderConfig(num_blocks=6, model_dim=16, num_heads=2,
                            ff_expansion=2, conv_kernel=7, dropout=0.0, input_dim=8)
        rng = np.random.default_rng(1)
        params, state = init_encoder_params(cfg, rng)
        taps = encode_with_taps(rng.standard_normal((20, 8)), params, state, cfg)
        assert len(taps) == 6
        assert all(m.shape == (10, 16) for m in taps.maps)

    def test_single_block_equals_block_of_frontend(self):
        cfg = EncoderConfig(num_blocks=1, model_dim=16, num_heads=2,
                            ff_expansion=2, conv_kernel=7, dropout=0.0, input_dim=8)
        rng = np.random.default_rng(2)
        params, state = init_encoder_params(cfg, rng)
        x = rng.standard_normal((20, 8))
        taps = encode_with_taps(x, params, state, cfg)
        manual = conformer_block(subsample_frontend(x, params, cfg),
                                 params, cfg, block=0, state=state)
        np.testing.assert_array_equal(taps[0], manual)

    def test_taps_chain(self):
        params, state, rng = toy_setup()
        x = rng.standard_normal((20, 8))
        taps = encode_with_taps(x, params, state, TOY)
        redone = conformer_block(taps[0], params, TOY, block=1, state=state)
        np.testing.assert_array_equal(redone, taps[1])

    def test_all_taps_share_shape(self):
        params, state, rng = toy_setup()
        taps = encode_with_taps(rng.standard_normal((30, 8)), params, state, TOY)
        shapes = {m.shape for m in taps.maps}
        assert shapes == {(15, 16)}

    def test_tapset_rejects_mismatched_maps(self):
        with pytest.raises(ShapeError):
            TapSet([np.zeros((3, 4)), np.zeros((4, 4))])

    def test_train_mode_dropout_is_seeded(self):
        cfg = EncoderConfig(num_blocks=2, model_dim=16, num_heads=2,
                            ff_expansion=2, conv_kernel=7, dropout=0.2, input_dim=8)
        rng = np.random.default_rng(4)
        params, state = init_encoder_params(cfg, rng)
        x = rng.standard_normal((2, 20, 8))
        a, _, _ = _encoder_fwd(x, params, state, cfg, "train", np.random.default_rng(9))
        b, _, _ = _encoder_fwd(x, params, state, cfg, "train", np.random.default_rng(9))
        c, _, _ = _encoder_fwd(x, params, state, cfg, "train", np.random.default_rng(10))
        np.testing.assert_array_equal(a[-1], b[-1])
        assert not np.array_equal(a[-1], c[-1])


class TestFullNetworkGradient:
    def test_two_block_toy_gradient_check(self):
        # full encoder on (2, 12, 8): analytic vs central differences along
        # random parameter directions
        rng = np.random.default_rng(5)
        params, state = init_encoder_params(TOY, rng)
        x = rng.standard_normal((2, 12, 8))
        readouts = [rng.standard_normal((2, 6, 16)) for _ in range(2)]

        taps, cache, _ = _encoder_fwd(x, params, state, TOY, "train", None)
        grads = {}
        _encoder_bwd([r.copy() for r in readouts], cache, TOY, grads)

        def scalar():
            t, _, _ = _encoder_fwd(x, params, state, TOY, "train", None)
            return sum((m * r).sum() for m, r in zip(t, readouts))

        step = 1e-6
        for trial in range(4):
            direction = {k: np.random.default_rng(100 + trial).standard_normal(v.shape)
                         for k, v in params.items()}
            analytic = sum((grads[k] * direction[k]).sum() for k in params)
            saved = {k: v.copy() for k, v in params.items()}
            for k in params:
                params[k] = saved[k] + step * direction[k]
            fp = scalar()
            for k in params:
                params[k] = saved[k] - step * direction[k]
            fm = scalar()
            for k in params:
                params[k] = saved[k]
            fd = (fp - fm) / (2 * step)
            assert abs(analytic - fd) / max(abs(analytic), abs(fd)) < 1e-4
