import numpy as np
import pytest

import checks
from binscene import dsp, losses
from binscene.errors import ConfigurationError, InvalidInputError
from binscene.numerics import Tensor, precision
from binscene.numerics.gradcheck import max_relative_error
from binscene.soundnet import (ASPP, OUTPUT_PAIRS, FULL_SCALE_CONV_PLAN, ModelConfig, SoundNet,
                               SpectrogramEncoder, apply_masks, denormalize_depth,
                               normalize_depth, s3r_reconstruct)
from binscene.training import batch_losses

TINY = dict(conv_channels=(2, 3, 4, 4), aspp_filters=3, aspp_out=4, n_bins=33, n_frames=17,
            grid=(8, 16), decoder_width=4, up_channels=(3, 3, 2, 2, 2), n_mfcc=4, gru_units=3,
            z_dim=2, mlp_hidden=5, ddsp_channels=2)


def tiny_cfg(**kw):
    return ModelConfig(**{**TINY, **kw})


def tiny_batch(cfg, n=2, seed=0, dtype=np.float32):
    rng = np.random.default_rng(seed)
    k, fb, tf = len(cfg.input_channels), cfg.n_bins, cfg.n_frames
    gh, gw = cfg.grid
    P = cfg.output_pairs
    b = {"logspec": rng.standard_normal((n, k, fb, tf)).astype(dtype),
         "f0": rng.uniform(0, 500, (n, k, tf)).astype(dtype),
         "loudness": rng.standard_normal((n, k, tf)).astype(dtype),
         "mfcc": rng.standard_normal((n, k, tf, cfg.n_mfcc)).astype(dtype),
         "labels": rng.integers(0, 4, (n, gh, gw)),
         "depth_n": rng.uniform(0, 1, (n, gh, gw)).astype(dtype),
         "flow": rng.standard_normal((n, 2, gh, gw)).astype(dtype)}
    for key in ("ref_re", "ref_im"):
        b[key] = rng.standard_normal((n, 2, fb, tf)).astype(dtype)
    for key in ("diff_re", "diff_im"):
        b[key] = rng.standard_normal((n, P, 2, fb, tf)).astype(dtype)
    return b


class TestShapes:
    def test_encoder_grid(self):
        assert ModelConfig().feature_grid == (16, 6)

    def test_full_size_forward(self):
        cfg = ModelConfig(tasks="SDMR", output_pairs=3)
        model = SoundNet(cfg)
        out = model(tiny_batch(cfg, n=1))
        assert out.features.shape[-2:] == (16, 6)
        assert out.semantic.shape == (1, 4, 32, 64)
        assert out.depth.shape == (1, 1, 32, 64)
        assert out.flow.shape == (1, 2, 32, 64)
        assert out.masks.shape == (1, 12, 257, 97)

    def test_s3r_decoder_precrop(self):
        cfg = ModelConfig(tasks="R")
        x = Tensor(np.zeros((1, cfg.aspp_out, 16, 6)))
        for up in SoundNet(cfg).s3r.ups:
            x = up(x)
        assert x.shape[-2:] == (512, 192)

    def test_full_scale_widths_recorded(self):
        assert FULL_SCALE_CONV_PLAN == (64, 128, 256, 512)
        assert ASPP.RATES == (6, 12, 18)
        assert ModelConfig().aspp_filters == 64

    def test_aspp_keeps_grid(self):
        aspp = ASPP(5, 4, 3, np.random.default_rng(0))
        assert aspp(Tensor(np.ones((2, 5, 7, 3)))).shape == (2, 3, 7, 3)

    def test_aspp_zero_input(self):
        aspp = ASPP(5, 4, 3, np.random.default_rng(0)).eval()
        assert not aspp(Tensor(np.zeros((1, 5, 4, 4)))).data.any()

    def test_combined_width(self):
        cfg = tiny_cfg(encoder="combined")
        model = SoundNet(cfg)
        feat = model.encode(tiny_batch(cfg))
        assert feat.shape[1] == cfg.aspp_out
        assert model.aspp.branches[0].conv.in_channels == 2 * (4 + 2)


class TestSharing:
    def test_identical_channels_identical_halves(self):
        enc = SpectrogramEncoder((2, 3, 4, 4), np.random.default_rng(0))
        x = np.random.default_rng(1).standard_normal((2, 1, 33, 17))
        out = enc(np.concatenate([x, x], axis=1)).data
        assert np.array_equal(out[:, :4], out[:, 4:])

    def test_swap_permutes_halves(self):
        enc = SpectrogramEncoder((2, 3, 4, 4), np.random.default_rng(0))
        a, b = np.random.default_rng(2).standard_normal((2, 2, 1, 33, 17))
        ab = enc(np.concatenate([a, b], axis=1)).data
        ba = enc(np.concatenate([b, a], axis=1)).data
        assert np.allclose(ab[:, :4], ba[:, 4:], atol=1e-6) and np.allclose(ab[:, 4:], ba[:, :4], atol=1e-6)

    def test_ddsp_identical_halves(self):
        cfg = tiny_cfg(encoder="ddsp")
        model = SoundNet(cfg)
        b = tiny_batch(cfg)
        for key in ("f0", "loudness", "mfcc"):
            b[key][:, 1] = b[key][:, 0]
        out = model.ddsp_encoder(b["f0"], b["loudness"], b["mfcc"]).data
        assert np.array_equal(out[:, :2], out[:, 2:])

    def test_ddsp_frame_mismatch(self):
        cfg = tiny_cfg(encoder="ddsp")
        b = tiny_batch(cfg)
        with pytest.raises(InvalidInputError):
            SoundNet(cfg).ddsp_encoder(b["f0"], b["loudness"][..., :-1], b["mfcc"])


class TestHeads:
    def test_semantic_distribution(self):
        cfg = tiny_cfg(tasks="S")
        s = SoundNet(cfg)(tiny_batch(cfg)).semantic.data
        assert np.all(s >= 0) and np.allclose(s.sum(axis=1), 1, atol=1e-6)

    def test_mask_range(self):
        cfg = tiny_cfg(tasks="R", output_pairs=3)
        b = tiny_batch(cfg)
        b["logspec"] *= 1e4  # push the sigmoid into saturation
        m = SoundNet(cfg)(b).masks.data
        assert m.min() >= -1 and m.max() <= 1
        assert m.shape == (2, 12, 33, 17)

    def test_missing_decoder(self):
        cfg = tiny_cfg(tasks="S")
        with pytest.raises(ConfigurationError, match="depth"):
            SoundNet(cfg)(tiny_batch(cfg), tasks="SD")

    def test_subset_of_tasks(self):
        cfg = tiny_cfg(tasks="SDMR")
        out = SoundNet(cfg)(tiny_batch(cfg), tasks="S")
        assert out.semantic is not None and out.depth is None and out.masks is None

    def test_inference_determinism(self):
        cfg = tiny_cfg(tasks="SDMR")
        model = SoundNet(cfg).eval()
        b = tiny_batch(cfg)
        a1, a2 = model(b), model(b)
        for name in ("semantic", "depth", "flow", "masks"):
            assert np.array_equal(getattr(a1, name).data, getattr(a2, name).data)

    def test_seeded_init(self):
        cfg = tiny_cfg(tasks="SD")
        a, b = SoundNet(cfg, seed=3).state_dict(), SoundNet(cfg, seed=3).state_dict()
        assert all(np.array_equal(a[k], b[k]) for k in a)


class TestConfig:
    @pytest.mark.parametrize("kw", [dict(encoder="wavelet"), dict(conv_channels=(1, 2)),
                                    dict(input_channels=(0, 3)), dict(input_channels=(3, 3)),
                                    dict(tasks=""), dict(tasks="R", output_pairs=4),
                                    dict(tasks="R", input_channels=(1, 6))])
    def test_rejects(self, kw):
        with pytest.raises(ConfigurationError):
            ModelConfig(**kw)

    def test_pairs(self):
        assert ModelConfig(tasks="R", output_pairs=3).target_pairs() == OUTPUT_PAIRS
        assert ModelConfig(tasks="R").target_pairs() == ((1, 6),)

    def test_kv_round_trip(self):
        cfg = tiny_cfg(tasks="SR", encoder="combined", output_pairs=2)
        kv = {k: ",".join(map(str, v)) if isinstance(v, tuple) else str(v) for k, v in cfg.to_kv().items()}
        assert ModelConfig.from_kv(kv) == cfg


class TestReconstruct:
    def test_consistency_on_simulator(self):
        zero, oracle = checks.s3r_consistency(n=5)
        assert zero <= 1e-6 and oracle < 1e-4

    def test_zero_mask_real_planes(self):
        rng = np.random.default_rng(0)
        waves = rng.standard_normal((2, 2000))
        spec = rng.standard_normal((2, 257, 10)) + 1j * rng.standard_normal((2, 257, 10))
        out = s3r_reconstruct(np.zeros((4, 257, 10)), spec, waves)
        assert np.array_equal(out[0], waves)

    def test_shape_mismatch(self):
        with pytest.raises(ConfigurationError):
            s3r_reconstruct(np.zeros((1, 2, 257, 9), complex), np.zeros((2, 257, 10), complex),
                            np.zeros((2, 2000)))

    def test_apply_masks_complex_product(self):
        rng = np.random.default_rng(1)
        m = rng.uniform(-1, 1, (1, 4, 3, 5))
        sr, si = rng.standard_normal((2, 1, 2, 3, 5))
        with precision("wide"):
            re, im = apply_masks(Tensor(m), sr, si, 1)
        mc = m.reshape(1, 1, 2, 2, 3, 5)
        expected = (mc[:, :, :, 0] + 1j * mc[:, :, :, 1]) * (sr + 1j * si)[:, None]
        assert np.allclose(re.data + 1j * im.data, expected, atol=1e-14)

    def test_depth_normalization(self):
        d = np.array([0.5, 1.0, 25.5, 50.0, 80.0])
        assert normalize_depth(d).tolist() == [0, 0, 0.5, 1, 1]
        assert np.allclose(denormalize_depth(normalize_depth(d[1:4])), d[1:4])


@pytest.mark.parametrize("encoder", ["spectrogram", "ddsp"])
def test_end_to_end_gradient(encoder):
    # 33 bins x 17 frames matches a 64-sample window with hop 16 over 320 samples
    p = dsp.StftParams(window_size=64, hop_length=16)
    with precision("wide"):
        cfg = tiny_cfg(tasks="SDMR", encoder=encoder)
        model = SoundNet(cfg, seed=1)
        batch = tiny_batch(cfg, dtype=np.float64)
        rng = np.random.default_rng(4)
        batch["ref_wave"] = 0.1 * rng.standard_normal((2, 2, 320))
        batch["target_wave"] = 0.1 * rng.standard_normal((2, 1, 2, 320))
        weights = losses.LossWeights.for_encoder(encoder)
        if encoder == "spectrogram":
            target = model.spec_encoder.layers[0].conv.weight
        else:
            target = model.ddsp_encoder.mlp[0].weight

        def loss():
            return losses.total_loss(batch_losses(model, batch, weights, p), weights)

        # a 1e-4 step crosses ReLU kinks in a network this small; 1e-6 stays on one side
        assert max_relative_error(loss, [target], eps=1e-6, max_entries=8) < 1e-3
