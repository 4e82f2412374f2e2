"""Learned codec: clipping, noise, rounding, the RD loss, and training.

The hand-built two-feature codec in loss tests routes f=(1,1) to the
latent (2,-3) and exactly back, so every loss contribution is computable
on paper.
"""

import csv

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from featcodec import ConfigError, FormatError, ShapeError, TrainingDivergenceError
from featcodec.codec import (
    OPERATING_POINTS,
    FeatureCodec,
    TrainConfig,
    clip_latent,
    load_model,
    quantize_latent,
    rd_loss,
    save_model,
    train_codec,
    train_noise,
)
from featcodec.data import gen_synthetic
from featcodec.nn import DenseLayer, GdnLayer, grad_check

SMALL = TrainConfig(epochs=2, latent_dim=4, hidden_dim=8)


def hand_codec(lam=0.1):
    """D=2 codec that encodes (1,1) to (2,-3) and decodes it back."""
    eye = np.eye(2)
    return FeatureCodec(
        enc_fc1=DenseLayer(eye.copy(), np.zeros(2)),
        enc_gdn=GdnLayer(np.ones(2), np.zeros((2, 2))),
        enc_fc2=DenseLayer(np.array([[2.0, 0.0], [0.0, -3.0]]), np.zeros(2)),
        dec_fc1=DenseLayer(np.array([[0.5, 0.0], [0.0, -1.0 / 3.0]]), np.zeros(2)),
        dec_igdn=GdnLayer(np.ones(2), np.zeros((2, 2)), inverse=True),
        dec_fc2=DenseLayer(eye.copy(), np.zeros(2)),
        lam=lam,
        r_clip=20.0,
        model_id="hand",
    )


class TestTrainConfig:
    def test_defaults(self):
        cfg = TrainConfig()
        assert (cfg.lam, cfg.learning_rate, cfg.batch_size) == (1e-4, 1e-4, 32)
        assert (cfg.epochs, cfg.r_clip, cfg.noise_half_width) == (40, 20.0, 0.5)
        assert (cfg.seed, cfg.latent_dim, cfg.hidden_dim) == (42, 32, 128)

    def test_with_lam_returns_new_config(self):
        cfg = TrainConfig()
        other = cfg.with_lam(1e-6)
        assert other.lam == 1e-6
        assert cfg.lam == 1e-4

    def test_validation(self):
        with pytest.raises(ConfigError, match="lam"):
            TrainConfig(lam=0)
        with pytest.raises(ConfigError, match="learning_rate"):
            TrainConfig(learning_rate=-1)
        with pytest.raises(ConfigError):
            TrainConfig(batch_size=0)
        with pytest.raises(ConfigError):
            TrainConfig(epochs=0)
        with pytest.raises(ConfigError, match="r_clip"):
            TrainConfig(r_clip=0)
        with pytest.raises(ConfigError, match="noise_half_width"):
            TrainConfig(noise_half_width=-0.1)
        with pytest.raises(ConfigError):
            TrainConfig(latent_dim=0)

    def test_operating_points_are_frozen(self):
        assert OPERATING_POINTS == {"L0": 1e-4, "L1": 1e-5, "L2": 1e-6, "L3": 1e-7}


class TestClipAndQuantize:
    def test_clip_example(self):
        np.testing.assert_array_equal(
            clip_latent([25.0, -33.0, 3.0], 20.0), [20.0, -20.0, 3.0]
        )

    def test_clip_inside_values_unchanged(self):
        c = np.array([-19.9, 0.0, 19.9])
        np.testing.assert_array_equal(clip_latent(c, 20.0), c)

    @given(
        st.lists(st.floats(-100, 100, allow_nan=False), min_size=1, max_size=20),
        st.floats(0.5, 30),
    )
    @settings(max_examples=60, deadline=None)
    def test_clip_idempotent(self, values, r):
        once = clip_latent(values, r)
        np.testing.assert_array_equal(clip_latent(once, r), once)

    def test_clip_rejects_bad_radius(self):
        with pytest.raises(ConfigError):
            clip_latent([1.0], 0.0)

    def test_quantize_examples(self):
        np.testing.assert_array_equal(
            quantize_latent([1.4, -1.5, 0.5]), [1, -2, 1]
        )

    def test_quantize_fixes_integers(self):
        c = np.arange(-5.0, 6.0)
        np.testing.assert_array_equal(quantize_latent(c), c)

    @given(st.lists(st.floats(-50, 50, allow_nan=False), min_size=1, max_size=30))
    @settings(max_examples=80, deadline=None)
    def test_quantize_within_half(self, values):
        q = quantize_latent(values)
        assert q.dtype == np.int64
        assert np.all(np.abs(q - np.asarray(values)) <= 0.5)


class TestTrainNoise:
    def test_support_bound(self):
        rng = np.random.default_rng(0)
        noise = train_noise((1000,), 0.5, rng)
        assert np.all(np.abs(noise) <= 0.5)

    def test_mean_near_zero_over_a_million_draws(self):
        rng = np.random.default_rng(123)
        noise = train_noise((1_000_000,), 0.5, rng)
        assert abs(noise.mean()) < 0.002

    def test_deterministic_per_seed(self):
        a = train_noise((50,), 0.5, np.random.default_rng(9))
        b = train_noise((50,), 0.5, np.random.default_rng(9))
        np.testing.assert_array_equal(a, b)

    def test_zero_width_gives_zeros(self):
        noise = train_noise((10,), 0.0, np.random.default_rng(1))
        np.testing.assert_array_equal(noise, np.zeros(10))

    def test_negative_width_rejected(self):
        with pytest.raises(ConfigError):
            train_noise((3,), -0.1, np.random.default_rng(1))


class TestEncodeDecode:
    def test_infer_codes_are_bounded_integers(self):
        model = FeatureCodec.build(6, SMALL, "t")
        f = np.random.default_rng(3).normal(size=(40, 6))
        codes = model.encode(f, mode="infer")
        assert codes.dtype == np.int64
        assert np.all(np.abs(codes) <= 20)

    def test_zero_final_encoder_layer_gives_zero_codes(self):
        model = FeatureCodec.build(6, SMALL, "t")
        model.enc_fc2.weights[:] = 0.0
        model.enc_fc2.bias[:] = 0.0
        f = np.random.default_rng(4).normal(size=(5, 6))
        np.testing.assert_array_equal(model.encode(f), np.zeros((5, 4)))

    def test_infer_deterministic(self):
        model = FeatureCodec.build(6, SMALL, "t")
        f = np.random.default_rng(5).normal(size=(8, 6))
        np.testing.assert_array_equal(model.encode(f), model.encode(f))

    def test_continuous_mode_is_clipped_not_rounded(self):
        model = FeatureCodec.build(6, SMALL, "t")
        f = 50.0 * np.random.default_rng(6).normal(size=(30, 6))
        c = model.encode(f, mode="continuous")
        assert np.all(np.abs(c) <= 20.0)
        assert not np.array_equal(c, np.round(c))

    def test_train_mode_needs_rng(self):
        model = FeatureCodec.build(4, SMALL, "t")
        with pytest.raises(ConfigError, match="rng"):
            model.encode(np.zeros((1, 4)), mode="train")

    def test_unknown_mode_rejected(self):
        model = FeatureCodec.build(4, SMALL, "t")
        with pytest.raises(ConfigError, match="mode"):
            model.encode(np.zeros((1, 4)), mode="verbatim")

    def test_train_and_infer_latents_within_one(self):
        # noise half-width 0.5 plus rounding distance 0.5
        model = FeatureCodec.build(6, SMALL, "t")
        f = np.random.default_rng(7).normal(size=(60, 6))
        rounded = model.encode(f, mode="infer")
        noisy = model.encode(f, mode="train", rng=np.random.default_rng(8))
        assert np.max(np.abs(noisy - rounded)) <= 1.0 + 1e-12

    def test_fresh_model_decodes_zero_to_zero(self):
        # built layers have zero biases, and both GDN modes fix the origin
        model = FeatureCodec.build(6, SMALL, "t")
        np.testing.assert_array_equal(model.decode(np.zeros(4)), np.zeros(6))

    def test_decode_accepts_integer_codes(self):
        model = FeatureCodec.build(6, SMALL, "t")
        codes = np.array([[1, -2, 0, 3]], dtype=np.int64)
        np.testing.assert_array_equal(
            model.decode(codes), model.decode(codes.astype(np.float64))
        )

    def test_shape_chain_validated(self):
        parts = dict(
            enc_fc1=DenseLayer(np.zeros((3, 2)), np.zeros(3)),
            enc_gdn=GdnLayer(np.ones(3), np.zeros((3, 3))),
            enc_fc2=DenseLayer(np.zeros((2, 3)), np.zeros(2)),
            dec_fc1=DenseLayer(np.zeros((3, 2)), np.zeros(3)),
            dec_igdn=GdnLayer(np.ones(3), np.zeros((3, 3)), inverse=True),
            dec_fc2=DenseLayer(np.zeros((2, 3)), np.zeros(2)),
        )
        bad = dict(parts)
        bad["dec_fc1"] = DenseLayer(np.zeros((3, 4)), np.zeros(3))
        with pytest.raises(ShapeError, match="latent width"):
            FeatureCodec(**bad, lam=0.1, r_clip=20.0, model_id="x")

    def test_gdn_modes_validated(self):
        model = FeatureCodec.build(4, SMALL, "t")
        with pytest.raises(ConfigError, match="forward mode"):
            FeatureCodec(
                model.enc_fc1,
                model.dec_igdn,  # inverse-mode layer in the encoder slot
                model.enc_fc2,
                model.dec_fc1,
                model.dec_igdn,
                model.dec_fc2,
                lam=0.1,
                r_clip=20.0,
                model_id="x",
            )


class TestRdLoss:
    def test_zero_input_zero_noise_gives_zero_loss(self):
        model = FeatureCodec.build(5, SMALL, "t")
        loss, grads, mse, l1 = rd_loss(model, np.zeros((3, 5)), np.zeros((3, 4)))
        assert loss == 0.0
        assert mse == 0.0
        assert l1 == 0.0

    def test_hand_example_point_five(self):
        # perfect reconstruction, latent (2,-3), lambda 0.1 -> 0.1 * 5
        loss, _, mse, l1 = rd_loss(hand_codec(), np.array([1.0, 1.0]), np.zeros((1, 2)))
        assert loss == 0.5
        assert mse == 0.0
        assert l1 == 5.0

    def test_loss_is_nonnegative(self):
        model = FeatureCodec.build(5, SMALL, "t")
        rng = np.random.default_rng(11)
        for _ in range(10):
            f = rng.normal(size=(4, 5))
            noise = rng.uniform(-0.5, 0.5, size=(4, 4))
            loss, _, mse, l1 = rd_loss(model, f, noise)
            assert loss >= 0.0
            assert loss == pytest.approx(mse + model.lam * l1, rel=1e-12)

    def test_gradients_match_finite_differences(self):
        model = FeatureCodec.build(4, TrainConfig(latent_dim=3, hidden_dim=5), "t")
        rng = np.random.default_rng(12)
        f = rng.normal(size=(6, 4))
        # keep probes off the |c| kink and the clip boundary
        noise = rng.uniform(0.05, 0.45, size=(6, 3))

        def loss_fn():
            loss, grads, _, _ = rd_loss(model, f, noise)
            return loss, grads

        report = grad_check(loss_fn, model.parameters(), seed=0)
        assert report.max_rel_error <= 1e-4

    def test_batch_shape_validated(self):
        model = FeatureCodec.build(4, SMALL, "t")
        with pytest.raises(ShapeError, match=r"\(B, 4\)"):
            rd_loss(model, np.zeros((2, 5)), np.zeros((2, 4)))

    def test_noise_shape_validated(self):
        model = FeatureCodec.build(4, SMALL, "t")
        with pytest.raises(ShapeError, match="noise"):
            rd_loss(model, np.zeros((2, 4)), np.zeros((3, 4)))

    def test_non_finite_loss_raises(self):
        model = FeatureCodec.build(4, SMALL, "t")
        with np.errstate(over="ignore", invalid="ignore"):
            with pytest.raises(TrainingDivergenceError):
                rd_loss(model, np.full((1, 4), 1e200), np.zeros((1, 4)))


class TestTrainCodec:
    def test_deterministic_per_config(self):
        fs = gen_synthetic(6, 8, 8, 0.2, 3)
        a = train_codec(fs, SMALL, model_id="m")
        b = train_codec(fs, SMALL, model_id="m")
        for name, param in a.parameters().items():
            np.testing.assert_array_equal(param, b.parameters()[name])

    def test_loss_descends_on_small_set(self, tmp_path):
        fs = gen_synthetic(10, 10, 8, 0.2, 5)
        log = str(tmp_path / "train.csv")
        train_codec(
            fs,
            TrainConfig(learning_rate=1e-3, epochs=8, latent_dim=4, hidden_dim=8),
            log_path=log,
        )
        with open(log) as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == ["epoch", "mean_loss", "mean_mse", "mean_l1"]
        assert len(rows) == 9
        assert float(rows[-1][1]) < float(rows[1][1])

    def test_accepts_raw_arrays(self):
        data = np.random.default_rng(2).normal(size=(30, 6))
        model = train_codec(data, SMALL)
        assert model.feature_dim == 6

    def test_divergence_names_epoch_and_step(self):
        data = np.full((8, 4), 1e200)
        with np.errstate(over="ignore", invalid="ignore"):
            with pytest.raises(TrainingDivergenceError, match=r"epoch 0, step 0"):
                train_codec(data, SMALL)

    def test_empty_features_rejected(self):
        with pytest.raises(ConfigError, match="empty"):
            train_codec(np.zeros((0, 4)), SMALL)

    def test_wrong_ndim_rejected(self):
        with pytest.raises(ShapeError):
            train_codec(np.zeros(8), SMALL)


class TestModelFiles:
    def test_round_trip_is_bitwise(self, tmp_path):
        fs = gen_synthetic(5, 6, 6, 0.2, 1)
        model = train_codec(fs, SMALL, model_id="round-trip")
        path = str(tmp_path / "m.fcm")
        save_model(model, path)
        back = load_model(path)
        assert back.model_id == "round-trip"
        assert back.lam == model.lam
        assert back.r_clip == model.r_clip
        assert back.dec_igdn.inverse
        for name, param in model.parameters().items():
            np.testing.assert_array_equal(param, back.parameters()[name])

    def test_double_save_is_stable(self, tmp_path):
        model = FeatureCodec.build(4, SMALL, "stable")
        p1, p2 = str(tmp_path / "a.fcm"), str(tmp_path / "b.fcm")
        save_model(model, p1)
        save_model(load_model(p1), p2)
        with open(p1, "rb") as f1, open(p2, "rb") as f2:
            assert f1.read() == f2.read()

    def test_wrong_magic(self, tmp_path):
        path = str(tmp_path / "bad.fcm")
        with open(path, "wb") as fh:
            fh.write(b"NOPE" + b"\x00" * 40)
        with pytest.raises(FormatError, match="byte 0"):
            load_model(path)

    def test_unsupported_version(self, tmp_path):
        model = FeatureCodec.build(4, SMALL, "v")
        path = str(tmp_path / "v.fcm")
        save_model(model, path)
        with open(path, "r+b") as fh:
            fh.seek(4)
            fh.write(b"\x07\x00")
        with pytest.raises(FormatError, match="version 7"):
            load_model(path)

    def test_truncations_fail_with_offsets(self, tmp_path):
        model = FeatureCodec.build(3, TrainConfig(latent_dim=2, hidden_dim=3), "t")
        path = str(tmp_path / "full.fcm")
        save_model(model, path)
        with open(path, "rb") as fh:
            blob = fh.read()
        # header boundaries plus cuts inside each region of the payload
        cuts = [0, 3, 4, 5, 7, 9, 11, 18, 27, len(blob) // 2, len(blob) - 1]
        for cut in cuts:
            partial = str(tmp_path / f"cut{cut}.fcm")
            with open(partial, "wb") as fh:
                fh.write(blob[:cut])
            with pytest.raises(FormatError):
                load_model(partial)

    def test_trailing_garbage_rejected(self, tmp_path):
        model = FeatureCodec.build(3, TrainConfig(latent_dim=2, hidden_dim=3), "t")
        path = str(tmp_path / "extra.fcm")
        save_model(model, path)
        with open(path, "ab") as fh:
            fh.write(b"\xff")
        with pytest.raises(FormatError):
            load_model(path)

    def test_zero_dimension_rejected(self, tmp_path):
        model = FeatureCodec.build(3, TrainConfig(latent_dim=2, hidden_dim=3), "t")
        path = str(tmp_path / "zdim.fcm")
        save_model(model, path)
        with open(path, "r+b") as fh:
            fh.seek(6)
            fh.write(b"\x00\x00")
        with pytest.raises(FormatError, match="dimensions must be positive"):
            load_model(path)

    def test_negative_r_clip_rejected(self, tmp_path):
        import struct

        model = FeatureCodec.build(3, TrainConfig(latent_dim=2, hidden_dim=3), "t")
        path = str(tmp_path / "rclip.fcm")
        save_model(model, path)
        with open(path, "r+b") as fh:
            fh.seek(12)
            fh.write(struct.pack("<d", -1.0))
        with pytest.raises(FormatError, match="r_clip"):
            load_model(path)

    def test_negative_gamma_in_file_rejected(self, tmp_path):
        import struct

        model = FeatureCodec.build(3, TrainConfig(latent_dim=2, hidden_dim=3), "t")
        path = str(tmp_path / "gamma.fcm")
        save_model(model, path)
        with open(path, "rb") as fh:
            blob = bytearray(fh.read())
        # first gamma entry of the encoder GDN sits right after the
        # model_id string and the first dense block (W 3x3 + b 3) + beta 3
        header = 4 + 2 + 2 + 2 + 2 + 8 + 8 + 1 + len(b"t")
        offset = header + (9 + 3 + 3) * 8
        blob[offset : offset + 8] = struct.pack("<d", -0.5)
        with open(path, "wb") as fh:
            fh.write(bytes(blob))
        with pytest.raises(FormatError, match="GDN"):
            load_model(path)
