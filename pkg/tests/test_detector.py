"""Detector pipeline: shapes, residual behavior, delta, grads, checkpoints."""

import numpy as np
import pytest

from nonsemdetect.detector import (
    DetectorConfig,
    DetectorModel,
    load_checkpoint,
    make_optimizer,
    save_checkpoint,
    score,
)
from nonsemdetect.errors import ConfigurationError, FormatError
from nonsemdetect.nn import Tensor

def tiny_config(**overrides):
    base = dict(
        input_dim=8,
        conv_kernel=3,
        use_delta=False,
        lstm_hidden=4,
        projection_dim=8,
        attention_heads=2,
        mlp_hidden=4,
        seed=13,
    )
    base.update(overrides)
    return DetectorConfig(**base)


class TestConfig:
    def test_default_full_scale_sizes(self):
        cfg = DetectorConfig()
        assert cfg.projection_dim == 1536
        assert cfg.lstm_layers == 2
        assert cfg.conv_channels == cfg.input_dim

    def test_heads_must_divide_projection(self):
        with pytest.raises(ConfigurationError):
            DetectorConfig(input_dim=8, projection_dim=10, attention_heads=4)

    def test_channels_must_match_input(self):
        with pytest.raises(ConfigurationError):
            DetectorConfig(input_dim=8, conv_channels=16)

    def test_json_round_trip(self):
        cfg = tiny_config(use_delta=True)
        assert DetectorConfig.from_json(cfg.to_json()) == cfg


class TestConvBlock:
    def test_zero_branch_reduces_to_selu(self, rng):
        from nonsemdetect.nn import functional as F

        model = DetectorModel(tiny_config())
        for name, p in model.named_parameters():
            if name.startswith(("conv1", "conv2")):
                p.data[:] = 0.0
        x = rng.standard_normal((2, 8, 6)).astype(np.float32)
        out = model.conv_block(Tensor(x), training=False)
        np.testing.assert_allclose(out.data, F.selu(Tensor(x)).data, atol=1e-6)

    def test_output_shape_preserved(self, rng):
        for d, t in [(8, 1), (8, 5), (8, 30)]:
            model = DetectorModel(tiny_config())
            x = rng.standard_normal((3, d, t)).astype(np.float32)
            assert model.conv_block(Tensor(x), training=False).shape == (3, d, t)

    def test_residual_changes_output(self, rng):
        from nonsemdetect.nn import functional as F, selu

        model = DetectorModel(tiny_config())
        x = Tensor(rng.standard_normal((2, 8, 6)).astype(np.float32))
        with_res = model.conv_block(x, training=False)
        # branch-only recomputation, residual removed
        h = model.conv1(x)
        h = model.bn1(h, False)
        h = F.selu(h)
        h = model.conv2(h)
        h = model.bn2(h, False)
        without_res = selu(h)
        assert np.linalg.norm(with_res.data - without_res.data) > 0.0


class TestDelta:
    def test_hand_example(self):
        # frames [1,3] then [2,5]: difference frame is [1, 2]
        x = Tensor(np.array([[1.0, 2.0], [3.0, 5.0]], dtype=np.float32))
        out = DetectorModel.delta(x)
        np.testing.assert_array_equal(out.data, [[1.0], [2.0]])

    def test_constant_sequence_gives_zero(self, rng):
        col = rng.standard_normal(5).astype(np.float32)
        x = Tensor(np.tile(col[:, None], (1, 7)))
        np.testing.assert_array_equal(DetectorModel.delta(x).data, np.zeros((5, 6), dtype=np.float32))

    def test_length_contract(self, rng):
        x = Tensor(rng.standard_normal((2, 4, 31)).astype(np.float32))
        assert DetectorModel.delta(x).shape == (2, 4, 30)

    def test_exact_column_differences(self, rng):
        x = rng.standard_normal((3, 6, 9)).astype(np.float32)
        out = DetectorModel.delta(Tensor(x))
        np.testing.assert_array_equal(out.data, x[:, :, 1:] - x[:, :, :-1])

    def test_single_frame_rejected(self):
        with pytest.raises(ConfigurationError):
            DetectorModel.delta(Tensor(np.ones((2, 1), dtype=np.float32)))

    def test_forward_rejects_single_frame_with_delta(self, rng):
        model = DetectorModel(tiny_config(use_delta=True))
        with pytest.raises(ConfigurationError):
            model.forward(rng.standard_normal((1, 8, 1)).astype(np.float32))


class TestForward:
    def test_logit_shapes(self, rng):
        model = DetectorModel(tiny_config())
        x = rng.standard_normal((8, 30)).astype(np.float32)
        assert model.forward(x).shape == (2,)
        batch = rng.standard_normal((4, 8, 30)).astype(np.float32)
        assert model.forward(batch).shape == (4, 2)

    def test_default_config_trillsson_shape(self, rng):
        # d=1024 embeddings at a 200 ms window give t=30 frames
        model = DetectorModel(DetectorConfig(seed=0))
        x = rng.standard_normal((1024, 30)).astype(np.float32)
        assert model.forward(x).shape == (2,)

    def test_pooled_width_full_scale(self, rng):
        model = DetectorModel(DetectorConfig(input_dim=16, lstm_hidden=8, seed=1))
        x = Tensor(rng.standard_normal((1, 16, 4)).astype(np.float32))
        h = model.conv_block(x, training=False)
        from nonsemdetect.nn import transpose

        h, _ = model.lstm1(transpose(h, (0, 2, 1)))
        h, _ = model.lstm2(h)
        pooled, _ = model.pool(model.proj(h))
        assert pooled.shape == (1, 1536)

    def test_eval_batch_rows_independent(self, rng):
        model = DetectorModel(tiny_config())
        batch = rng.standard_normal((5, 8, 6)).astype(np.float32)
        together = model.forward(batch).data
        separate = np.stack([model.forward(batch[i]).data for i in range(5)])
        np.testing.assert_allclose(together, separate, atol=1e-5)

    def test_eval_forward_deterministic(self, rng):
        model = DetectorModel(tiny_config())
        x = rng.standard_normal((2, 8, 6)).astype(np.float32)
        a = model.forward(x).data
        b = model.forward(x).data
        np.testing.assert_array_equal(a, b)

    def test_delta_of_constant_sequence_zeros_lstm_input(self, rng):
        # zero the conv branch so the block keeps a constant input constant
        # in time (edge padding otherwise perturbs the boundary frames);
        # the delta of that constant sequence must be exactly zero
        model = DetectorModel(tiny_config(use_delta=True))
        for name, p in model.named_parameters():
            if name.startswith(("conv1", "conv2")):
                p.data[:] = 0.0
        col = rng.standard_normal(8).astype(np.float32)
        x = Tensor(np.tile(col[None, :, None], (1, 1, 5)))
        xp = model.conv_block(x, training=False)
        assert np.ptp(xp.data, axis=2).max() == 0.0  # constant in time
        x2 = DetectorModel.delta(xp)
        np.testing.assert_array_equal(x2.data, np.zeros((1, 8, 4), dtype=np.float32))

    def test_same_seed_same_params(self):
        a = DetectorModel(tiny_config())
        b = DetectorModel(tiny_config())
        for (na, pa), (nb, pb) in zip(a.named_parameters(), b.named_parameters()):
            assert na == nb
            np.testing.assert_array_equal(pa.data, pb.data)

    def test_param_count_golden(self):
        model = DetectorModel(tiny_config())
        # conv 200+200, bn 16+16, lstm 208+144, proj 40, pool 152, mlp 36+10
        assert model.num_params() == 1022

    def test_param_names_unique_and_stable(self):
        model = DetectorModel(tiny_config())
        names = [name for name, _ in model.named_parameters()]
        assert len(names) == len(set(names))
        assert names[0] == "conv1.weight"
        assert DetectorModel(tiny_config()).parameters()[0].name == "conv1.weight"


class TestScore:
    def test_symmetry_zero(self):
        assert score(np.array([0.0, 0.0])) == 0.0

    def test_subtraction(self):
        assert score(np.array([-2.0, 3.0])) == 5.0

    def test_monotone_in_bonafide_logit(self):
        base = score(np.array([0.5, 1.0]))
        assert score(np.array([0.5, 1.5])) > base

    def test_antisymmetry(self, rng):
        logits = rng.standard_normal(2)
        assert score(logits) == -score(logits[::-1].copy())

    def test_batched(self, rng):
        logits = rng.standard_normal((6, 2))
        np.testing.assert_allclose(score(logits), logits[:, 1] - logits[:, 0])


class TestEndToEndGradients:
    def test_detector_grads_match_finite_differences(self, rng):
        from nonsemdetect.nn import functional as F

        model = DetectorModel(tiny_config(use_delta=True))
        model.set_dtype(np.float64)
        x = rng.standard_normal((3, 8, 5))
        labels = np.array([0, 1, 1])

        def loss_value():
            logits = model.forward(Tensor(x, dtype=np.float64), training=True)
            return F.weighted_softmax_ce(logits, labels, (0.1, 0.9))

        loss = loss_value()
        model.zero_grad()
        loss.backward()

        params = dict(model.named_parameters())
        picker = np.random.default_rng(77)
        names = sorted(params)
        checked = 0
        h = 1e-3
        while checked < 24:
            name = names[picker.integers(len(names))]
            p = params[name]
            idx = tuple(picker.integers(s) for s in p.data.shape)
            orig = p.data[idx]
            p.data[idx] = orig + h
            hi = float(loss_value().data)
            p.data[idx] = orig - h
            lo = float(loss_value().data)
            p.data[idx] = orig
            numeric = (hi - lo) / (2.0 * h)
            analytic = p.grad[idx]
            denom = max(abs(numeric), abs(analytic), 1e-8)
            assert abs(analytic - numeric) / denom <= 1e-3, (
                f"{name}{idx}: analytic {analytic} vs numeric {numeric}"
            )
            checked += 1


class TestCheckpoint:
    def test_round_trip_bit_exact(self, rng, tmp_path):
        model = DetectorModel(tiny_config(use_delta=True))
        # make running stats nontrivial before saving
        model.forward(rng.standard_normal((4, 8, 6)).astype(np.float32), training=True)
        path = tmp_path / "model.ckpt"
        save_checkpoint(model, path)
        back, adam = load_checkpoint(path)
        assert adam is None
        assert back.config == model.config
        for (na, pa), (nb, pb) in zip(model.named_parameters(), back.named_parameters()):
            assert na == nb
            assert pa.data.tobytes() == pb.data.tobytes()
        for name, buf in model.bn_buffers().items():
            assert buf.tobytes() == back.bn_buffers()[name].tobytes()

    def test_round_trip_with_adam_state(self, rng, tmp_path):
        from nonsemdetect.nn import functional as F

        model = DetectorModel(tiny_config())
        opt = make_optimizer(model)
        x = rng.standard_normal((4, 8, 6)).astype(np.float32)
        logits = model.forward(x, training=True)
        loss = F.weighted_softmax_ce(logits, np.array([0, 1, 0, 1]), (0.1, 0.9))
        loss.backward()
        opt.step(lr=1e-3)
        path = tmp_path / "model.ckpt"
        save_checkpoint(model, path, adam=opt.state)
        back, adam = load_checkpoint(path)
        assert adam is not None and adam.step == 1
        resumed = make_optimizer(back, adam)
        for name in resumed.state.m:
            assert resumed.state.m[name].tobytes() == opt.state.m[name].tobytes()
            assert resumed.state.v[name].tobytes() == opt.state.v[name].tobytes()

    def test_scores_identical_after_reload(self, rng, tmp_path):
        model = DetectorModel(tiny_config())
        x = rng.standard_normal((3, 8, 6)).astype(np.float32)
        path = tmp_path / "model.ckpt"
        save_checkpoint(model, path)
        back, _ = load_checkpoint(path)
        np.testing.assert_array_equal(
            score(model.forward(x)), score(back.forward(x))
        )

    def test_random_config_round_trips(self, rng, tmp_path):
        for case in range(200):
            cfg = DetectorConfig(
                input_dim=int(rng.integers(2, 7)),
                conv_kernel=int(rng.choice([1, 3, 5])),
                use_delta=bool(rng.integers(0, 2)),
                lstm_hidden=int(rng.integers(2, 5)),
                projection_dim=4,
                attention_heads=int(rng.choice([1, 2, 4])),
                mlp_hidden=int(rng.integers(2, 5)),
                seed=case,
            )
            model = DetectorModel(cfg)
            path = tmp_path / "m.ckpt"
            save_checkpoint(model, path)
            back, _ = load_checkpoint(path)
            assert back.config == cfg
            for (_, pa), (_, pb) in zip(model.named_parameters(), back.named_parameters()):
                assert pa.data.tobytes() == pb.data.tobytes()

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "bad.ckpt"
        path.write_bytes(b"NOPE" + b"\x00" * 32)
        with pytest.raises(FormatError, match="magic"):
            load_checkpoint(path)

    def test_truncated_rejected(self, rng, tmp_path):
        model = DetectorModel(tiny_config())
        path = tmp_path / "model.ckpt"
        save_checkpoint(model, path)
        blob = path.read_bytes()
        path.write_bytes(blob[: len(blob) - 7])
        with pytest.raises(FormatError, match="truncated"):
            load_checkpoint(path)
