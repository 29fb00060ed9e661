"""LR schedule, recipe behavior, synthetic end-to-end training."""

import numpy as np
import pytest

from nonsemdetect.datasets import (
    DatasetSplit,
    TrialRecord,
    batch_iterator,
    generate_synthetic_dataset,
)
from nonsemdetect.detector import DetectorConfig, DetectorModel, load_checkpoint
from nonsemdetect.errors import ConfigurationError, NumericError
from nonsemdetect.features import EmbeddingMatrix
from nonsemdetect.metrics import compute_eer, scores_by_class
from nonsemdetect.nn import Tensor, weighted_softmax_ce
from nonsemdetect.training import (
    TrainConfig,
    TrainLog,
    dev_eer,
    evaluate_checkpoint,
    lr_at_epoch,
    train,
)


def quickstart_config(seed=0):
    return DetectorConfig(
        input_dim=16,
        lstm_hidden=32,
        projection_dim=128,
        attention_heads=4,
        mlp_hidden=128,
        seed=seed,
    )


def synthetic_splits(tmp_path, seed=42, separation=5.0, d=16, t=10):
    kw = dict(seed=seed, d=d, t=t, separation=separation)
    tr = generate_synthetic_dataset(tmp_path / "train", n_bonafide=200, n_spoof=200, name="train", **kw)
    dv = generate_synthetic_dataset(tmp_path / "dev", n_bonafide=50, n_spoof=50, name="dev", **kw)
    ev = generate_synthetic_dataset(tmp_path / "eval", n_bonafide=100, n_spoof=100, name="eval", **kw)
    return tr, dv, ev


class TestLrSchedule:
    def test_default_schedule_values(self):
        assert lr_at_epoch(1e-4, 0.05, 0) == 1e-4
        assert lr_at_epoch(1e-4, 0.05, 1) == pytest.approx(9.5e-5, rel=1e-12)
        assert lr_at_epoch(1e-4, 0.05, 2) == pytest.approx(9.025e-5, rel=1e-12)

    def test_full_schedule_relative_error(self):
        for e in range(50):
            assert lr_at_epoch(1e-4, 0.05, e) == pytest.approx(1e-4 * 0.95**e, rel=1e-12)

    def test_negative_epoch_rejected(self):
        with pytest.raises(ConfigurationError):
            lr_at_epoch(1e-4, 0.05, -1)


class TestWeightsAreLive:
    def test_swapped_weights_change_mixed_batch_loss(self, rng):
        logits = Tensor(rng.standard_normal((8, 2)).astype(np.float32))
        labels = np.array([0, 1] * 4)
        a = float(weighted_softmax_ce(logits, labels, (0.1, 0.9)).data)
        b = float(weighted_softmax_ce(logits, labels, (0.9, 0.1)).data)
        assert a != b

    def test_uniform_weights_equal_plain_mean(self, rng):
        logits = rng.standard_normal((6, 2))
        labels = np.array([0, 1, 0, 1, 1, 0])
        weighted = float(weighted_softmax_ce(Tensor(logits), labels, (1.0, 1.0)).data)
        z = logits - logits.max(axis=1, keepdims=True)
        logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
        assert weighted == pytest.approx(-logp[np.arange(6), labels].mean(), rel=1e-6)


class TestBatching:
    def _tiny_split(self, rng, n):
        records = []
        for i in range(n):
            m = EmbeddingMatrix(rng.standard_normal((4, 3)).astype(np.float32), 200, "syn")
            records.append(TrialRecord(f"u{i:03d}", "bonafide" if i % 2 else "spoof",
                                       None if i % 2 else "A01", matrix=m))
        return DatasetSplit("t", records)

    def test_batch_sizes_and_partition(self, rng):
        split = self._tiny_split(rng, 130)
        batches = list(batch_iterator(split, 64, seed=3, epoch=0))
        assert [len(b[2]) for b in batches] == [64, 64, 2]
        seen = [u for b in batches for u in b[2]]
        assert sorted(seen) == sorted(r.utt_id for r in split.records)
        assert len(set(seen)) == len(seen)

    def test_same_seed_epoch_same_order(self, rng):
        split = self._tiny_split(rng, 20)
        a = [u for b in batch_iterator(split, 8, seed=5, epoch=2) for u in b[2]]
        b = [u for b in batch_iterator(split, 8, seed=5, epoch=2) for u in b[2]]
        c = [u for b in batch_iterator(split, 8, seed=5, epoch=3) for u in b[2]]
        assert a == b
        assert a != c

    def test_missing_embedding_file_named(self, tmp_path):
        from nonsemdetect.errors import DataError

        rec = TrialRecord("lost", "spoof", "A01", embedding_path=str(tmp_path / "nope.emb"))
        split = DatasetSplit("t", [rec])
        with pytest.raises(DataError, match="lost"):
            list(batch_iterator(split, 4, seed=0, epoch=0))


class TestTrain:
    def test_separable_reaches_zero_dev_eer(self, tmp_path):
        tr, dv, ev = synthetic_splits(tmp_path)
        model = DetectorModel(quickstart_config())
        best_path, log = train(model, tr, dv, TrainConfig(epochs=10, batch_size=64, seed=0,
                                                          checkpoint_dir=str(tmp_path / "ckpt")))
        assert log.best_dev_eer == 0.0
        assert log.best_epoch <= 9
        # logistic regression on frame means attains 0 too (the data is that separable)
        from sklearn.linear_model import LogisticRegression

        from nonsemdetect.datasets import ordered_batches

        x, labels, _ = next(ordered_batches(tr, 400))
        xd, yd, _ = next(ordered_batches(dv, 100))
        clf = LogisticRegression(max_iter=1000).fit(x.mean(axis=2), labels)
        probs = clf.predict_proba(xd.mean(axis=2))[:, 1]
        oracle = compute_eer(probs[yd == 1], probs[yd == 0]).eer
        assert oracle == 0.0

        # eval split scores perfectly with the best checkpoint
        entries = evaluate_checkpoint(best_path, ev)
        bon, spf = scores_by_class(entries, ev)
        assert compute_eer(bon, spf).eer == 0.0

    def test_unseparable_is_chance_level(self, tmp_path):
        tr, dv, _ = synthetic_splits(tmp_path, separation=0.0)
        model = DetectorModel(quickstart_config())
        _, log = train(model, tr, dv, TrainConfig(epochs=3, batch_size=64, seed=0))
        assert 0.35 <= log.best_dev_eer <= 0.65

    def test_loss_decreases_by_epoch_five(self, tmp_path):
        tr, dv, _ = synthetic_splits(tmp_path)
        model = DetectorModel(quickstart_config())
        _, log = train(model, tr, dv, TrainConfig(epochs=6, batch_size=64, seed=0))
        assert log.epochs[5].train_loss < log.epochs[0].train_loss

    def test_deterministic_loss_sequence(self, tmp_path):
        tr, dv, _ = synthetic_splits(tmp_path)
        runs = []
        for _ in range(2):
            model = DetectorModel(quickstart_config(seed=3))
            _, log = train(model, tr, dv, TrainConfig(epochs=3, batch_size=64, seed=3))
            runs.append([(e.lr, e.train_loss, e.dev_eer) for e in log.epochs])
        assert runs[0] == runs[1]

    def test_lr_column_matches_formula(self, tmp_path):
        tr, dv, _ = synthetic_splits(tmp_path)
        model = DetectorModel(quickstart_config())
        _, log = train(model, tr, dv, TrainConfig(epochs=4, batch_size=64, seed=0))
        for e in log.epochs:
            assert e.lr == pytest.approx(1e-4 * 0.95**e.epoch, rel=1e-12)

    def test_checkpoint_reproduces_recorded_dev_eer(self, tmp_path):
        tr, dv, _ = synthetic_splits(tmp_path)
        model = DetectorModel(quickstart_config())
        best_path, log = train(
            model, tr, dv,
            TrainConfig(epochs=3, batch_size=64, seed=0, checkpoint_dir=str(tmp_path / "ck")),
        )
        reloaded, _ = load_checkpoint(best_path)
        assert dev_eer(reloaded, dv) == log.best_dev_eer

    def test_single_class_dev_rejected(self, tmp_path, rng):
        tr, dv, _ = synthetic_splits(tmp_path)
        only_bona = DatasetSplit("dev", [r for r in dv.records if r.label == "bonafide"])
        model = DetectorModel(quickstart_config())
        with pytest.raises(ConfigurationError, match="both classes"):
            train(model, tr, only_bona, TrainConfig(epochs=1))

    def test_dim_mismatch_names_both(self, tmp_path):
        tr, dv, _ = synthetic_splits(tmp_path)
        model = DetectorModel(DetectorConfig(input_dim=8, lstm_hidden=4, projection_dim=8,
                                             attention_heads=2, mlp_hidden=4))
        with pytest.raises(ConfigurationError, match="d=16.*input_dim=8"):
            train(model, tr, dv, TrainConfig(epochs=1))

    def test_nonfinite_abort_names_coordinates(self, rng):
        records = []
        for i in range(8):
            data = rng.standard_normal((4, 3)).astype(np.float32)
            if i == 0:
                data[:] = 1.0e20  # finite input that overflows float32 batchnorm
            m = EmbeddingMatrix(data, 200, "syn")
            records.append(TrialRecord(f"u{i}", "bonafide" if i % 2 else "spoof",
                                       None if i % 2 else "A01", matrix=m))
        split = DatasetSplit("t", records)
        model = DetectorModel(DetectorConfig(input_dim=4, lstm_hidden=4, projection_dim=8,
                                             attention_heads=2, mlp_hidden=4))
        with np.errstate(over="ignore", invalid="ignore"):
            with pytest.raises(NumericError, match="epoch 0"):
                train(model, split, split, TrainConfig(epochs=1, batch_size=8))


class TestEvaluate:
    def test_scoring_twice_identical(self, tmp_path):
        tr, dv, ev = synthetic_splits(tmp_path)
        model = DetectorModel(quickstart_config())
        a = evaluate_checkpoint(model, ev)
        b = evaluate_checkpoint(model, ev)
        assert [(e.utt_id, e.score) for e in a] == [(e.utt_id, e.score) for e in b]

    def test_cardinality_and_order(self, tmp_path):
        _, _, ev = synthetic_splits(tmp_path)
        model = DetectorModel(quickstart_config())
        entries = evaluate_checkpoint(model, ev)
        assert len(entries) == 200
        assert [e.utt_id for e in entries] == sorted(e.utt_id for e in entries)

    def test_no_parameter_mutation(self, tmp_path):
        _, _, ev = synthetic_splits(tmp_path)
        model = DetectorModel(quickstart_config())
        before = {n: p.data.copy() for n, p in model.named_parameters()}
        before_stats = {n: b.copy() for n, b in model.bn_buffers().items()}
        evaluate_checkpoint(model, ev)
        for n, p in model.named_parameters():
            np.testing.assert_array_equal(p.data, before[n])
        for n, b in model.bn_buffers().items():
            np.testing.assert_array_equal(b, before_stats[n])


class TestTrainLog:
    def test_file_round_trip(self, tmp_path):
        log = TrainLog()
        from nonsemdetect.training import EpochStats

        log.epochs = [
            EpochStats(0, 1e-4, 0.693147, 0.25, 1.234),
            EpochStats(1, 9.5e-5, 0.500001, 0.0, 1.111),
        ]
        path = tmp_path / "log.tsv"
        log.write(path)
        back = TrainLog.read(path)
        assert [(e.epoch, e.lr, e.train_loss, e.dev_eer) for e in back.epochs] == [
            (e.epoch, e.lr, e.train_loss, e.dev_eer) for e in log.epochs
        ]
        assert back.best_epoch == 1
        assert back.best_dev_eer == 0.0

    def test_tie_prefers_earlier_epoch(self):
        from nonsemdetect.training import EpochStats

        log = TrainLog()
        log.epochs = [EpochStats(0, 1e-4, 0.7, 0.1, 1.0), EpochStats(1, 9.5e-5, 0.6, 0.1, 1.0)]
        assert log.best_epoch == 0
