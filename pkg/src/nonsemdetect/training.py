"""Training recipe: epoch loop, weighted CE, Adam with exponential LR
decay, per-epoch dev scoring, and best-on-dev checkpoint selection."""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from pathlib import Path

from .datasets import DatasetSplit, batch_iterator, load_record_matrix, ordered_batches
from .detector import DetectorModel, load_checkpoint, make_optimizer, save_checkpoint, score
from .errors import ConfigurationError, NumericError
from .metrics import ScoreEntry, compute_eer, scores_by_class
from .nn import Tensor, weighted_softmax_ce


@dataclass
class TrainConfig:
    epochs: int = 50
    batch_size: int = 64
    lr0: float = 1e-4
    decay: float = 0.05  # multiplicative per-epoch decay rate
    class_weights: tuple[float, float] = (0.1, 0.9)  # (spoof, bonafide)
    loss_reduction: str = "weighted-mean"
    seed: int = 0
    checkpoint_dir: str | None = None

    def __post_init__(self):
        if not 0.0 <= self.decay < 1.0:
            raise ConfigurationError(f"decay must be in [0, 1), got {self.decay}")
        if self.lr0 <= 0.0:
            raise ConfigurationError(f"lr0 must be positive, got {self.lr0}")
        if any(w <= 0.0 for w in self.class_weights):
            raise ConfigurationError("class weights must be positive")
        if self.epochs < 1:
            raise ConfigurationError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ConfigurationError("batch_size must be >= 1")


@dataclass
class EpochStats:
    epoch: int
    lr: float
    train_loss: float
    dev_eer: float
    seconds: float


@dataclass
class TrainLog:
    epochs: list[EpochStats] = field(default_factory=list)

    @property
    def best_epoch(self) -> int:
        best = min(self.epochs, key=lambda e: (e.dev_eer, e.epoch))
        return best.epoch

    @property
    def best_dev_eer(self) -> float:
        return min(e.dev_eer for e in self.epochs)

    def lines(self) -> list[str]:
        out = ["epoch\tlr\ttrain_loss\tdev_eer\tseconds"]
        for e in self.epochs:
            out.append(f"{e.epoch}\t{e.lr!r}\t{e.train_loss!r}\t{e.dev_eer!r}\t{e.seconds:.3f}")
        return out

    def write(self, path) -> None:
        Path(path).write_text("\n".join(self.lines()) + "\n", encoding="utf-8")

    @classmethod
    def read(cls, path) -> "TrainLog":
        log = cls()
        rows = Path(path).read_text(encoding="utf-8").splitlines()
        for row in rows[1:]:
            if not row.strip():
                continue
            epoch, lr, loss, eer, seconds = row.split("\t")
            log.epochs.append(EpochStats(int(epoch), float(lr), float(loss), float(eer), float(seconds)))
        return log


def lr_at_epoch(lr0: float, decay: float, epoch: int) -> float:
    """Exponential schedule: lr0 * (1 - decay)^epoch, epoch 0-based."""
    if epoch < 0:
        raise ConfigurationError(f"epoch must be >= 0, got {epoch}")
    return lr0 * (1.0 - decay) ** epoch


def _check_dims(model: DetectorModel, split: DatasetSplit, what: str) -> None:
    first = load_record_matrix(split.records[0], split.root)
    if first.d != model.config.input_dim:
        raise ConfigurationError(
            f"{what} embeddings have d={first.d} but detector expects "
            f"input_dim={model.config.input_dim}"
        )
    if model.config.use_delta and first.t < 2:
        raise ConfigurationError(f"{what} has t={first.t} frames; use_delta needs t >= 2")


def score_split(model: DetectorModel, split: DatasetSplit, batch_size: int = 64) -> list[ScoreEntry]:
    """Eval-mode detection scores, one entry per record, utt_id order."""
    entries = []
    for x, _labels, utt_ids in ordered_batches(split, batch_size):
        logits = model.forward(Tensor(x), training=False)
        for utt_id, s in zip(utt_ids, score(logits)):
            entries.append(ScoreEntry(utt_id, float(s)))
    return entries


def dev_eer(model: DetectorModel, split: DatasetSplit, batch_size: int = 64) -> float:
    entries = score_split(model, split, batch_size)
    bon, spf = scores_by_class(entries, split)
    return compute_eer(bon, spf).eer


def _snapshot(model: DetectorModel):
    params = {name: p.data.copy() for name, p in model.named_parameters()}
    stats = {name: buf.copy() for name, buf in model.bn_buffers().items()}
    return params, stats


def _restore(model: DetectorModel, snapshot) -> None:
    params, stats = snapshot
    for name, p in model.named_parameters():
        p.data = params[name].copy()
    for name, buf in model.bn_buffers().items():
        buf[:] = stats[name]


def train(
    model: DetectorModel,
    train_split: DatasetSplit,
    dev_split: DatasetSplit,
    cfg: TrainConfig,
) -> tuple[str | None, TrainLog]:
    """Run the full recipe; the model ends restored to its best-on-dev state.

    Returns the best checkpoint path (None when cfg.checkpoint_dir is unset)
    and the per-epoch log. Ties on dev EER keep the earlier epoch.
    """
    if not train_split.records or not dev_split.records:
        raise ConfigurationError("train and dev splits must be non-empty")
    dev_labels = set(r.label for r in dev_split.records)
    if len(dev_labels) < 2:
        raise ConfigurationError("dev split must contain both classes for EER selection")
    _check_dims(model, train_split, "train split")
    _check_dims(model, dev_split, "dev split")

    ckpt_dir = Path(cfg.checkpoint_dir) if cfg.checkpoint_dir else None
    if ckpt_dir:
        ckpt_dir.mkdir(parents=True, exist_ok=True)
    optimizer = make_optimizer(model)
    log = TrainLog()
    best = None  # (eer, epoch, snapshot)

    for epoch in range(cfg.epochs):
        t0 = time.monotonic()
        lr = lr_at_epoch(cfg.lr0, cfg.decay, epoch)
        loss_sum = 0.0
        sample_count = 0
        for batch_idx, (x, labels, _ids) in enumerate(
            batch_iterator(train_split, cfg.batch_size, cfg.seed, epoch)
        ):
            try:
                logits = model.forward(Tensor(x), training=True)
                loss = weighted_softmax_ce(
                    logits, labels, cfg.class_weights, reduction=cfg.loss_reduction
                )
            except NumericError as exc:
                raise NumericError(
                    f"non-finite loss at epoch {epoch}, batch {batch_idx}: {exc}"
                ) from exc
            optimizer.zero_grad()
            loss.backward()
            optimizer.step(lr)
            loss_sum += float(loss.data) * len(labels)
            sample_count += len(labels)

        eer = dev_eer(model, dev_split, cfg.batch_size)
        stats = EpochStats(
            epoch=epoch,
            lr=lr,
            train_loss=loss_sum / sample_count,
            dev_eer=eer,
            seconds=time.monotonic() - t0,
        )
        log.epochs.append(stats)
        if best is None or eer < best[0]:
            best = (eer, epoch, _snapshot(model))
            if ckpt_dir:
                save_checkpoint(model, ckpt_dir / "best.ckpt")
        if ckpt_dir:
            save_checkpoint(model, ckpt_dir / "last.ckpt", adam=optimizer.state)
            log.write(ckpt_dir / "trainlog.tsv")

    _restore(model, best[2])
    return (str(ckpt_dir / "best.ckpt") if ckpt_dir else None), log


def evaluate_checkpoint(checkpoint, split: DatasetSplit, batch_size: int = 64) -> list[ScoreEntry]:
    """Score a split with frozen parameters; order-stable by utt_id."""
    if isinstance(checkpoint, DetectorModel):
        model = checkpoint
    else:
        model, _ = load_checkpoint(checkpoint)
    if not split.records:
        raise ConfigurationError(f"split '{split.name}' is empty")
    _check_dims(model, split, f"split '{split.name}'")
    return score_split(model, split, batch_size)
