"""Training stages: standard training, synthetic pre-training followed by
real-only fine-tuning, and distillation-based post-training under modality
dropout.

Post-training clones the trained model into a frozen teacher and a trainable
student. Each epoch the teacher sees full-modality inputs while the student
sees the same inputs with one randomly removed modality; the student
minimizes its segmentation loss plus the mean squared error between teacher
and student hidden features, and every ``k`` epochs the teacher is replaced
wholesale by the current student.

All loops are full-batch, single-threaded and deterministic for a fixed
seed. Mini-batching is available through ``TrainConfig.batch_voxels`` but is
off by default at desk scale.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import NonFiniteLoss, TooFewModalities
from .model import (
    Adam,
    ToyModel,
    drop_encoded,
    encode_inputs,
    encode_labels,
    forward,
    kd_loss,
    backward,
    poly_lr,
    predict_labels,
    seg_loss,
    soft_dice_loss,
)
from .volume import LabelVolume, MultiModalVolume

log = logging.getLogger(__name__)

TrainingPair = tuple[MultiModalVolume, LabelVolume]

LOG_COLUMNS = ("stage", "epoch", "lr", "l_seg", "l_kd", "l_post", "dice_wt", "dice_tc", "dice_et")


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 100
    lr: float = 2e-4
    poly_power: float = 0.9
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    # one-to-many regime: randomly remove one modality from the inputs
    modality_dropout: bool = False
    # one-to-one regime: train on a fixed modality subset only
    fixed_modalities: tuple[int, ...] | None = None
    batch_voxels: int | None = None  # None = full batch
    soft_dice: bool = False


@dataclass(frozen=True)
class KDSchedule:
    """Teacher-refresh period and epoch budget for post-training."""

    k: int = 5
    epochs: int = 25
    drop_policy: str = "remove-one-uniform"
    distill_predictions: bool = False

    def __post_init__(self) -> None:
        if self.k < 1:
            raise ValueError(f"k must be >= 1, got {self.k}")
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if self.drop_policy != "remove-one-uniform":
            raise ValueError(f"unknown drop policy {self.drop_policy!r}")


@dataclass
class EpochRow:
    stage: str
    epoch: int
    lr: float
    l_seg: float
    l_kd: float
    l_post: float
    dice_wt: float | None = None
    dice_tc: float | None = None
    dice_et: float | None = None
    teacher_digest: str | None = None
    student_digest: str | None = None


def write_log_csv(path: str | Path, rows: Sequence[EpochRow]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(LOG_COLUMNS)
        for r in rows:
            writer.writerow(
                [
                    r.stage,
                    r.epoch,
                    f"{r.lr:.10g}",
                    f"{r.l_seg:.17g}",
                    f"{r.l_kd:.17g}",
                    f"{r.l_post:.17g}",
                    "" if r.dice_wt is None else f"{r.dice_wt:.6f}",
                    "" if r.dice_tc is None else f"{r.dice_tc:.6f}",
                    "" if r.dice_et is None else f"{r.dice_et:.6f}",
                ]
            )


# ---------------------------------------------------------------------------
# Modality dropout


def drop_modality(image: MultiModalVolume, rng: np.random.Generator) -> MultiModalVolume:
    """Remove one available modality uniformly at random (zero-filled slot,
    availability bit cleared)."""
    available = [i for i, ok in enumerate(image.availability) if ok]
    if len(available) < 2:
        raise TooFewModalities(f"need >= 2 modalities to drop one, have {len(available)}")
    victim = available[int(rng.integers(0, len(available)))]
    return MultiModalVolume(
        tuple(None if i == victim else m for i, m in enumerate(image.modalities))
    )


def _drop_slot(availability: Sequence[bool], rng: np.random.Generator) -> int:
    """The encoded-matrix twin of :func:`drop_modality`: same draw, same
    uniform choice among available slots."""
    available = [i for i, ok in enumerate(availability) if ok]
    if len(available) < 2:
        raise TooFewModalities(f"need >= 2 modalities to drop one, have {len(available)}")
    return available[int(rng.integers(0, len(available)))]


# ---------------------------------------------------------------------------
# Shared epoch machinery


def _encode_dataset(data: Sequence[TrainingPair]) -> tuple[list[np.ndarray], list[np.ndarray], list[tuple[bool, ...]]]:
    xs, ys, avail = [], [], []
    for image, labels in data:
        xs.append(encode_inputs(image))
        ys.append(encode_labels(labels))
        avail.append(image.availability)
    return xs, ys, avail


def _check_finite(value: float, context: str) -> None:
    if not np.isfinite(value):
        raise NonFiniteLoss(f"{context}: loss became {value}")


def _batches(n: int, batch_voxels: int | None, rng: np.random.Generator):
    """Yield row-index batches; ``None`` means one full-batch step."""
    if batch_voxels is None or batch_voxels >= n:
        yield None
        return
    order = rng.permutation(n)
    for start in range(0, n, batch_voxels):
        yield order[start : start + batch_voxels]


def _val_dice(model: ToyModel, val_data: Sequence[TrainingPair] | None):
    if not val_data:
        return None, None, None
    from .metrics import evaluate  # local import to avoid a cycle

    wt, tc, et = evaluate(lambda img: predict_labels(model, img), list(val_data), (0, 1, 2, 3))
    return wt, tc, et


def train_standard(
    model: ToyModel,
    data: Sequence[TrainingPair],
    cfg: TrainConfig,
    val_data: Sequence[TrainingPair] | None = None,
    stage: str = "train",
) -> tuple[ToyModel, list[EpochRow]]:
    """Full-batch Adam on the segmentation loss with a poly learning-rate
    schedule. Returns the trained model (a copy) and per-epoch log rows."""
    if not data:
        raise ValueError("no training data")
    model = model.copy()
    if cfg.epochs == 0:
        return model, []
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 101]))
    xs, ys, avail = _encode_dataset(data)
    if cfg.fixed_modalities is not None:
        keep = set(cfg.fixed_modalities)
        for j, x in enumerate(xs):
            for slot in range(4):
                if slot not in keep:
                    xs[j] = drop_encoded(xs[j], slot)
    y_all = np.concatenate(ys)
    x_static = None
    if not cfg.modality_dropout:
        x_static = xs[0] if len(xs) == 1 else np.concatenate(xs)

    loss_fn = soft_dice_loss if cfg.soft_dice else seg_loss
    opt = Adam(model, cfg.beta1, cfg.beta2, cfg.eps)
    rows: list[EpochRow] = []
    for epoch in range(1, cfg.epochs + 1):
        if cfg.modality_dropout:
            epoch_xs = [drop_encoded(x, _drop_slot(a, rng)) for x, a in zip(xs, avail)]
            x_all = np.concatenate(epoch_xs)
        else:
            x_all = x_static
        lr = poly_lr(cfg.lr, epoch - 1, cfg.epochs, cfg.poly_power)
        l_seg = 0.0
        for batch in _batches(x_all.shape[0], cfg.batch_voxels, rng):
            xb = x_all if batch is None else x_all[batch]
            yb = y_all if batch is None else y_all[batch]
            feats, scores = forward(model, xb)
            l_seg, dscores = loss_fn(scores, yb)
            _check_finite(l_seg, f"{stage} epoch {epoch}")
            grads = backward(model, xb, feats, dscores)
            opt.step(model, grads, lr)
        wt, tc, et = _val_dice(model, val_data)
        rows.append(EpochRow(stage, epoch, lr, l_seg, 0.0, l_seg, wt, tc, et))
    return model, rows


def pretrain_then_finetune(
    model: ToyModel,
    synthetic_data: Sequence[TrainingPair],
    real_data: Sequence[TrainingPair],
    pretrain_cfg: TrainConfig,
    finetune_cfg: TrainConfig,
    val_data: Sequence[TrainingPair] | None = None,
) -> tuple[ToyModel, list[EpochRow]]:
    """Stage one trains on synthetic data only, stage two continues on real
    data only; the two corpora are never mixed."""
    rows: list[EpochRow] = []
    if synthetic_data:
        model, pre_rows = train_standard(model, synthetic_data, pretrain_cfg, val_data, stage="pretrain")
        rows.extend(pre_rows)
        log.info("pretrain done: %d epochs on %d synthetic samples", pretrain_cfg.epochs, len(synthetic_data))
    else:
        log.info("pretrain skipped: no synthetic data")
    model, fine_rows = train_standard(model, real_data, finetune_cfg, val_data, stage="finetune")
    rows.extend(fine_rows)
    log.info(
        "finetune done: %d epochs on %d real samples (stage boundary at epoch %d)",
        finetune_cfg.epochs,
        len(real_data),
        len(rows) - len(fine_rows),
    )
    return model, rows


def post_train(
    trained: ToyModel,
    data: Sequence[TrainingPair],
    sched: KDSchedule,
    cfg: TrainConfig,
    val_data: Sequence[TrainingPair] | None = None,
) -> tuple[ToyModel, list[EpochRow]]:
    """Distillation post-training.

    The teacher starts as a copy of the trained model and stays frozen
    except for a wholesale replacement by the student every ``sched.k``
    epochs. Per-epoch rows carry teacher/student parameter digests so the
    refresh protocol is auditable after the fact.
    """
    if not data:
        raise ValueError("no post-training data")
    teacher = trained.copy()
    student = trained.copy()
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 202]))
    xs, ys, avail = _encode_dataset(data)
    y_all = np.concatenate(ys)
    x_full = xs[0] if len(xs) == 1 else np.concatenate(xs)

    # Teacher outputs only change when the teacher is refreshed.
    f_teacher, scores_teacher = forward(teacher, x_full)

    opt = Adam(student, cfg.beta1, cfg.beta2, cfg.eps)
    rows: list[EpochRow] = []
    for epoch in range(1, sched.epochs + 1):
        dropped = [drop_encoded(x, _drop_slot(a, rng)) for x, a in zip(xs, avail)]
        x_student = dropped[0] if len(dropped) == 1 else np.concatenate(dropped)

        f_s, scores_s = forward(student, x_student)
        l_seg, dscores = seg_loss(scores_s, y_all)
        l_kd, dfeat = kd_loss(f_teacher, f_s)
        if sched.distill_predictions:
            l_pred, dpred = kd_loss(scores_teacher, scores_s)
            l_kd += l_pred
            dscores = dscores + dpred
        l_post = l_seg + l_kd
        _check_finite(l_post, f"posttrain epoch {epoch}")
        grads = backward(student, x_student, f_s, dscores, dfeat)

        lr = poly_lr(cfg.lr, epoch - 1, sched.epochs, cfg.poly_power)
        opt.step(student, grads, lr)

        wt, tc, et = _val_dice(student, val_data)
        rows.append(
            EpochRow(
                "posttrain",
                epoch,
                lr,
                l_seg,
                l_kd,
                l_post,
                wt,
                tc,
                et,
                teacher_digest=teacher.digest(),
                student_digest=student.digest(),
            )
        )
        if epoch % sched.k == 0:
            teacher = student.copy()
            f_teacher, scores_teacher = forward(teacher, x_full)
            log.info("teacher refreshed at epoch %d", epoch)
    return student, rows
