"""Training: soft Dice loss, warmup + cosine schedule, accumulation, checkpoints."""

import csv
import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
import torch

from .augment import AugmentConfig, augment_sample, sample_rng
from .dataset import Chip
from .exceptions import EmptyDataset, NonFiniteLoss, ShapeMismatch
from .infer import predict_single, predict_tta, resize_prob_to_original
from .metrics import dataset_dice
from .model.checkpoint import save_checkpoint
from .model.spec import DecoderFamily
from .postprocess import binarize
from .preprocess import PreprocessConfig, preprocess_chip

logger = logging.getLogger(__name__)

DICE_EPS = 1e-6


@dataclass(frozen=True)
class TrainConfig:
    """Optimization settings.

    ``epochs`` counts cosine epochs; ``warmup_epochs`` run before them at the
    constant ``lr_warmup``. Learning rates are for the encoder group; the
    decoder group gets ``decoder_lr_multiplier`` times as much.
    ``optimizer="sgd"`` is plain gradient descent (no momentum).
    """

    epochs: int = 30
    warmup_epochs: int = 1
    lr_peak: float = 5e-5
    lr_floor: float = 5e-7
    lr_warmup: float = 1e-6
    decoder_lr_multiplier: float = 10.0
    batch_size: int = 4
    accumulation_steps: int = 3
    weight_decay: float = 0.01
    grad_reset_to_absent: bool = True
    optimizer: str = "adamw"
    loss_reduction: str = "batch"
    val_threshold: float = 0.5
    val_tta: bool = False
    augment: bool = True
    seed: int = 0

    def __post_init__(self):
        if not self.lr_floor < self.lr_warmup < self.lr_peak:
            raise ValueError(
                "learning rates must satisfy lr_floor < lr_warmup < lr_peak, got "
                f"{self.lr_floor}, {self.lr_warmup}, {self.lr_peak}"
            )
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.warmup_epochs < 0:
            raise ValueError("warmup_epochs must be >= 0")
        if self.accumulation_steps < 1:
            raise ValueError("accumulation_steps must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.decoder_lr_multiplier <= 0:
            raise ValueError("decoder_lr_multiplier must be > 0")
        if self.optimizer not in ("adamw", "sgd"):
            raise ValueError(f"optimizer must be 'adamw' or 'sgd', got {self.optimizer!r}")
        if self.loss_reduction not in ("batch", "image"):
            raise ValueError("loss_reduction must be 'batch' or 'image'")
        if not 0.0 < self.val_threshold < 1.0:
            raise ValueError("val_threshold must lie in (0, 1)")

    @property
    def total_epochs(self):
        return self.warmup_epochs + self.epochs

    def to_dict(self):
        return asdict(self)


def dice_loss(probabilities, target, eps=DICE_EPS, reduction="batch"):
    """``1 - (2 sum(p t) + eps) / (sum(p) + sum(t) + eps)``.

    ``reduction="batch"`` sums over the whole batch; ``"image"`` computes one
    loss per leading index and averages them.
    """
    p = torch.as_tensor(probabilities)
    t = torch.as_tensor(target).to(p.dtype)
    if p.shape != t.shape:
        raise ShapeMismatch(f"probabilities {tuple(p.shape)} and target {tuple(t.shape)} differ")
    if reduction == "batch":
        inter, denom = (p * t).sum(), p.sum() + t.sum()
    elif reduction == "image":
        dims = tuple(range(1, p.ndim))
        inter, denom = (p * t).sum(dims), p.sum(dims) + t.sum(dims)
    else:
        raise ValueError(f"unknown reduction {reduction!r}")
    return (1.0 - (2.0 * inter + eps) / (denom + eps)).mean()


def lr_at_step(config, step, steps_per_epoch):
    """Encoder learning rate at optimizer step ``step`` (0-based).

    Constant ``lr_warmup`` for the warmup epochs, then a per-step cosine from
    ``lr_peak`` (first cosine step) to ``lr_floor`` (last step of training).
    """
    if step < 0:
        raise ValueError("step must be >= 0")
    warm_steps = config.warmup_epochs * steps_per_epoch
    if step < warm_steps:
        return config.lr_warmup
    cos_steps = config.epochs * steps_per_epoch
    u = (step - warm_steps) / (cos_steps - 1) if cos_steps > 1 else 0.0
    if u <= 0.0:
        return config.lr_peak
    if u >= 1.0:
        return config.lr_floor
    return (
        config.lr_floor + (config.lr_peak - config.lr_floor) * (1.0 + math.cos(math.pi * u)) / 2.0
    )


def group_lrs(config, step, steps_per_epoch):
    lr = lr_at_step(config, step, steps_per_epoch)
    return lr, lr * config.decoder_lr_multiplier


def steps_per_epoch(n_samples, config):
    n_micro = math.ceil(n_samples / config.batch_size)
    return math.ceil(n_micro / config.accumulation_steps)


def build_optimizer(model, config):
    encoder, decoder = model.parameter_groups()
    groups = []
    for params, mult in ((encoder, 1.0), (decoder, config.decoder_lr_multiplier)):
        groups.append(
            {"params": [p for _, p in params], "lr": config.lr_warmup * mult, "lr_mult": mult}
        )
    groups = [g for g in groups if g["params"]]
    if config.optimizer == "sgd":
        return torch.optim.SGD(
            groups, lr=config.lr_peak, momentum=0.0, weight_decay=config.weight_decay
        )
    return torch.optim.AdamW(groups, lr=config.lr_peak, weight_decay=config.weight_decay)


def set_lr(optimizer, lr):
    for group in optimizer.param_groups:
        group["lr"] = lr * group.get("lr_mult", 1.0)


def _batch_tensors(samples, dtype):
    x = torch.from_numpy(np.stack([s.image for s in samples])).to(dtype)
    y = torch.from_numpy(np.stack([s.mask for s in samples])).to(dtype)[:, None]
    return x, y


def accumulation_step(model, optimizer, micro_batches, loss_fn, *, set_to_none=True):
    """Backpropagate every micro-batch (loss scaled by 1/len) then take one step.

    Returns the unscaled micro-batch losses.
    """
    losses = []
    scale = 1.0 / len(micro_batches)
    for x, y in micro_batches:
        loss = loss_fn(model, x, y)
        if not torch.isfinite(loss):
            raise NonFiniteLoss(f"loss became {loss.item()} (check inputs and parameters)")
        (loss * scale).backward()
        losses.append(loss.item())
    optimizer.step()
    optimizer.zero_grad(set_to_none=set_to_none)
    return losses


def make_loss_fn(reduction="batch"):
    def loss_fn(model, x, y):
        return dice_loss(torch.sigmoid(model.forward(x)), y, reduction=reduction)

    return loss_fn


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_dice: float = None
    lr_encoder: float = None
    lr_decoder: float = None
    lr_samples: list = field(default_factory=list)
    optimizer_steps: int = 0
    seconds: float = 0.0


@dataclass
class TrainHistory:
    records: list = field(default_factory=list)
    best_epoch: int = None
    best_score: float = None
    wall_clock: float = 0.0

    @property
    def train_losses(self):
        return [r.train_loss for r in self.records]

    def write_csv(self, path):
        # timings stay out of the file so equal runs give equal bytes
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        cols = [
            "epoch",
            "train_loss",
            "val_dice",
            "lr_encoder",
            "lr_decoder",
            "optimizer_steps",
        ]
        with path.open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(cols)
            for r in self.records:
                writer.writerow(["" if getattr(r, c) is None else getattr(r, c) for c in cols])
        return path


def _samples(data, config):
    samples = []
    for item in data:
        if isinstance(item, Chip):
            if item.mask is None:
                raise EmptyDataset(f"chip {item.chip_id} has no mask")
            item = preprocess_chip(item, config)
        elif item.mask is None:
            raise EmptyDataset(f"sample {item.chip_id} has no mask")
        samples.append(item)
    return samples


def validation_dice(model, chips, preprocess_config, threshold=0.5, tta=False):
    """Pooled Dice at chip resolution for labeled ``chips``."""
    predict = predict_tta if tta else predict_single
    pairs = []
    for chip in chips:
        sample = preprocess_chip(chip, preprocess_config)
        prob = resize_prob_to_original(predict(model, sample.image), preprocess_config.chip_size)
        pairs.append((binarize(prob, threshold), chip.mask))
    return dataset_dice(pairs)


def fit(
    model,
    train_data,
    val_data=None,
    train_config=TrainConfig(),
    preprocess_config=None,
    augment_config=AugmentConfig(),
    *,
    checkpoint_dir=None,
):
    """Train ``model`` in place and return ``(model, history)``.

    ``train_data`` holds labeled :class:`Chip` objects or ready
    :class:`NormalizedSample` objects; ``val_data`` holds labeled chips and
    is scored each epoch at chip resolution. With ``checkpoint_dir``,
    ``best.ckpt`` (highest validation Dice, or lowest training loss without
    validation data) and ``last.ckpt`` are written every epoch.
    """
    train_data = list(train_data)
    if not train_data:
        raise EmptyDataset("no training data")
    if preprocess_config is None:
        first = train_data[0]
        chip_size = first.size if isinstance(first, Chip) else model.spec.train_size
        preprocess_config = PreprocessConfig(train_size=model.spec.train_size, chip_size=chip_size)
    if preprocess_config.train_size != model.spec.train_size:
        raise ShapeMismatch(
            f"preprocess train_size {preprocess_config.train_size} != model train_size "
            f"{model.spec.train_size}"
        )
    cfg = train_config
    samples = _samples(train_data, preprocess_config)
    val_chips = list(val_data or [])
    for s in samples:
        if s.size != model.spec.train_size:
            raise ShapeMismatch(
                f"sample {s.chip_id} is {s.size}px, model expects {model.spec.train_size}"
            )

    dtype = next(model.module.parameters()).dtype
    optimizer = build_optimizer(model, cfg)
    optimizer.zero_grad(set_to_none=True)
    loss_fn = make_loss_fn(cfg.loss_reduction)
    spe = steps_per_epoch(len(samples), cfg)
    aug_seed = f"{cfg.seed}/{augment_config.rng_seed}"
    history = TrainHistory()
    checkpoint_dir = Path(checkpoint_dir) if checkpoint_dir is not None else None
    step = 0
    start = time.perf_counter()

    for epoch in range(cfg.total_epochs):
        t0 = time.perf_counter()
        model.train()
        order = np.random.default_rng([cfg.seed, epoch]).permutation(len(samples))
        micro = []
        for i in range(0, len(order), cfg.batch_size):
            batch = [samples[j] for j in order[i : i + cfg.batch_size]]
            if cfg.augment:
                batch = [
                    augment_sample(s, sample_rng(aug_seed, s.chip_id, epoch), augment_config)
                    for s in batch
                ]
            micro.append(_batch_tensors(batch, dtype))
        losses, lr_samples = [], []
        for g in range(0, len(micro), cfg.accumulation_steps):
            enc_lr, dec_lr = group_lrs(cfg, step, spe)
            set_lr(optimizer, enc_lr)
            lr_samples.append((step, enc_lr, dec_lr))
            losses += accumulation_step(
                model,
                optimizer,
                micro[g : g + cfg.accumulation_steps],
                loss_fn,
                set_to_none=cfg.grad_reset_to_absent,
            )
            step += 1
        model.eval()
        record = EpochRecord(
            epoch=epoch,
            train_loss=float(np.mean(losses)),
            lr_encoder=lr_samples[-1][1],
            lr_decoder=lr_samples[-1][2],
            lr_samples=lr_samples,
            optimizer_steps=len(lr_samples),
        )
        if val_chips:
            record.val_dice = validation_dice(
                model, val_chips, preprocess_config, cfg.val_threshold, cfg.val_tta
            )
            score, better = record.val_dice, lambda a, b: a > b
        else:
            score, better = record.train_loss, lambda a, b: a < b
        record.seconds = time.perf_counter() - t0
        history.records.append(record)
        improved = history.best_score is None or better(score, history.best_score)
        if improved:
            history.best_epoch, history.best_score = epoch, score
        logger.info(
            json.dumps(
                {
                    "event": "epoch",
                    "model": model.spec.name,
                    "epoch": epoch,
                    "train_loss": record.train_loss,
                    "val_dice": record.val_dice,
                    "lr_encoder": record.lr_encoder,
                    "lr_decoder": record.lr_decoder,
                    "steps": record.optimizer_steps,
                    "seconds": round(record.seconds, 4),
                }
            )
        )
        if checkpoint_dir is not None:
            state = {
                "epoch": epoch,
                "train_loss": record.train_loss,
                "val_dice": record.val_dice,
                "best_epoch": history.best_epoch,
                "optimizer_step": step,
                "train_config": cfg.to_dict(),
                "preprocess_config": preprocess_config.to_dict(),
            }
            save_checkpoint(checkpoint_dir / "last.ckpt", model, state, optimizer)
            if improved:
                save_checkpoint(checkpoint_dir / "best.ckpt", model, state, optimizer)

    history.wall_clock = time.perf_counter() - start
    if checkpoint_dir is not None:
        history.write_csv(checkpoint_dir / "history.csv")
    return model, history


def default_train_config(spec, **overrides):
    """Paper defaults per decoder: U-Nets get the 10x decoder rate and 5 extra epochs."""
    if spec.decoder_family is DecoderFamily.UPPERNET:
        base = TrainConfig(epochs=30, decoder_lr_multiplier=1.0)
    else:
        base = TrainConfig(epochs=35)
    return replace(base, **overrides)
