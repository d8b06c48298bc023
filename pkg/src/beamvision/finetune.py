"""Weighted multi-task loss and the progressive fine-tuning pipeline.

A stage plan is an ordered list of stages with a nondecreasing number of
unfrozen trailing backbone blocks: heads only, then the last block, then the
penultimate one. Each stage rebuilds the optimizer over the currently
trainable parameters, so no moment statistics leak across stage boundaries.
Everything is seed-determined: data order, initialization and logged metrics
reproduce bitwise for identical configs.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F

from .errors import DivergedTrainingError, InvalidArgumentError
from .evalmetrics import RateTable, mean_positioning_error, top_k_accuracy
from .model import (
    BeamVisionModel,
    ModelOutputs,
    save_checkpoint,
    set_block_trainable,
    trainable_mask,
)

DEFAULT_STAGE_EPOCHS = (6, 6, 6)
DEFAULT_STAGE_LRS = (1e-3, 5e-4, 2.5e-4)


@dataclass
class LossWeights:
    """Nonnegative combination weights for the three task losses."""

    w_beam: float = 1.0
    w_pos: float = 0.1
    w_blk: float = 0.1

    def __post_init__(self) -> None:
        if min(self.w_beam, self.w_pos, self.w_blk) < 0:
            raise InvalidArgumentError("loss weights must be nonnegative")
        if self.w_beam + self.w_pos + self.w_blk <= 0:
            raise InvalidArgumentError("at least one loss weight must be positive")


@dataclass
class Stage:
    """One fine-tuning stage.

    train_embed widens the trainable set to the patch/positional embeddings;
    it is off for the progressive stages and on for the all-trainable
    baseline plans (from-scratch and direct full fine-tune).
    """

    name: str
    unfreeze_last_n_blocks: int
    epochs: int
    learning_rate: float
    weights: LossWeights = field(default_factory=LossWeights)
    train_embed: bool = False

    def __post_init__(self) -> None:
        if self.unfreeze_last_n_blocks < 0:
            raise InvalidArgumentError("unfreeze_last_n_blocks must be >= 0")
        if self.epochs < 1:
            raise InvalidArgumentError("epochs must be >= 1")
        if self.learning_rate <= 0:
            raise InvalidArgumentError("learning_rate must be positive")


@dataclass
class StagePlan:
    stages: list[Stage]

    def __post_init__(self) -> None:
        if not self.stages:
            raise InvalidArgumentError("stage plan must contain at least one stage")
        ns = [s.unfreeze_last_n_blocks for s in self.stages]
        if any(a > b for a, b in zip(ns, ns[1:])):
            raise InvalidArgumentError(
                f"unfreeze_last_n_blocks must be nondecreasing across stages, got {ns}"
            )


def multitask_loss(
    outputs: ModelOutputs,
    targets: tuple[torch.Tensor, torch.Tensor, torch.Tensor | None],
    weights: LossWeights,
) -> tuple[torch.Tensor, tuple[torch.Tensor, torch.Tensor, torch.Tensor]]:
    """Weighted sum of cross-entropy, MSE and blockage BCE.

    Cross-entropy uses natural log with mean reduction; MSE averages over the
    batch and the 3 coordinate dimensions; BCE is computed from the logit.
    Returns (total, per-task) with the per-task values unweighted.
    """
    beam_labels, positions, blocked = targets
    if outputs.beam_logits.shape[0] != beam_labels.shape[0]:
        raise InvalidArgumentError("batch size mismatch between logits and labels")
    ce = F.cross_entropy(outputs.beam_logits, beam_labels)
    mse = F.mse_loss(outputs.position_pred, positions)
    if outputs.blockage_logit is not None:
        if blocked is None:
            raise InvalidArgumentError("blockage head enabled but no blockage targets given")
        bce = F.binary_cross_entropy_with_logits(outputs.blockage_logit, blocked)
    else:
        if weights.w_blk > 0:
            raise InvalidArgumentError("w_blk > 0 but the blockage head is disabled")
        bce = torch.zeros((), dtype=ce.dtype, device=ce.device)
    total = weights.w_beam * ce + weights.w_pos * mse + weights.w_blk * bce
    return total, (ce, mse, bce)


def make_default_stage_plan(
    depth: int,
    epochs: tuple[int, int, int] = DEFAULT_STAGE_EPOCHS,
    learning_rates: tuple[float, float, float] = DEFAULT_STAGE_LRS,
    weights: LossWeights | None = None,
) -> StagePlan:
    """Three-stage plan: heads only, unfreeze last block, unfreeze one more."""
    if depth < 2:
        raise InvalidArgumentError(f"default plan needs backbone depth >= 2, got {depth}")
    if learning_rates[1] > learning_rates[0] or learning_rates[2] > learning_rates[0]:
        raise InvalidArgumentError("stage 2/3 learning rates must not exceed stage 1's")
    weights = weights or LossWeights()
    names = ("stage1_heads", "stage2_last_block", "stage3_penultimate")
    return StagePlan(
        stages=[
            Stage(
                name=names[i],
                unfreeze_last_n_blocks=i,
                epochs=epochs[i],
                learning_rate=learning_rates[i],
                weights=weights,
            )
            for i in range(3)
        ]
    )


def make_full_plan(
    depth: int,
    epochs: int,
    learning_rate: float,
    weights: LossWeights | None = None,
    name: str = "full",
) -> StagePlan:
    """Degenerate one-stage all-trainable plan (baselines)."""
    return StagePlan(
        stages=[
            Stage(
                name=name,
                unfreeze_last_n_blocks=depth,
                epochs=epochs,
                learning_rate=learning_rate,
                weights=weights or LossWeights(),
                train_embed=True,
            )
        ]
    )


def apply_stage(model: BeamVisionModel, stage: Stage) -> dict[str, bool]:
    """Freeze everything, then unfreeze heads, the last n blocks, the crowning
    norm when n >= 1, and the embeddings only when the stage says so."""
    depth = model.depth
    n = stage.unfreeze_last_n_blocks
    if n > depth:
        raise InvalidArgumentError(f"cannot unfreeze {n} blocks of a depth-{depth} backbone")
    set_block_trainable(model, set(model.group_names()), False)
    unfreeze = {h for h in ("head_beam", "head_pos", "head_blk") if h in model.group_names()}
    unfreeze.update(f"block_{i}" for i in range(depth - n, depth))
    if n >= 1:
        unfreeze.add("norm")
    if stage.train_embed:
        unfreeze.add("embed")
    return set_block_trainable(model, unfreeze, True)


@dataclass
class SplitTensors:
    """In-memory tensors for one dataset split.

    Images stay uint8 and are normalized per batch; positions are kept both
    normalized (regression target) and in meters (error metric).
    """

    images: torch.Tensor  # (N, 3, H, W) uint8
    beam: torch.Tensor  # (N,) int64
    pos_norm: torch.Tensor  # (N, 3) float32, scaled by half the world extent
    blocked: torch.Tensor  # (N,) float32
    positions_m: np.ndarray  # (N, 3) float64

    @classmethod
    def from_arrays(cls, arrays: dict, world_extent_m: float) -> "SplitTensors":
        images = torch.from_numpy(np.ascontiguousarray(arrays["images"].transpose(0, 3, 1, 2)))
        half = world_extent_m / 2.0
        return cls(
            images=images,
            beam=torch.from_numpy(arrays["labels"]),
            pos_norm=torch.from_numpy((arrays["positions"] / half).astype(np.float32)),
            blocked=torch.from_numpy(arrays["blocked"].astype(np.float32)),
            positions_m=arrays["positions"],
        )

    @property
    def n(self) -> int:
        return self.images.shape[0]


def _prep(images_u8: torch.Tensor) -> torch.Tensor:
    return images_u8.float().div_(255.0).sub_(0.5).mul_(2.0)


def predict_outputs(
    model: BeamVisionModel, data: SplitTensors, batch_size: int
) -> tuple[np.ndarray, np.ndarray, np.ndarray | None]:
    """Deterministic full-split inference; returns beam logits, normalized
    position predictions and blockage logits (or None) as numpy arrays."""
    model.eval()
    logits, pos, blk = [], [], []
    with torch.no_grad():
        for start in range(0, data.n, batch_size):
            out = model(_prep(data.images[start : start + batch_size]))
            logits.append(out.beam_logits.numpy())
            pos.append(out.position_pred.numpy())
            if out.blockage_logit is not None:
                blk.append(out.blockage_logit.numpy())
    return (
        np.concatenate(logits),
        np.concatenate(pos),
        np.concatenate(blk) if blk else None,
    )


@dataclass
class TrainConfig:
    """Run-level knobs for run_progressive_finetune."""

    run_dir: Path
    batch_size: int = 64
    seed: int = 0
    weight_decay: float = 0.0
    world_extent_m: float = 100.0
    rate_table: RateTable | None = None


def run_progressive_finetune(
    model: BeamVisionModel,
    plan: StagePlan,
    train_data: SplitTensors,
    val_data: SplitTensors,
    config: TrainConfig,
) -> tuple[Path, list[dict]]:
    """Train through the plan's stages; returns (best checkpoint path, metrics).

    One metrics record per epoch: training per-task losses (unweighted) plus
    validation top-1/top-5 accuracy, positioning error in meters and rate
    ratio when a rate table is supplied. Checkpoints are written after every
    stage, plus ckpt_init before training and ckpt_best at the highest
    validation top-1.
    """
    if train_data.n == 0 or val_data.n == 0:
        raise InvalidArgumentError("train and validation splits must be nonempty")
    for stage in plan.stages:
        if stage.unfreeze_last_n_blocks > model.depth:
            raise InvalidArgumentError(
                f"stage {stage.name!r} unfreezes {stage.unfreeze_last_n_blocks} blocks "
                f"but backbone depth is {model.depth}"
            )

    run_dir = Path(config.run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    save_checkpoint(model, run_dir / "ckpt_init.pt")
    torch.manual_seed(config.seed)

    use_blk = model.head_spec.blockage
    half_extent = config.world_extent_m / 2.0
    top5_k = min(5, model.head_spec.beam_classes)
    metrics: list[dict] = []
    best_top1 = -1.0
    global_epoch = 0
    best_path = run_dir / "ckpt_best.pt"

    with open(run_dir / "metrics.jsonl", "w", encoding="utf-8") as log:
        for si, stage in enumerate(plan.stages):
            apply_stage(model, stage)
            opt = torch.optim.AdamW(
                [p for p in model.parameters() if p.requires_grad],
                lr=stage.learning_rate,
                weight_decay=config.weight_decay,
            )
            for epoch_in_stage in range(stage.epochs):
                model.train()
                rng = np.random.default_rng([config.seed, si, epoch_in_stage])
                perm = rng.permutation(train_data.n)
                loss_sums = np.zeros(3)
                for start in range(0, train_data.n, config.batch_size):
                    ids = torch.from_numpy(perm[start : start + config.batch_size])
                    out = model(_prep(train_data.images[ids]))
                    targets = (
                        train_data.beam[ids],
                        train_data.pos_norm[ids],
                        train_data.blocked[ids] if use_blk else None,
                    )
                    total, per_task = multitask_loss(out, targets, stage.weights)
                    if not torch.isfinite(total):
                        raise DivergedTrainingError(
                            f"non-finite loss at stage {stage.name!r} epoch {epoch_in_stage}"
                        )
                    opt.zero_grad()
                    total.backward()
                    opt.step()
                    loss_sums += [float(v.detach()) * len(ids) for v in per_task]
                train_losses = loss_sums / train_data.n

                logits, pos_pred, _ = predict_outputs(model, val_data, config.batch_size)
                pred_flat = np.argmax(logits, axis=1)
                top1 = top_k_accuracy(logits, val_data.beam.numpy(), 1)
                top5 = top_k_accuracy(logits, val_data.beam.numpy(), top5_k)
                pos_err = mean_positioning_error(
                    pos_pred.astype(np.float64) * half_extent, val_data.positions_m
                )
                rate_ratio = None
                if config.rate_table is not None:
                    rate_ratio = config.rate_table.evaluate(pred_flat)[2]

                record = {
                    "stage": stage.name,
                    "epoch": global_epoch,
                    "split": "val",
                    "loss_beam": float(train_losses[0]),
                    "loss_pos": float(train_losses[1]),
                    "loss_blk": float(train_losses[2]),
                    "top1": float(top1),
                    "top5": float(top5),
                    "pos_err_m": float(pos_err),
                    "rate_ratio": None if rate_ratio is None else float(rate_ratio),
                }
                metrics.append(record)
                log.write(json.dumps(record) + "\n")
                log.flush()

                if top1 > best_top1:
                    best_top1 = top1
                    save_checkpoint(
                        model,
                        best_path,
                        metadata={"stage": stage.name, "epoch": global_epoch, "top1": float(top1)},
                    )
                global_epoch += 1

            save_checkpoint(
                model,
                run_dir / f"ckpt_stage{si}.pt",
                metadata={"stage": stage.name, "trainable": trainable_mask(model)},
            )
    return best_path, metrics
