"""Training recipe: smooth-L1 objective, Adam, plateau schedule, early stop.

The plateau scheduler is a small explicit state machine (strict
improvement resets the stagnation counter; once it exceeds the patience
with no cooldown pending, the rate is multiplied by the factor and a
cooldown starts). History is emitted one JSON record per epoch:
``{"epoch": e, "train_loss": ..., "val_mae": ..., "lr": ...}``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
import torch
from torch import Tensor

from bonetplus.checkpoint import save_checkpoint
from bonetplus.data.dataset import DataConfig, PreparedDataset
from bonetplus.errors import TrainingError
from bonetplus.model import BoNetPlus, predict_ages


def smooth_l1(y, y_hat):
    """Elementwise smooth-L1: 0.5 d^2 for |d| < 1, |d| - 0.5 otherwise.

    Accepts floats, numpy arrays, or torch tensors (autograd-safe); rejects
    non-finite inputs.
    """
    if isinstance(y, Tensor) or isinstance(y_hat, Tensor):
        y = torch.as_tensor(y)
        y_hat = torch.as_tensor(y_hat)
        if not (torch.isfinite(y).all() and torch.isfinite(y_hat).all()):
            raise TrainingError("smooth_l1 got non-finite input")
        d = y - y_hat
        return torch.where(d.abs() < 1, 0.5 * d * d, d.abs() - 0.5)
    arr_y = np.asarray(y, dtype=np.float64)
    arr_p = np.asarray(y_hat, dtype=np.float64)
    if not (np.isfinite(arr_y).all() and np.isfinite(arr_p).all()):
        raise TrainingError("smooth_l1 got non-finite input")
    d = arr_y - arr_p
    out = np.where(np.abs(d) < 1, 0.5 * d * d, np.abs(d) - 0.5)
    return float(out) if out.ndim == 0 else out


def smooth_l1_loss(preds: Tensor, targets: Tensor) -> Tensor:
    """Batch loss: mean of the elementwise smooth-L1 terms."""
    return smooth_l1(targets, preds).mean()


@dataclass
class TrainConfig:
    epochs: int = 150
    batch_size: int = 17
    initial_lr: float = 1e-3
    adam_betas: tuple[float, float] = (0.9, 0.999)
    adam_eps: float = 1e-8
    plateau_patience: int = 2
    plateau_factor: float = 0.8
    plateau_cooldown: int = 5
    early_stop_patience: int = 20
    grad_clip: float | None = None  # off by default
    augment: bool = True
    seed: int = 0

    def __post_init__(self) -> None:
        if not (0.0 < self.plateau_factor < 1.0):
            raise TrainingError(f"plateau factor must be in (0, 1), got {self.plateau_factor}")
        if self.plateau_patience < 0 or self.plateau_cooldown < 0:
            raise TrainingError("plateau patience and cooldown must be >= 0")


@dataclass
class TrainState:
    """Mutable bookkeeping carried across epochs."""

    epoch: int = 0
    current_lr: float = 1e-3
    best_val_mae: float = math.inf
    best_epoch: int = -1
    epochs_since_improvement: int = 0
    cooldown_remaining: int = 0
    reductions: int = 0
    history: list[dict] = field(default_factory=list)


def scheduler_step(state: TrainState, val_mae: float, tc: TrainConfig) -> TrainState:
    """Advance the plateau state machine by one validated epoch.

    Strict improvement of the best MAE resets the stagnation counter;
    otherwise the counter grows, and once it exceeds the patience while no
    cooldown is pending the rate shrinks by the factor and a fresh cooldown
    starts. The rate never increases.
    """
    improved = val_mae < state.best_val_mae
    if improved:
        state.best_val_mae = val_mae
        state.epochs_since_improvement = 0
    else:
        state.epochs_since_improvement += 1

    reduce_now = (
        not improved
        and state.epochs_since_improvement > tc.plateau_patience
        and state.cooldown_remaining == 0
    )
    if reduce_now:
        state.current_lr *= tc.plateau_factor
        state.reductions += 1
        state.cooldown_remaining = tc.plateau_cooldown
    elif state.cooldown_remaining > 0:
        state.cooldown_remaining -= 1
    return state


@dataclass
class TrainResult:
    best_state: dict
    best_epoch: int
    best_val_mae: float
    history: list[dict]
    stopped_early: bool


def _batch_tensors(
    imgs: np.ndarray, maps: np.ndarray, genders: np.ndarray, ages: np.ndarray
) -> tuple[Tensor, Tensor, Tensor, Tensor]:
    return (
        torch.from_numpy(imgs).float().to(memory_format=torch.channels_last),
        torch.from_numpy(maps).float().to(memory_format=torch.channels_last),
        torch.from_numpy(genders).long(),
        torch.from_numpy(ages).float(),
    )


def train(
    model: BoNetPlus,
    train_data: PreparedDataset,
    val_data: PreparedDataset,
    tc: TrainConfig,
    data_cfg: DataConfig | None = None,
    sink: Callable[[dict], None] | None = None,
    checkpoint_path: Path | str | None = None,
    last_checkpoint_path: Path | str | None = None,
    start_epoch: int = 0,
    initial_best: float = math.inf,
    stop_when: Callable[[TrainState], bool] | None = None,
) -> TrainResult:
    """Run the epoch loop and return the best-by-validation-MAE weights.

    Shuffling and augmentation draws depend only on (seed, epoch, index),
    so a fixed seed reproduces the loss curve bit for bit and a resumed run
    continues the same stream. ``stop_when`` lets callers end the loop once
    a target is met (the best checkpoint is still the one returned).
    """
    if len(train_data) == 0 or len(val_data) == 0:
        raise TrainingError("training and validation datasets must be non-empty")
    if tc.batch_size > len(train_data):
        raise TrainingError(
            f"batch_size {tc.batch_size} exceeds training set size {len(train_data)}"
        )
    data_cfg = data_cfg or DataConfig()

    model = model.to(memory_format=torch.channels_last)
    optimizer = torch.optim.Adam(
        model.parameters(), lr=tc.initial_lr, betas=tc.adam_betas, eps=tc.adam_eps
    )
    state = TrainState(current_lr=tc.initial_lr, best_val_mae=initial_best)
    best_state: dict = {}
    stopped_early = False

    for epoch in range(start_epoch, tc.epochs):
        state.epoch = epoch
        # recover the lr of an interrupted run: replay reductions on resume
        for group in optimizer.param_groups:
            group["lr"] = state.current_lr

        model.train()
        perm = np.random.default_rng(
            np.random.SeedSequence(entropy=tc.seed, spawn_key=(epoch,))
        ).permutation(len(train_data))
        total_loss, n_batches = 0.0, 0
        for lo in range(0, len(perm), tc.batch_size):
            idx = perm[lo : lo + tc.batch_size]
            if tc.augment and data_cfg.augment.enabled:
                arrays = train_data.augmented_batch(idx, data_cfg.augment, tc.seed, epoch)
            else:
                arrays = train_data.batch(idx)
            imgs, maps, genders, ages = _batch_tensors(*arrays)

            optimizer.zero_grad(set_to_none=True)
            preds = model(imgs, maps, genders)
            loss = smooth_l1_loss(preds, ages)
            if not torch.isfinite(loss):
                ids = [train_data.ids[i] for i in idx]
                raise TrainingError(f"non-finite loss at epoch {epoch} on batch {ids}")
            loss.backward()
            if tc.grad_clip is not None:
                torch.nn.utils.clip_grad_norm_(model.parameters(), tc.grad_clip)
            optimizer.step()
            total_loss += float(loss.item())
            n_batches += 1

        val_preds = predict_ages(model, val_data.images, val_data.maps, val_data.genders)
        val_mae = float(np.mean(np.abs(val_preds - val_data.ages)))

        prev_best = state.best_val_mae
        scheduler_step(state, val_mae, tc)
        improved = val_mae < prev_best
        if improved:
            state.best_epoch = epoch
            best_state = {k: v.detach().clone() for k, v in model.state_dict().items()}
            if checkpoint_path is not None:
                save_checkpoint(
                    checkpoint_path, best_state, model.cfg,
                    epoch=epoch, seed=tc.seed,
                    metrics={"best_val_mae": val_mae},
                )

        record = {
            "epoch": epoch,
            "train_loss": total_loss / max(1, n_batches),
            "val_mae": val_mae,
            "lr": state.current_lr,
        }
        state.history.append(record)
        if sink is not None:
            sink(record)
        if last_checkpoint_path is not None:
            save_checkpoint(
                last_checkpoint_path, model, model.cfg,
                epoch=epoch, seed=tc.seed,
                metrics={"best_val_mae": state.best_val_mae, "val_mae": val_mae},
            )

        if stop_when is not None and stop_when(state):
            break
        if state.epochs_since_improvement > tc.early_stop_patience:
            stopped_early = True
            break

    if not best_state:
        # no epoch improved on initial_best (resume edge case): keep current weights
        best_state = {k: v.detach().clone() for k, v in model.state_dict().items()}
    return TrainResult(
        best_state=best_state,
        best_epoch=state.best_epoch,
        best_val_mae=state.best_val_mae,
        history=state.history,
        stopped_early=stopped_early,
    )


def append_history(path: Path | str, record: dict) -> None:
    """Append one JSONL record, flushed immediately."""
    with open(path, "a") as fh:
        fh.write(json.dumps(record) + "\n")
        fh.flush()
