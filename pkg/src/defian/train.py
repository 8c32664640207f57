"""Mean-absolute-error training with Adam and a step-halving learning rate."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .autograd import DiffNode, abs_, as_node, backward, mean, sub
from .checkpoint import Checkpoint, capture, restore, save_checkpoint
from .config import TrainConfig
from .data import ImageFolder, PatchSampler
from .optim import Adam, clip_grad_norm


class TrainingDiverged(RuntimeError):
    pass


def mae_loss(pred, target) -> DiffNode:
    """Mean over all elements of ``|pred - target|``."""
    pred, target = as_node(pred), as_node(target)
    if pred.shape != target.shape:
        raise ValueError(f"mae_loss shape mismatch: {pred.shape} vs {target.shape}")
    return mean(abs_(sub(pred, target)))


@dataclass
class TrainResult:
    checkpoint: Checkpoint
    trace: list[tuple[int, float, float]] = field(default_factory=list)  # (step, lr, loss)


def smoothed(losses, window: int = 50) -> np.ndarray:
    """Trailing moving average; the first ``window - 1`` entries average what is available."""
    x = np.asarray(losses, dtype=np.float64)
    c = np.cumsum(np.insert(x, 0, 0.0))
    idx = np.arange(1, len(x) + 1)
    lo = np.maximum(idx - window, 0)
    return (c[idx] - c[lo]) / (idx - lo)


def _first_nonfinite(model, pred: DiffNode, with_grads: bool) -> str:
    for name, p in model.named_parameters():
        if not np.all(np.isfinite(p.value)):
            return f"parameter {name}"
    if not np.all(np.isfinite(pred.value)):
        return "network output"
    if with_grads:
        for name, p in model.named_parameters():
            if p.grad is not None and not np.all(np.isfinite(p.grad)):
                return f"gradient of {name}"
    return "loss"


def train(
    model,
    dataset: ImageFolder | PatchSampler,
    cfg: TrainConfig,
    out_dir: str | Path | None = None,
    resume: Checkpoint | None = None,
    prefetch: int = 0,
    log_every: int = 0,
) -> TrainResult:
    """Run updates ``resume.updates .. cfg.total_updates - 1``.

    Batch ``t`` is drawn from a generator seeded with ``(cfg.seed, t)``, so a
    resumed run replays exactly the batches the uninterrupted one would see.
    With ``out_dir`` the loss trace goes to ``loss.csv`` and checkpoints to
    ``step_XXXXXXX.dfan`` (every ``cfg.checkpoint_every`` updates) and ``final.dfan``.
    """
    sampler = dataset if isinstance(dataset, PatchSampler) else PatchSampler(
        dataset, cfg.batch_size, cfg.patch_size, cfg.seed, cfg.augment
    )
    params = model.parameters()
    opt = Adam(params, cfg.beta1, cfg.beta2, cfg.adam_eps)
    start = 0
    if resume is not None:
        restore(resume, model, opt)
        start = resume.updates
    if start > cfg.total_updates:
        raise ValueError(f"checkpoint is at update {start}, beyond total_updates={cfg.total_updates}")

    writer = fh = None
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        csv_path = out_dir / "loss.csv"
        keep = csv_path.exists() and start > 0
        fh = open(csv_path, "a" if keep else "w", newline="")
        writer = csv.writer(fh)
        if not keep:
            writer.writerow(["step", "lr", "loss"])

    trace = []
    try:
        for step, (lr_batch, hr_batch) in enumerate(sampler.iterate(start, cfg.total_updates, prefetch), start):
            lr = cfg.lr_at(step)
            opt.zero_grad()
            pred = model(lr_batch)
            loss = mae_loss(pred, hr_batch)
            value = float(loss.value)
            if not math.isfinite(value):
                raise TrainingDiverged(f"non-finite loss at update {step}: first bad tensor is {_first_nonfinite(model, pred, False)}")
            backward(loss)
            if not all(np.all(np.isfinite(p.grad)) for p in params if p.grad is not None):
                raise TrainingDiverged(f"non-finite gradient at update {step}: first bad tensor is {_first_nonfinite(model, pred, True)}")
            if cfg.grad_clip is not None:
                clip_grad_norm(params, cfg.grad_clip)
            opt.step(lr)
            trace.append((step, lr, value))
            if writer is not None:
                writer.writerow([step, repr(lr), repr(value)])
            if log_every and (step + 1) % log_every == 0:
                print(f"update {step + 1}/{cfg.total_updates} lr {lr:.3g} loss {value:.5f}", flush=True)
            done = step + 1
            if out_dir is not None and cfg.checkpoint_every and done % cfg.checkpoint_every == 0:
                fh.flush()
                save_checkpoint(out_dir / f"step_{done:07d}.dfan", capture(model, opt, done))
    finally:
        if fh is not None:
            fh.close()

    final = capture(model, opt, cfg.total_updates)
    if out_dir is not None:
        save_checkpoint(out_dir / "final.dfan", final)
    return TrainResult(final, trace)
