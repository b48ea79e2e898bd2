"""Learning-rate schedules of the two training stages."""

import math

from torch.optim import Optimizer
from torch.optim.lr_scheduler import CyclicLR, LambdaLR, LRScheduler

from moad_fusion.models.config import TrainConfig


def stage1_scheduler(optimizer: Optimizer, cfg: TrainConfig, total_steps: int) -> LRScheduler:
    """One triangular cycle from lr/10 up to lr at mid-run and back down."""
    if cfg.stage1_schedule == "constant":
        return LambdaLR(optimizer, lambda step: 1.0)
    return CyclicLR(
        optimizer,
        base_lr=cfg.stage1_lr / 10,
        max_lr=cfg.stage1_lr,
        step_size_up=max(1, total_steps // 2),
        mode="triangular",
        cycle_momentum=False,
    )


def effective_warmup(cfg: TrainConfig, total_steps: int) -> int:
    """Warmup steps, clipped to a quarter of the stage."""
    return min(cfg.warmup_steps, total_steps // 4)


def cosine_warmup_factor(step: int, warmup: int, total_steps: int) -> float:
    if step < warmup:
        return (step + 1) / warmup
    span = max(1, total_steps - warmup)
    progress = min(1.0, (step - warmup) / span)
    return 0.5 * (1.0 + math.cos(math.pi * progress))


def stage2_scheduler(optimizer: Optimizer, cfg: TrainConfig, total_steps: int) -> LRScheduler:
    """Linear warmup then cosine annealing to zero."""
    if cfg.stage2_schedule == "constant":
        return LambdaLR(optimizer, lambda step: 1.0)
    warmup = effective_warmup(cfg, total_steps)
    return LambdaLR(optimizer, lambda step: cosine_warmup_factor(step, warmup, total_steps))
