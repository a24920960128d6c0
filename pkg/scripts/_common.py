"""Shared helpers: train a default two-moons model once and cache the checkpoint."""

from pathlib import Path

from ebridge.numcore import load_checkpoint, save_checkpoint
from ebridge.tasks import TaskSpec, gen_pairs
from ebridge.training import TrainConfig, train


def load_or_train(path, seed=0):
    path = Path(path)
    if path.exists():
        return load_checkpoint(path)[0]
    cfg = TrainConfig(seed=seed)
    result = train(cfg, gen_pairs(TaskSpec(seed=seed)))
    save_checkpoint(path, result.net, ema_decay=cfg.ema_decay, trained_steps=result.trained_steps,
                    seed=seed, extra={"T0_range": list(cfg.T0_range)})
    return result.net


def eval_pairs(n=2000, seed=1):
    return gen_pairs(TaskSpec(n_samples=n, seed=seed))
