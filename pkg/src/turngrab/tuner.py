"""Exhaustive grid search with median pruning.

Trials run one after another in grid order. After every epoch past the
warm-up, a trial whose validation MCC is strictly below the median of the
same-epoch values of all earlier trials is stopped.
"""

import itertools
import json
import logging
import statistics
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import List

from .errors import CheckpointCorrupt
from .net import NetworkConfig

log = logging.getLogger(__name__)

KEEP = "keep"
PRUNE = "prune"


@dataclass(frozen=True)
class SearchSpace:
    conv1_dims: tuple = (8, 16, 32, 64)
    conv2_dims: tuple = (8, 16, 32, 64, 128)
    lstm_layers: tuple = (1, 2, 3, 4, 5, 6)
    lstm_dims: tuple = (16, 32, 64, 128)
    learning_rates: tuple = (1e-2, 1e-3, 1e-4, 1e-5)
    epochs: int = 50
    prune_warmup: int = 5

    def __post_init__(self):
        for name in ("conv1_dims", "conv2_dims", "lstm_layers", "lstm_dims", "learning_rates"):
            values = tuple(getattr(self, name))
            if not values:
                raise ValueError(f"search space dimension {name} is empty")
            object.__setattr__(self, name, values)

    @classmethod
    def from_json(cls, path):
        data = json.loads(Path(path).read_text(encoding="utf-8"))
        return cls(**data)

    def to_dict(self):
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}


def grid_trials(space, base=None):
    """Cartesian product of the space, conv1 varying slowest, learning rate fastest."""
    base = base or NetworkConfig()
    return [
        replace(base, conv1_dim=c1, conv2_dim=c2, lstm_layers=nl, lstm_dim=hd,
                learning_rate=lr, epochs=space.epochs)
        for c1, c2, nl, hd, lr in itertools.product(
            space.conv1_dims, space.conv2_dims, space.lstm_layers,
            space.lstm_dims, space.learning_rates)
    ]


def median_prune(pool, value, epoch, warmup=5):
    """``"prune"`` iff past warm-up and ``value`` is below the pool median."""
    if epoch < 1:
        raise ValueError("epochs are numbered from 1")
    if epoch <= warmup or not pool:
        return KEEP
    return PRUNE if value < statistics.median(pool) else KEEP


@dataclass
class Trial:
    trial_id: int
    config: NetworkConfig
    history: List[float] = field(default_factory=list)
    status: str = "running"

    @property
    def best_mcc(self):
        return max(self.history) if self.history else None

    def to_dict(self):
        return {"trial_id": self.trial_id, "config": self.config.to_dict(),
                "history": list(self.history), "status": self.status, "best_mcc": self.best_mcc}

    @classmethod
    def from_dict(cls, d):
        return cls(d["trial_id"], NetworkConfig.from_dict(d["config"]),
                   [float(v) for v in d["history"]], d["status"])


@dataclass
class StudyReport:
    trials: List[Trial]
    seed: int
    space: SearchSpace

    @property
    def finished(self):
        return [t for t in self.trials if t.status in ("complete", "pruned")]

    @property
    def best_trial(self):
        done = [t for t in self.trials if t.status == "complete" and t.history]
        if not done:
            return None
        return max(done, key=lambda t: (t.best_mcc, -t.trial_id))

    @property
    def executed_epochs(self):
        return sum(len(t.history) for t in self.trials)

    def to_dict(self):
        best = self.best_trial
        return {
            "seed": self.seed,
            "space": self.space.to_dict(),
            "trials": [t.to_dict() for t in self.trials],
            "best_trial": best.trial_id if best else None,
            "best_config": best.config.to_dict() if best else None,
            "best_mcc": best.best_mcc if best else None,
            "executed_epochs": self.executed_epochs,
        }

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n", encoding="utf-8")


def _load_checkpoint(path, configs, seed):
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
        trials = [Trial.from_dict(d) for d in data["trials"]]
        ck_seed = data["seed"]
    except (OSError, ValueError, KeyError, TypeError) as exc:
        raise CheckpointCorrupt(f"cannot read checkpoint {path}: {exc}") from None
    if ck_seed != seed:
        raise CheckpointCorrupt(f"checkpoint was written with seed {ck_seed}, not {seed}")
    for t in trials:
        if t.trial_id >= len(configs) or configs[t.trial_id] != t.config:
            raise CheckpointCorrupt(f"checkpoint trial {t.trial_id} does not match the grid")
        if t.status not in ("running", "pruned", "complete"):
            raise CheckpointCorrupt(f"bad trial status {t.status!r}")
    # anything that did not finish is rerun from scratch
    return [t for t in trials if t.status != "running"]


def run_study(space, train_fn, seed=0, base=None, checkpoint=None, resume=False):
    """Run every grid configuration with median pruning.

    ``train_fn(config, seed)`` must return an iterable of per-epoch
    validation MCC values; it is consumed lazily and closed when a trial is
    pruned. If ``checkpoint`` is given the report is written there after each
    trial, and with ``resume=True`` finished trials are read back from it.
    """
    configs = grid_trials(space, base)
    done = []
    if resume and checkpoint is not None and Path(checkpoint).exists():
        done = _load_checkpoint(checkpoint, configs, seed)
    by_id = {t.trial_id: t for t in done}
    trials = []
    for trial_id, cfg in enumerate(configs):
        if trial_id in by_id:
            trials.append(by_id[trial_id])
            continue
        pools = [t.history for t in trials if t.status in ("complete", "pruned")]
        trial = Trial(trial_id, cfg)
        trials.append(trial)
        values = iter(train_fn(cfg, seed))
        try:
            for epoch, value in enumerate(values, start=1):
                if epoch > space.epochs:
                    break
                trial.history.append(float(value))
                if epoch == space.epochs:
                    # pruning the last epoch saves nothing
                    break
                pool = [h[epoch - 1] for h in pools if len(h) >= epoch]
                if median_prune(pool, value, epoch, space.prune_warmup) == PRUNE:
                    trial.status = "pruned"
                    log.info("trial %d pruned at epoch %d", trial_id, epoch)
                    break
        finally:
            close = getattr(values, "close", None)
            if close is not None:
                close()
        if trial.status == "running":
            trial.status = "complete"
        if checkpoint is not None:
            StudyReport(trials, seed, space).save(checkpoint)
    return StudyReport(trials, seed, space)
