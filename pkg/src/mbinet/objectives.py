"""Multi-task training objective.

For one task with utterance targets ``y_u`` the loss is

    1/U * sum_u [ (y_u - yhat_u)^2
                  + w_m/F_u * sum_f (y_u - merged_uf)^2
                  + w_l/F_u * sum_f (y_u - left_uf)^2
                  + w_r/F_u * sum_f (y_u - right_uf)^2 ]

and the total is ``alpha * L_int + beta * L_haspi`` when the HASPI task is
trained, or ``L_int`` alone otherwise. The left/right frame terms are
averaged per utterance together with the rest, so the value is defined
for any batch size.

All functions accept numpy arrays or torch tensors and return the same kind
of scalar, so the training loop can differentiate through them.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from mbinet.errors import EmptyBatch, EmptyFrames, MissingTarget
from mbinet.model import HASPI, INTELLIGIBILITY, PredictionBundle, TaskPrediction

TERMS = ("utterance", "merged", "left", "right")


@dataclass(frozen=True)
class LossWeights:
    alpha: float = 1.0
    beta: float = 1.0
    alpha_m: float = 1.0
    alpha_l: float = 1.0
    alpha_r: float = 1.0
    beta_m: float = 1.0
    beta_l: float = 1.0
    beta_r: float = 1.0

    def __post_init__(self):
        for name, value in self.__dict__.items():
            if not value >= 0:
                raise ValueError(f"loss weight {name} must be non-negative, got {value}")

    def frame_weights(self, task: str) -> tuple[float, float, float]:
        if task == INTELLIGIBILITY:
            return self.alpha_m, self.alpha_l, self.alpha_r
        return self.beta_m, self.beta_l, self.beta_r

    def task_weight(self, task: str) -> float:
        return self.alpha if task == INTELLIGIBILITY else self.beta


@dataclass(frozen=True)
class UtteranceTargets:
    intelligibility: float
    haspi: Optional[float] = None  # already on the 0-100 scale

    def __post_init__(self):
        if not 0.0 <= self.intelligibility <= 100.0:
            raise ValueError(f"intelligibility target {self.intelligibility} outside [0, 100]")
        if self.haspi is not None and not 0.0 <= self.haspi <= 100.0:
            raise ValueError(f"HASPI target {self.haspi} outside [0, 100]")

    def get(self, task: str) -> Optional[float]:
        return self.intelligibility if task == INTELLIGIBILITY else self.haspi


@dataclass
class LossBreakdown:
    total: object
    per_task: dict = field(default_factory=dict)  # task -> task loss
    terms: dict = field(default_factory=dict)  # "task.term" -> batch-averaged term

    def as_floats(self) -> dict[str, float]:
        out = {"total": _to_float(self.total)}
        out.update({t: _to_float(v) for t, v in self.per_task.items()})
        out.update({k: _to_float(v) for k, v in self.terms.items()})
        return out


def _to_float(x) -> float:
    return float(x.detach()) if hasattr(x, "detach") else float(x)


def branch_frame_loss(frames, target: float, weight: float):
    """``weight / F * sum_f (target - frames[f])^2``."""
    if isinstance(frames, (list, tuple)):
        frames = np.asarray(frames, dtype=np.float64)
    n = len(frames)
    if n == 0:
        raise EmptyFrames("frame score vector is empty")
    return weight * ((target - frames) ** 2).sum() / n


def task_loss_terms(items: Sequence[tuple[TaskPrediction, float]], w_m: float, w_l: float, w_r: float) -> dict:
    """Batch-averaged components of one task's loss, keyed by :data:`TERMS`."""
    if not items:
        raise EmptyBatch("no utterances in batch")
    sums = dict.fromkeys(TERMS, 0.0)
    for pred, target in items:
        sums["utterance"] = sums["utterance"] + (target - pred.utterance) ** 2
        sums["merged"] = sums["merged"] + branch_frame_loss(pred.frame_merged, target, w_m)
        sums["left"] = sums["left"] + branch_frame_loss(pred.frame_left, target, w_l)
        sums["right"] = sums["right"] + branch_frame_loss(pred.frame_right, target, w_r)
    u = len(items)
    return {k: v / u for k, v in sums.items()}


def task_loss(items: Sequence[tuple[TaskPrediction, float]], w_m: float, w_l: float, w_r: float):
    terms = task_loss_terms(items, w_m, w_l, w_r)
    return terms["utterance"] + terms["merged"] + terms["left"] + terms["right"]


def total_loss(
    preds: Sequence[PredictionBundle],
    targets: Sequence[UtteranceTargets],
    lw: LossWeights,
    tasks: Sequence[str],
) -> LossBreakdown:
    if len(preds) != len(targets):
        raise ValueError(f"{len(preds)} predictions but {len(targets)} targets")
    if not preds:
        raise EmptyBatch("no utterances in batch")
    out = LossBreakdown(total=0.0)
    for task in tasks:
        if task == HASPI and any(t.haspi is None for t in targets):
            raise MissingTarget("HASPI task requested but some utterances have no HASPI label")
        items = [(p[task], t.get(task)) for p, t in zip(preds, targets)]
        terms = task_loss_terms(items, *lw.frame_weights(task))
        value = terms["utterance"] + terms["merged"] + terms["left"] + terms["right"]
        out.per_task[task] = value
        out.terms.update({f"{task}.{k}": v for k, v in terms.items()})
    if HASPI in tasks:
        out.total = lw.alpha * out.per_task[INTELLIGIBILITY] + lw.beta * out.per_task[HASPI]
    else:
        out.total = out.per_task[INTELLIGIBILITY]
    return out
