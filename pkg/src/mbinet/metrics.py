"""RMSE, Pearson (LCC) and Spearman (SRCC) metrics and per-track reports."""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np
from scipy.stats import rankdata

from mbinet.errors import DegenerateInput, EmptyInput, LengthMismatch

AVERAGE = "average"


def _pair(pred, truth, min_n: int) -> tuple[np.ndarray, np.ndarray]:
    p = np.asarray(pred, dtype=np.float64).ravel()
    t = np.asarray(truth, dtype=np.float64).ravel()
    if p.size != t.size:
        raise LengthMismatch(f"{p.size} predictions vs {t.size} ground-truth values")
    if p.size < min_n:
        raise EmptyInput(f"need at least {min_n} values, got {p.size}")
    return p, t


def rmse(pred, truth) -> float:
    p, t = _pair(pred, truth, 1)
    return math.sqrt(np.mean((p - t) ** 2))


def _pearson(p: np.ndarray, t: np.ndarray) -> float:
    dp, dt = p - p.mean(), t - t.mean()
    sp, st = np.sqrt(np.dot(dp, dp)), np.sqrt(np.dot(dt, dt))
    if sp == 0.0 or st == 0.0:
        raise DegenerateInput("correlation undefined for a constant vector")
    r = float(np.dot(dp, dt) / (sp * st))
    return max(-1.0, min(1.0, r))


def lcc(pred, truth) -> float:
    return _pearson(*_pair(pred, truth, 2))


def rank(x) -> np.ndarray:
    """1-based ranks; ties share the mean of their rank range."""
    return rankdata(np.asarray(x, dtype=np.float64), method="average")


def srcc(pred, truth) -> float:
    p, t = _pair(pred, truth, 2)
    return _pearson(rank(p), rank(t))


@dataclass(frozen=True)
class MetricRecord:
    track: str
    n: int
    rmse: float
    lcc: Optional[float]
    srcc: Optional[float]
    task: str = "intelligibility"


def _maybe(fn, pred, truth) -> Optional[float]:
    try:
        return fn(pred, truth)
    except (DegenerateInput, EmptyInput):
        return None


def score_track(track, pred, truth, task: str = "intelligibility") -> MetricRecord:
    """Metrics for one track; undefined correlations are kept as ``None``."""
    p, t = _pair(pred, truth, 1)
    return MetricRecord(str(track), int(p.size), rmse(p, t), _maybe(lcc, p, t), _maybe(srcc, p, t), task)


def _mean(values: Sequence[Optional[float]]) -> Optional[float]:
    if any(v is None for v in values):
        return None
    return float(np.mean(values))


def track_report(records: Sequence[MetricRecord]) -> list[MetricRecord]:
    """Per-track records followed by one unweighted average per task."""
    if not records:
        raise EmptyInput("no tracks to report")
    out = list(records)
    for task in dict.fromkeys(r.task for r in records):
        rows = [r for r in records if r.task == task]
        out.append(MetricRecord(
            AVERAGE,
            sum(r.n for r in rows),
            _mean([r.rmse for r in rows]),
            _mean([r.lcc for r in rows]),
            _mean([r.srcc for r in rows]),
            task,
        ))
    return out


def format_report(records: Iterable[MetricRecord]) -> str:
    return "".join(json.dumps(asdict(r), sort_keys=True) + "\n" for r in records)


def write_report(path: str | Path, records: Iterable[MetricRecord]) -> Path:
    path = Path(path)
    path.write_text(format_report(records))
    return path


def read_report(path: str | Path) -> list[MetricRecord]:
    return [MetricRecord(**json.loads(line)) for line in Path(path).read_text().splitlines() if line.strip()]
