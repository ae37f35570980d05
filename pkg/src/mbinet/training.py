"""Training, evaluation and single-file prediction."""
from __future__ import annotations

import json
import logging
import math
import time
from collections import OrderedDict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import torch

from mbinet import checkpoint as ckpt_io
from mbinet.audio import load_stereo
from mbinet.config import OptimConfig, RunConfig
from mbinet.dataset import ManifestEntry, iterate, parse_manifest, split, tracks
from mbinet.embeddings import ProviderSpec
from mbinet.errors import CheckpointMismatch, NonFiniteLoss, TooFewEntries
from mbinet.features import UtteranceFeatures, assemble
from mbinet.hearing_loss import ListenerProfile
from mbinet.metrics import MetricRecord, score_track, track_report
from mbinet.model import HASPI, INTELLIGIBILITY, MBINet, ModelConfig, build, export_params
from mbinet.objectives import LossWeights, total_loss

log = logging.getLogger(__name__)

BEST = "best.ckpt"
LAST = "last.ckpt"
TRAIN_LOG = "train_log.jsonl"
SCORE_RANGE = (0.0, 100.0)


@dataclass(frozen=True)
class FeatureSettings:
    provider: ProviderSpec
    hl_enabled: bool = True
    hl_before_embeddings: bool = True

    def to_dict(self) -> dict:
        return {"provider": asdict(self.provider), "hl_enabled": self.hl_enabled,
                "hl_before_embeddings": self.hl_before_embeddings}

    @classmethod
    def from_dict(cls, d: dict) -> FeatureSettings:
        return cls(ProviderSpec(**d["provider"]), d["hl_enabled"], d["hl_before_embeddings"])


class FeatureStore:
    """Memoised per-utterance feature assembly."""

    def __init__(self, settings: FeatureSettings, entries: Sequence[ManifestEntry], workers: int = 1):
        self.settings = settings
        self.provider = settings.provider.build()
        self.entries = {e.utterance_id: e for e in entries}
        self.workers = max(1, workers)
        self._cache: dict[str, UtteranceFeatures] = {}

    def _compute(self, uid: str) -> UtteranceFeatures:
        e = self.entries[uid]
        return assemble(
            load_stereo(e.signal_path), e.listener, self.provider,
            use_hl=self.settings.hl_enabled,
            hl_before_embeddings=self.settings.hl_before_embeddings,
            utterance_id=uid,
        )

    def prefetch(self, uids: Sequence[str]) -> None:
        todo = [u for u in dict.fromkeys(uids) if u not in self._cache]
        if self.workers == 1:
            for u in todo:
                self._cache[u] = self._compute(u)
            return
        with ThreadPoolExecutor(self.workers) as pool:
            for u, feats in zip(todo, pool.map(self._compute, todo)):
                self._cache[u] = feats

    def __getitem__(self, uid: str) -> UtteranceFeatures:
        if uid not in self._cache:
            self._cache[uid] = self._compute(uid)
        return self._cache[uid]


@dataclass
class TrainResult:
    best_path: Path
    last_path: Path
    log_path: Path
    history: list = field(default_factory=list)
    best_epoch: int = -1
    stopped_early: bool = False


def select_entries(entries: Sequence[ManifestEntry], track: Optional[int]) -> list[ManifestEntry]:
    chosen = [e for e in entries if track is None or e.track == track]
    if not chosen:
        raise TooFewEntries(f"manifest has no utterances for track {track}")
    return chosen


def split_parts(entries: Sequence[ManifestEntry], ratio: float, seed: int) -> dict[str, list[str]]:
    """Per-track split, unioned over the tracks present."""
    parts = {"train": [], "dev": []}
    for tr in tracks(entries):
        a = split([e for e in entries if e.track == tr], ratio, seed)
        parts["train"] += a.train
        parts["dev"] += a.dev
    return parts


def _make_optimizer(model: MBINet, o: OptimConfig) -> torch.optim.Adam:
    return torch.optim.Adam(model.parameters(), lr=o.lr, betas=(o.beta1, o.beta2), eps=o.eps, foreach=False)


def _optimizer_arrays(model: MBINet, opt: torch.optim.Adam) -> OrderedDict:
    out = OrderedDict()
    for name, p in model.named_parameters():
        st = opt.state.get(p)
        if not st:
            continue
        out[f"step.{name}"] = np.asarray(float(st["step"]))
        out[f"exp_avg.{name}"] = st["exp_avg"].numpy().copy()
        out[f"exp_avg_sq.{name}"] = st["exp_avg_sq"].numpy().copy()
    return out


def _restore_optimizer(model: MBINet, opt: torch.optim.Adam, arrays: dict) -> None:
    for name, p in model.named_parameters():
        if f"step.{name}" not in arrays:
            continue
        opt.state[p] = {
            "step": torch.tensor(float(arrays[f"step.{name}"])),
            "exp_avg": torch.from_numpy(arrays[f"exp_avg.{name}"].copy()),
            "exp_avg_sq": torch.from_numpy(arrays[f"exp_avg_sq.{name}"].copy()),
        }


def _meta(cfg: RunConfig, settings: FeatureSettings, extra: dict) -> dict:
    return {
        "features": settings.to_dict(),
        "loss": asdict(cfg.loss),
        "split": {"seed": cfg.split_seed, "ratio": cfg.split_ratio},
        "track": cfg.track,
        **extra,
    }


def _mean_terms(rows: list[dict]) -> dict:
    return {k: math.fsum(r[k] for r in rows) / len(rows) for k in rows[0]}


def dev_losses(model: MBINet, store: FeatureStore, ids: Sequence[str], lw: LossWeights,
               tasks: Sequence[str]) -> dict:
    with torch.no_grad():
        preds = [model(store[u]) for u in ids]
    return total_loss(preds, [store.entries[u].targets for u in ids], lw, tasks).as_floats()


def train(cfg: RunConfig, resume: bool = False) -> TrainResult:
    """Train one model; writes best/last checkpoints and a JSON-lines log.

    The best checkpoint minimises the dev intelligibility loss (train loss
    when the dev part is empty). ``resume`` continues from ``last.ckpt``.
    """
    out_dir = Path(cfg.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    entries = select_entries(parse_manifest(cfg.manifest), cfg.track)
    parts = split_parts(entries, cfg.split_ratio, cfg.split_seed)
    settings = FeatureSettings(cfg.provider, cfg.hl_enabled, cfg.hl_before_embeddings)
    store = FeatureStore(settings, entries, cfg.workers)
    store.prefetch(sorted(parts["train"] + parts["dev"]))

    model = build(cfg.model)
    opt = _make_optimizer(model, cfg.optim)
    state = {"epoch": 0, "best_loss": None, "best_epoch": -1, "bad_epochs": 0}
    log_path, best_path, last_path = out_dir / TRAIN_LOG, out_dir / BEST, out_dir / LAST
    history = []
    if resume and last_path.exists():
        last = ckpt_io.load(last_path, expect=cfg.model)
        model = build(cfg.model, last.torch_params())
        opt = _make_optimizer(model, cfg.optim)
        _restore_optimizer(model, opt, last.state)
        state = dict(last.meta["train_state"])
        history = [json.loads(x) for x in log_path.read_text().splitlines()] if log_path.exists() else []
    elif log_path.exists():
        log_path.unlink()

    tasks, lw, o = cfg.model.tasks, cfg.loss, cfg.optim
    t0 = time.perf_counter()
    stopped_early = False
    while state["epoch"] < o.max_epochs:
        epoch = state["epoch"]
        order = iterate(parts["train"], o.order_seed, epoch)
        rows = []
        model.train()
        for start in range(0, len(order), o.accumulate):
            group = order[start:start + o.accumulate]
            opt.zero_grad(set_to_none=False)
            for uid in group:
                lb = total_loss([model(store[uid])], [store.entries[uid].targets], lw, tasks)
                if not torch.isfinite(lb.total):
                    raise NonFiniteLoss(f"epoch {epoch}, utterance {uid}: loss is {float(lb.total)}")
                (lb.total / len(group)).backward()
                rows.append(lb.as_floats())
            opt.step()
        model.eval()
        train_terms = _mean_terms(rows)
        dev_terms = dev_losses(model, store, sorted(parts["dev"]), lw, tasks) if parts["dev"] else None
        criterion = (dev_terms or train_terms)[INTELLIGIBILITY]

        state["epoch"] = epoch + 1
        improved = state["best_loss"] is None or criterion < state["best_loss"]
        if improved:
            state.update(best_loss=criterion, best_epoch=epoch, bad_epochs=0)
            ckpt_io.save(best_path, ckpt_io.Checkpoint(
                cfg.model, export_params(model), meta=_meta(cfg, settings, {"epoch": epoch})))
        else:
            state["bad_epochs"] += 1
        ckpt_io.save(last_path, ckpt_io.Checkpoint(
            cfg.model, export_params(model), _optimizer_arrays(model, opt),
            meta=_meta(cfg, settings, {"epoch": epoch, "train_state": dict(state)})))

        record = {"epoch": epoch, "train": train_terms, "dev": dev_terms, "lr": o.lr,
                  "elapsed": round(time.perf_counter() - t0, 3)}
        history.append(record)
        with log_path.open("a") as fh:
            fh.write(json.dumps(record, sort_keys=True) + "\n")
        log.info("epoch %d train %.3f dev %s", epoch, train_terms["total"],
                 "-" if dev_terms is None else f"{dev_terms['total']:.3f}")
        if o.patience and state["bad_epochs"] >= o.patience:
            stopped_early = True
            break
    return TrainResult(best_path, last_path, log_path, history, state["best_epoch"], stopped_early)


def clamp_score(x: float) -> float:
    return float(min(max(x, SCORE_RANGE[0]), SCORE_RANGE[1]))


@dataclass
class Predictor:
    """Inference wrapper around an immutable checkpoint."""

    config: ModelConfig
    model: MBINet
    settings: FeatureSettings
    meta: dict

    @classmethod
    def from_checkpoint(cls, path: str | Path) -> Predictor:
        ck = ckpt_io.load(path)
        if "features" not in ck.meta:
            raise CheckpointMismatch(f"{path}: checkpoint has no feature settings")
        model = build(ck.config, ck.torch_params())
        model.eval()
        return cls(ck.config, model, FeatureSettings.from_dict(ck.meta["features"]), ck.meta)

    def scores(self, feats: UtteranceFeatures, frames: bool = False) -> dict:
        with torch.no_grad():
            pred = self.model(feats)
        rec = {"intelligibility": clamp_score(float(pred[INTELLIGIBILITY].utterance))}
        if HASPI in pred:
            rec["haspi"] = clamp_score(float(pred[HASPI].utterance)) / 100.0
        if frames:
            rec["frames"] = [clamp_score(v) for v in pred[INTELLIGIBILITY].frame_merged.tolist()]
        return rec


def evaluate(
    checkpoint: str | Path,
    manifest: str | Path,
    part: str = "dev",
    workers: int = 1,
) -> list[MetricRecord]:
    """Per-track and track-averaged metrics on one split part.

    ``part`` is ``train``, ``dev`` or ``all``. The split is recomputed
    from the seed and ratio stored in the checkpoint.
    """
    if part not in ("train", "dev", "all"):
        raise ValueError(f"unknown split part {part!r}")
    predictor = Predictor.from_checkpoint(checkpoint)
    meta = predictor.meta
    entries = select_entries(parse_manifest(manifest), meta.get("track"))
    if part == "all":
        ids = [e.utterance_id for e in entries]
    else:
        sp = meta.get("split", {"seed": 0, "ratio": 0.9})
        ids = split_parts(entries, sp["ratio"], sp["seed"])[part]
    if not ids:
        raise TooFewEntries(f"split part {part!r} is empty")
    ids = sorted(ids)
    store = FeatureStore(predictor.settings, entries, workers)

    def run(uid: str) -> dict:
        return predictor.scores(store[uid])

    if workers > 1:
        store.prefetch(ids)
        with ThreadPoolExecutor(workers) as pool:
            results = dict(zip(ids, pool.map(run, ids)))
    else:
        results = {u: run(u) for u in ids}

    records = []
    by_id = store.entries
    for tr in sorted({by_id[u].track for u in ids}):
        tids = [u for u in ids if by_id[u].track == tr]
        records.append(score_track(tr, [results[u]["intelligibility"] for u in tids],
                                   [by_id[u].correctness for u in tids]))
        if HASPI in predictor.config.tasks and all(by_id[u].haspi is not None for u in tids):
            records.append(score_track(tr, [results[u]["haspi"] for u in tids],
                                       [by_id[u].haspi for u in tids], task=HASPI))
    return track_report(records)


def predict(
    checkpoint: str | Path,
    wav_path: str | Path,
    profile: ListenerProfile,
    frames: bool = False,
    predictor: Predictor | None = None,
) -> dict:
    predictor = predictor or Predictor.from_checkpoint(checkpoint)
    s = predictor.settings
    uid = Path(wav_path).stem
    feats = assemble(load_stereo(wav_path), profile, s.provider.build(), use_hl=s.hl_enabled,
                     hl_before_embeddings=s.hl_before_embeddings, utterance_id=uid)
    return {"utterance_id": uid, "listener_id": profile.listener_id, **predictor.scores(feats, frames)}
