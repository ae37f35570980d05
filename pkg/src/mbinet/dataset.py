"""Corpus manifest parsing, train/dev split and epoch iteration.

A manifest is a JSON array of objects::

    {
      "utterance_id": "S08547_L0001_E001",
      "signal_path": "audio/S08547_L0001_E001.wav",
      "track": 1,
      "listener": {"listener_id": "L0001",
                   "left":  [10, 10, 15, 30, 40, 45, 50, 55],
                   "right": [10, 15, 20, 35, 40, 50, 55, 60]},
      "correctness": 80.0,
      "haspi": 0.83
    }

``haspi`` is optional (or null). Audiograms are dB HL at 250, 500, 1000,
2000, 3000, 4000, 6000 and 8000 Hz. Signal paths are resolved relative to
the manifest's directory.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from mbinet.errors import DuplicateId, RangeError, SchemaError, TooFewEntries
from mbinet.hearing_loss import AUDIOGRAM_FREQS_HZ, MAX_THRESHOLD_DB, Audiogram, ListenerProfile
from mbinet.objectives import UtteranceTargets

HASPI_SCALE = 100.0
DEFAULT_RATIO = 0.9

_REQUIRED = {"utterance_id": str, "signal_path": str, "track": int, "listener": dict, "correctness": (int, float)}
_OPTIONAL = {"haspi": (int, float, type(None))}
_LISTENER = {"listener_id": str, "left": list, "right": list}


@dataclass(frozen=True)
class ManifestEntry:
    utterance_id: str
    signal_path: Path
    track: int
    listener: ListenerProfile
    correctness: float
    haspi: Optional[float] = None  # [0, 1] as stored in the manifest

    @property
    def targets(self) -> UtteranceTargets:
        h = None if self.haspi is None else self.haspi * HASPI_SCALE
        return UtteranceTargets(self.correctness, h)


@dataclass(frozen=True)
class SplitAssignment:
    train: tuple[str, ...]
    dev: tuple[str, ...]
    seed: int


def _check_fields(obj, spec: dict, optional: dict, where: str) -> None:
    if not isinstance(obj, dict):
        raise SchemaError(f"{where}: expected an object")
    missing = set(spec) - set(obj)
    extra = set(obj) - set(spec) - set(optional)
    if missing:
        raise SchemaError(f"{where}: missing field(s) {sorted(missing)}")
    if extra:
        raise SchemaError(f"{where}: unexpected field(s) {sorted(extra)}")
    for key, value in obj.items():
        types = spec.get(key, optional.get(key))
        # bool is an int subclass but never a valid score or track
        if isinstance(value, bool) or not isinstance(value, types):
            raise SchemaError(f"{where}: field {key!r} has wrong type {type(value).__name__}")


def _audiogram(values: list, where: str) -> Audiogram:
    if len(values) != len(AUDIOGRAM_FREQS_HZ):
        raise SchemaError(f"{where}: audiogram needs {len(AUDIOGRAM_FREQS_HZ)} values, got {len(values)}")
    if not all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in values):
        raise SchemaError(f"{where}: audiogram values must be numbers")
    if not all(0 <= v <= MAX_THRESHOLD_DB for v in values):
        raise RangeError(f"{where}: audiogram thresholds must lie in [0, {MAX_THRESHOLD_DB:g}] dB HL")
    return Audiogram(tuple(values))


def parse_entries(raw, base_dir: Path = Path(".")) -> list[ManifestEntry]:
    if not isinstance(raw, list):
        raise SchemaError("manifest must be a JSON array")
    entries, seen = [], set()
    for i, obj in enumerate(raw):
        where = f"entry {i}"
        _check_fields(obj, _REQUIRED, _OPTIONAL, where)
        _check_fields(obj["listener"], _LISTENER, {}, f"{where}.listener")
        uid = obj["utterance_id"]
        if not uid:
            raise SchemaError(f"{where}: empty utterance_id")
        if uid in seen:
            raise DuplicateId(f"duplicate utterance_id {uid!r}")
        seen.add(uid)
        if obj["track"] < 1:
            raise RangeError(f"{where}: track must be >= 1")
        if not 0.0 <= obj["correctness"] <= 100.0:
            raise RangeError(f"{where}: correctness {obj['correctness']} outside [0, 100]")
        haspi = obj.get("haspi")
        if haspi is not None and not 0.0 <= haspi <= 1.0:
            raise RangeError(f"{where}: haspi {haspi} outside [0, 1]")
        lst = obj["listener"]
        if not lst["listener_id"]:
            raise SchemaError(f"{where}: empty listener_id")
        profile = ListenerProfile(
            lst["listener_id"],
            _audiogram(lst["left"], f"{where}.listener.left"),
            _audiogram(lst["right"], f"{where}.listener.right"),
        )
        entries.append(ManifestEntry(
            utterance_id=uid,
            signal_path=base_dir / obj["signal_path"],
            track=obj["track"],
            listener=profile,
            correctness=float(obj["correctness"]),
            haspi=None if haspi is None else float(haspi),
        ))
    return entries


def parse_manifest(path: str | Path) -> list[ManifestEntry]:
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{path}: invalid JSON ({exc})") from None
    return parse_entries(raw, path.parent)


def entry_to_json(e: ManifestEntry, base_dir: Path | None = None) -> dict:
    sig = e.signal_path if base_dir is None else e.signal_path.relative_to(base_dir)
    out = {
        "utterance_id": e.utterance_id,
        "signal_path": sig.as_posix(),
        "track": e.track,
        "listener": {
            "listener_id": e.listener.listener_id,
            "left": list(e.listener.left.thresholds_db_hl),
            "right": list(e.listener.right.thresholds_db_hl),
        },
        "correctness": e.correctness,
    }
    if e.haspi is not None:
        out["haspi"] = e.haspi
    return out


def tracks(entries: Sequence[ManifestEntry]) -> list[int]:
    return sorted({e.track for e in entries})


def split(entries: Sequence[ManifestEntry], ratio: float = DEFAULT_RATIO, seed: int = 0) -> SplitAssignment:
    """Seeded shuffle of one track's ids, then a ``round(ratio * N)`` prefix."""
    if len(entries) < 2:
        raise TooFewEntries(f"need at least 2 utterances to split, got {len(entries)}")
    if not 0.0 < ratio <= 1.0:
        raise ValueError("ratio must be in (0, 1]")
    ids = sorted(e.utterance_id for e in entries)
    order = np.random.default_rng(seed).permutation(len(ids))
    shuffled = [ids[i] for i in order]
    n_train = round(ratio * len(ids))
    return SplitAssignment(tuple(shuffled[:n_train]), tuple(shuffled[n_train:]), seed)


def iterate(part: Sequence[str], order_seed: int | None, epoch: int = 0) -> list[str]:
    """Epoch order of ``part``; ``order_seed=None`` gives the sorted dev order."""
    if not part:
        raise TooFewEntries("cannot iterate an empty split part")
    ids = sorted(part)
    if order_seed is None:
        return ids
    perm = np.random.default_rng([order_seed, epoch]).permutation(len(ids))
    return [ids[i] for i in perm]


CPC_FIELDS = {"signal": "signal", "listener": "listener", "correctness": "correctness", "haspi": "haspi",
              "cfs": "audiogram_cfs", "left": "audiogram_levels_l", "right": "audiogram_levels_r"}


def convert_cpc(records: Sequence[dict], listeners: dict, track: int = 1, audio_dir: str = "audio",
                fields: dict | None = None) -> list[dict]:
    """Converter stub from challenge-style metadata to the canonical manifest.

    ``records`` carry a signal name, a listener id and a correctness score;
    ``listeners`` maps ids to audiograms given as centre frequencies plus
    per-ear levels. Field names differ between releases, so any of them can
    be overridden through ``fields``. Only the canonical frequencies are
    kept; a missing one is a :class:`SchemaError`. The output is validated
    with :func:`parse_entries` before it is returned.
    """
    f = {**CPC_FIELDS, **(fields or {})}
    out = []
    for i, rec in enumerate(records):
        try:
            lid, sig = rec[f["listener"]], rec[f["signal"]]
            aud = listeners[lid]
            cfs = [float(c) for c in aud[f["cfs"]]]
            picks = [cfs.index(float(hz)) for hz in AUDIOGRAM_FREQS_HZ]
            ears = {side: [aud[f[side]][k] for k in picks] for side in ("left", "right")}
            obj = {"utterance_id": sig, "signal_path": f"{audio_dir}/{sig}.wav", "track": track,
                   "listener": {"listener_id": lid, **ears}, "correctness": rec[f["correctness"]]}
        except (KeyError, ValueError, IndexError, TypeError) as exc:
            raise SchemaError(f"record {i}: cannot convert ({exc!r})") from None
        if rec.get(f["haspi"]) is not None:
            obj["haspi"] = rec[f["haspi"]]
        out.append(obj)
    parse_entries(out)
    return out
