"""Seeded synthetic binaural corpus for smoke tests and demos.

Each utterance is an amplitude-modulated harmonic complex in white noise.
The intelligibility label sets the SNR, so labels are learnable from the
signal, and HASPI labels are a noisy copy of the intelligibility label.
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from mbinet.audio import StereoWaveform, write_wav

_PROFILES = (
    (0, 0, 0, 0, 0, 0, 0, 0),
    (10, 10, 15, 25, 35, 40, 50, 55),
    (20, 25, 30, 40, 50, 55, 60, 65),
    (5, 5, 10, 20, 40, 60, 70, 70),
)


def _voice(rng: np.random.Generator, n: int, rate: int) -> np.ndarray:
    t = np.arange(n) / rate
    f0 = rng.uniform(100.0, 220.0)
    x = sum(np.sin(2 * np.pi * k * f0 * t + rng.uniform(0, 2 * np.pi)) / k for k in range(1, 16) if k * f0 < rate / 2)
    envelope = 0.5 * (1 + np.sin(2 * np.pi * rng.uniform(3.0, 5.0) * t))
    x = x * envelope
    return x / np.sqrt(np.mean(x**2))


def _mix(rng, voice: np.ndarray, snr_db: float, level: float) -> np.ndarray:
    noise = rng.standard_normal(voice.size)
    y = voice + noise * 10 ** (-snr_db / 20)
    return level * y / np.max(np.abs(y))


def make_corpus(
    out_dir: str | Path,
    n_utterances: int = 8,
    seed: int = 0,
    duration_s: float = 0.5,
    n_tracks: int = 1,
    sample_rate_hz: int = 16000,
    with_haspi: bool = True,
) -> Path:
    """Write WAVs plus ``manifest.json`` into ``out_dir``; returns the manifest path."""
    out = Path(out_dir)
    (out / "audio").mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    n = int(round(duration_s * sample_rate_hz))
    entries = []
    for i in range(n_utterances):
        uid = f"syn{i:04d}"
        label = float(np.round(rng.uniform(5.0, 95.0), 1))
        snr = -10.0 + 30.0 * label / 100.0
        voice = _voice(rng, n, sample_rate_hz)
        left = _mix(rng, voice, snr + rng.normal(0, 1.0), 0.5)
        right = _mix(rng, voice, snr + rng.normal(0, 1.0), 0.5)
        path = out / "audio" / f"{uid}.wav"
        write_wav(path, StereoWaveform(left, right, sample_rate_hz))
        a_left = _PROFILES[rng.integers(len(_PROFILES))]
        a_right = _PROFILES[rng.integers(len(_PROFILES))]
        entry = {
            "utterance_id": uid,
            "signal_path": f"audio/{uid}.wav",
            "track": 1 + i % n_tracks,
            "listener": {"listener_id": f"L{i % 5:04d}", "left": list(a_left), "right": list(a_right)},
            "correctness": label,
        }
        if with_haspi:
            entry["haspi"] = float(np.round(np.clip(label / 100 + rng.normal(0, 0.05), 0.0, 1.0), 4))
        entries.append(entry)
    manifest = out / "manifest.json"
    manifest.write_text(json.dumps(entries, indent=1) + "\n")
    return manifest
