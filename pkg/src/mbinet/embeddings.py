"""Frame-level acoustic embeddings behind a small provider interface.

Two backends exist. ``FixtureProvider`` reads precomputed embeddings (for
example exported from a Whisper encoder by an external script) from
``<key>.emb`` sidecar files. ``MockProvider`` computes a deterministic
stand-in so that the toolkit runs without any pretrained model.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Protocol

import numpy as np

from mbinet.audio import POWER_FLOOR, frame_signal
from mbinet.errors import DimensionMismatch, FixtureMissing

MAGIC = b"EMB1"
MOCK_WINDOW = 400
MOCK_HOP = 320
NATIVE_HOP_S = MOCK_HOP / 16000
DEFAULT_DIM = 64


@dataclass(frozen=True, eq=False)
class EmbeddingFrames:
    values: np.ndarray  # (T_e, D)
    native_hop_s: float = NATIVE_HOP_S

    def __post_init__(self):
        v = np.asarray(self.values)
        if v.ndim != 2 or v.shape[0] < 1 or v.shape[1] < 1:
            raise DimensionMismatch(f"embedding matrix must be (T>=1, D>=1), got {v.shape}")
        if not np.all(np.isfinite(v)):
            raise DimensionMismatch("embedding matrix contains non-finite entries")
        object.__setattr__(self, "values", v)

    @property
    def dim(self) -> int:
        return self.values.shape[1]


def channel_key(utterance_id: str, side: str) -> str:
    """Fixture key of one channel of an utterance, e.g. ``S0001.left``."""
    return f"{utterance_id}.{side}"


def encode_fixture(frames: EmbeddingFrames) -> bytes:
    t, d = frames.values.shape
    body = np.ascontiguousarray(frames.values, dtype="<f4").tobytes()
    return MAGIC + struct.pack("<II", t, d) + body


def decode_fixture(data: bytes, source: str = "<bytes>") -> EmbeddingFrames:
    if len(data) < 12 or data[:4] != MAGIC:
        raise DimensionMismatch(f"{source}: not an EMB1 fixture")
    t, d = struct.unpack_from("<II", data, 4)
    if len(data) != 12 + 4 * t * d:
        raise DimensionMismatch(f"{source}: header says {t}x{d} but payload is {len(data) - 12} bytes")
    values = np.frombuffer(data, dtype="<f4", offset=12).reshape(t, d).astype(np.float64)
    return EmbeddingFrames(values)


def write_fixture(directory: str | Path, utterance_id: str, frames: EmbeddingFrames) -> Path:
    path = Path(directory) / f"{utterance_id}.emb"
    path.write_bytes(encode_fixture(frames))
    return path


def read_fixture(directory: str | Path, utterance_id: str) -> EmbeddingFrames:
    path = Path(directory) / f"{utterance_id}.emb"
    try:
        data = path.read_bytes()
    except FileNotFoundError:
        raise FixtureMissing(f"no embedding fixture for {utterance_id!r} in {directory}") from None
    return decode_fixture(data, str(path))


class EmbeddingProvider(Protocol):
    dim: int

    def embed(self, mono: np.ndarray, utterance_id: str) -> EmbeddingFrames: ...


class MockProvider:
    """Seeded random projection of framed log-power spectra, squashed by tanh.

    Output depends only on the signal and the seed; ``utterance_id`` is
    ignored.
    """

    def __init__(self, dim: int = DEFAULT_DIM, seed: int = 0):
        if dim <= 0:
            raise ValueError("dim must be positive")
        self.dim = dim
        self.seed = seed
        n_bins = MOCK_WINDOW // 2 + 1
        rng = np.random.default_rng(seed)
        # log-power entries span roughly [-23, 10]; keep tanh out of saturation
        self._projection = rng.standard_normal((n_bins, dim)) / (10.0 * np.sqrt(n_bins))
        self._window = np.hanning(MOCK_WINDOW)

    def embed(self, mono: np.ndarray, utterance_id: str = "") -> EmbeddingFrames:
        mono = np.asarray(mono, dtype=np.float64)
        if mono.size == 0:
            raise ValueError("empty signal")
        frames = frame_signal(mono, MOCK_WINDOW, MOCK_HOP) * self._window
        spec = np.fft.rfft(frames, axis=1)
        log_power = np.log(spec.real**2 + spec.imag**2 + POWER_FLOOR)
        return EmbeddingFrames(np.tanh(log_power @ self._projection), NATIVE_HOP_S)


class FixtureProvider:
    """Reads ``<utterance_id>.emb`` files; the signal argument is ignored."""

    def __init__(self, fixture_dir: str | Path, dim: int):
        self.fixture_dir = Path(fixture_dir)
        self.dim = dim

    def embed(self, mono: np.ndarray, utterance_id: str) -> EmbeddingFrames:
        frames = read_fixture(self.fixture_dir, utterance_id)
        if frames.dim != self.dim:
            raise DimensionMismatch(
                f"fixture {utterance_id!r} has D={frames.dim}, provider expects {self.dim}"
            )
        return frames


@dataclass(frozen=True)
class ProviderSpec:
    kind: str = "mock"
    dim: int = DEFAULT_DIM
    seed: int = 0
    fixture_dir: str | None = None

    def __post_init__(self):
        if self.kind not in ("mock", "fixture"):
            raise ValueError(f"unknown provider kind {self.kind!r}")
        if self.dim <= 0:
            raise ValueError("provider dim must be positive")
        if self.kind == "fixture" and not self.fixture_dir:
            raise ValueError("fixture provider needs fixture_dir")

    def build(self) -> EmbeddingProvider:
        if self.kind == "mock":
            return MockProvider(self.dim, self.seed)
        return FixtureProvider(self.fixture_dir, self.dim)


def align_to_grid(e: EmbeddingFrames, t_target: int) -> np.ndarray:
    """Linearly resample embedding frames along time to ``t_target`` rows.

    Both grids span the utterance end to end, so the first and last rows
    map onto each other.
    """
    if t_target < 1:
        raise ValueError("t_target must be >= 1")
    values = e.values
    t_src = values.shape[0]
    if t_target == t_src:
        return values.copy()
    if t_target == 1:
        pos = np.array([(t_src - 1) / 2.0])
    else:
        pos = np.arange(t_target) * ((t_src - 1) / (t_target - 1))
    lo = np.clip(np.floor(pos).astype(int), 0, t_src - 1)
    hi = np.minimum(lo + 1, t_src - 1)
    frac = (pos - lo)[:, None]
    return (1.0 - frac) * values[lo] + frac * values[hi]
