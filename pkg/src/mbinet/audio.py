"""Waveform I/O, resampling and short-time power spectra."""
from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.signal import firwin, get_window, resample_poly

from mbinet.errors import MalformedWav, SignalTooShort, UnsupportedEncoding

CANONICAL_RATE = 16000
INGEST_RATES = frozenset({16000, 32000, 44100, 48000})
POWER_FLOOR = 1e-10

FRAME_LEN = 512
HOP = 256
N_FFT = 512

_RESAMPLE_TAPS_PER_PHASE = 64
_WAVE_FORMAT_PCM = 0x0001
_WAVE_FORMAT_IEEE_FLOAT = 0x0003
_WAVE_FORMAT_EXTENSIBLE = 0xFFFE


@dataclass(frozen=True, eq=False)
class StereoWaveform:
    """Binaural signal. Samples are float64 in nominal range [-1, 1]."""

    left: np.ndarray
    right: np.ndarray
    sample_rate_hz: int

    def __post_init__(self):
        left = np.ascontiguousarray(self.left, dtype=np.float64)
        right = np.ascontiguousarray(self.right, dtype=np.float64)
        if left.ndim != 1 or right.ndim != 1:
            raise ValueError("channels must be 1-D")
        if left.shape != right.shape:
            raise ValueError(f"channel lengths differ: {left.size} != {right.size}")
        if left.size == 0:
            raise ValueError("waveform is empty")
        if int(self.sample_rate_hz) <= 0:
            raise ValueError("sample rate must be positive")
        object.__setattr__(self, "left", left)
        object.__setattr__(self, "right", right)
        object.__setattr__(self, "sample_rate_hz", int(self.sample_rate_hz))

    def __len__(self) -> int:
        return self.left.size

    @property
    def duration_s(self) -> float:
        return len(self) / self.sample_rate_hz

    def swapped(self) -> StereoWaveform:
        return StereoWaveform(self.right, self.left, self.sample_rate_hz)


@dataclass(frozen=True, eq=False)
class SpectralFrames:
    """T x F log-power frames, F = n_fft // 2 + 1."""

    values: np.ndarray
    frame_hop_s: float
    frame_len_s: float

    @property
    def n_frames(self) -> int:
        return self.values.shape[0]


def _read_chunks(data: bytes):
    if len(data) < 12 or data[:4] != b"RIFF" or data[8:12] != b"WAVE":
        raise MalformedWav("not a RIFF/WAVE file")
    riff_size = struct.unpack_from("<I", data, 4)[0]
    if riff_size + 8 > len(data):
        raise MalformedWav(f"RIFF size {riff_size} exceeds file length {len(data)}")
    pos = 12
    chunks = {}
    while pos + 8 <= len(data):
        cid = data[pos:pos + 4]
        size = struct.unpack_from("<I", data, pos + 4)[0]
        start = pos + 8
        if start + size > len(data):
            raise MalformedWav(f"chunk {cid!r} size {size} exceeds file length")
        chunks.setdefault(cid, data[start:start + size])
        pos = start + size + (size & 1)
    return chunks


def load_wav(path: str | Path) -> StereoWaveform:
    """Read a PCM16 or float32 WAV file with one or two channels.

    Mono input is duplicated to both channels. The native sample rate is
    kept; use :func:`load_stereo` to get the canonical 16 kHz signal.
    """
    data = Path(path).read_bytes()
    chunks = _read_chunks(data)
    if b"fmt " not in chunks or b"data" not in chunks:
        raise MalformedWav("missing fmt or data chunk")
    fmt = chunks[b"fmt "]
    if len(fmt) < 16:
        raise MalformedWav("fmt chunk too short")
    tag, channels, rate, _, block_align, bits = struct.unpack_from("<HHIIHH", fmt)
    if tag == _WAVE_FORMAT_EXTENSIBLE:
        if len(fmt) < 26:
            raise MalformedWav("extensible fmt chunk too short")
        tag = struct.unpack_from("<H", fmt, 24)[0]

    if tag == _WAVE_FORMAT_PCM and bits == 16:
        dtype, scale = np.dtype("<i2"), 1.0 / 32768.0
    elif tag == _WAVE_FORMAT_IEEE_FLOAT and bits == 32:
        dtype, scale = np.dtype("<f4"), 1.0
    else:
        raise UnsupportedEncoding(f"format tag {tag:#06x} with {bits} bits is not supported")
    if channels not in (1, 2):
        raise UnsupportedEncoding(f"{channels} channels; expected 1 or 2")
    if rate not in INGEST_RATES:
        raise UnsupportedEncoding(f"sample rate {rate} Hz not in {sorted(INGEST_RATES)}")
    if block_align != channels * dtype.itemsize:
        raise MalformedWav("block alignment inconsistent with channel count")

    payload = chunks[b"data"]
    n = len(payload) // block_align
    if n == 0:
        raise MalformedWav("data chunk holds no complete frames")
    samples = np.frombuffer(payload[:n * block_align], dtype=dtype).reshape(n, channels)
    samples = samples.astype(np.float64) * scale
    if channels == 1:
        return StereoWaveform(samples[:, 0], samples[:, 0].copy(), rate)
    return StereoWaveform(samples[:, 0], samples[:, 1], rate)


def write_wav(path: str | Path, w: StereoWaveform) -> None:
    """Write a two-channel PCM16 file (used for fixtures and tests)."""
    pcm = np.stack([w.left, w.right], axis=1)
    pcm = np.clip(np.round(pcm * 32768.0), -32768, 32767).astype("<i2")
    payload = pcm.tobytes()
    header = struct.pack(
        "<4sI4s4sIHHIIHH4sI",
        b"RIFF", 36 + len(payload), b"WAVE",
        b"fmt ", 16, _WAVE_FORMAT_PCM, 2, w.sample_rate_hz, w.sample_rate_hz * 4, 4, 16,
        b"data", len(payload),
    )
    Path(path).write_bytes(header + payload)


def _resample_channel(x: np.ndarray, up: int, down: int, n_out: int) -> np.ndarray:
    h = firwin(_RESAMPLE_TAPS_PER_PHASE * up + 1, 1.0 / max(up, down), window=("kaiser", 5.0))
    y = resample_poly(x, up, down, window=h)
    if y.size >= n_out:
        return y[:n_out]
    return np.pad(y, (0, n_out - y.size))


def resample(w: StereoWaveform, target_hz: int) -> StereoWaveform:
    """Polyphase windowed-sinc resampling (64 taps per phase)."""
    if target_hz <= 0:
        raise ValueError("target rate must be positive")
    if target_hz == w.sample_rate_hz:
        return w
    g = math.gcd(target_hz, w.sample_rate_hz)
    up, down = target_hz // g, w.sample_rate_hz // g
    n_out = max(1, round(len(w) * target_hz / w.sample_rate_hz))
    return StereoWaveform(
        _resample_channel(w.left, up, down, n_out),
        _resample_channel(w.right, up, down, n_out),
        target_hz,
    )


def load_stereo(path: str | Path) -> StereoWaveform:
    return resample(load_wav(path), CANONICAL_RATE)


def n_frames(n_samples: int, frame_len: int, hop: int) -> int:
    if n_samples < frame_len:
        raise SignalTooShort(f"{n_samples} samples is shorter than one {frame_len}-sample frame")
    return 1 + (n_samples - frame_len) // hop


def frame_signal(x: np.ndarray, frame_len: int, hop: int) -> np.ndarray:
    """Non-padded framing; returns a (T, frame_len) read-only view."""
    t = n_frames(x.size, frame_len, hop)
    return np.lib.stride_tricks.sliding_window_view(x, frame_len)[: (t - 1) * hop + 1 : hop]


def stft_power(
    mono: np.ndarray,
    sample_rate_hz: int,
    frame_len: int = FRAME_LEN,
    hop: int = HOP,
    n_fft: int = N_FFT,
) -> SpectralFrames:
    """Natural-log power spectrum with a periodic Hann window, no centering."""
    if frame_len > n_fft:
        raise ValueError("frame_len must not exceed n_fft")
    if hop < 1:
        raise ValueError("hop must be >= 1")
    mono = np.asarray(mono, dtype=np.float64)
    frames = frame_signal(mono, frame_len, hop) * get_window("hann", frame_len)
    spec = np.fft.rfft(frames, n=n_fft, axis=1)
    power = spec.real**2 + spec.imag**2
    return SpectralFrames(
        values=np.log(power + POWER_FLOOR),
        frame_hop_s=hop / sample_rate_hz,
        frame_len_s=frame_len / sample_rate_hz,
    )
