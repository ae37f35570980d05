"""Per-channel cross-domain feature assembly.

Each channel yields three time-aligned streams on the STFT frame grid
(512-sample frames, 256-sample hop): log-power spectra, 400-sample raw
waveform windows for the learnable filter bank, and embedding frames
interpolated onto the same grid.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from mbinet.audio import CANONICAL_RATE, FRAME_LEN, HOP, N_FFT, StereoWaveform, n_frames, stft_power
from mbinet.embeddings import EmbeddingProvider, align_to_grid, channel_key
from mbinet.errors import ShapeMismatch, SignalTooShort
from mbinet.hearing_loss import ListenerProfile, apply_hearing_loss

RAW_WIDTH = 400
_RAW_OFFSET = (FRAME_LEN - RAW_WIDTH) // 2


@dataclass(frozen=True, eq=False)
class FeatureBundle:
    ps: np.ndarray  # (T, F)
    raw_frames: np.ndarray  # (T, W)
    emb: np.ndarray  # (T, D)

    def __post_init__(self):
        rows = {self.ps.shape[0], self.raw_frames.shape[0], self.emb.shape[0]}
        if len(rows) != 1 or self.ps.shape[0] < 1:
            raise ShapeMismatch(
                f"streams disagree on T: ps {self.ps.shape}, raw {self.raw_frames.shape}, emb {self.emb.shape}"
            )

    @property
    def t_frames(self) -> int:
        return self.ps.shape[0]


@dataclass(frozen=True, eq=False)
class UtteranceFeatures:
    left: FeatureBundle
    right: FeatureBundle
    utterance_id: str = ""

    def __post_init__(self):
        if self.left.t_frames != self.right.t_frames:
            raise ShapeMismatch("left and right bundles have different frame counts")

    @property
    def t_frames(self) -> int:
        return self.left.t_frames


def raw_windows(x: np.ndarray, t: int) -> np.ndarray:
    """400-sample windows centred inside each STFT frame."""
    starts = np.arange(t) * HOP + _RAW_OFFSET
    return x[starts[:, None] + np.arange(RAW_WIDTH)]


def _channel_bundle(
    x: np.ndarray, emb_input: np.ndarray, key: str, provider: EmbeddingProvider
) -> FeatureBundle:
    ps = stft_power(x, CANONICAL_RATE, FRAME_LEN, HOP, N_FFT).values
    t = min(ps.shape[0], n_frames(x.size - _RAW_OFFSET, RAW_WIDTH, HOP))
    emb = align_to_grid(provider.embed(emb_input, key), t)
    return FeatureBundle(ps=ps[:t], raw_frames=raw_windows(x, t), emb=emb)


def assemble(
    w: StereoWaveform,
    profile: ListenerProfile,
    provider: EmbeddingProvider,
    use_hl: bool = True,
    hl_before_embeddings: bool = True,
    utterance_id: str = "",
) -> UtteranceFeatures:
    if w.sample_rate_hz != CANONICAL_RATE:
        raise ValueError(f"expected {CANONICAL_RATE} Hz input, got {w.sample_rate_hz}")
    if len(w) < FRAME_LEN:
        raise SignalTooShort(f"need at least {FRAME_LEN} samples, got {len(w)}")
    heard = apply_hearing_loss(w, profile) if use_hl else w
    emb_src = heard if hl_before_embeddings else w
    return UtteranceFeatures(
        left=_channel_bundle(heard.left, emb_src.left, channel_key(utterance_id, "left"), provider),
        right=_channel_bundle(heard.right, emb_src.right, channel_key(utterance_id, "right"), provider),
        utterance_id=utterance_id,
    )
