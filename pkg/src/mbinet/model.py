"""Two-branch CNN-BLSTM+attention intelligibility predictor.

Each branch (left ear, right ear) maps a :class:`FeatureBundle` to one
score per frame for every task. Per task, the left and right frame scores
are fused by a 2->1 linear layer and averaged over time to give the
utterance score. ``tasks=("intelligibility",)`` gives the single-task
network; adding ``"haspi"`` gives the two-task one.

The model is a regular :class:`torch.nn.Module`; the functional helpers
(:func:`init_params`, :func:`forward`, :func:`backward`) treat the
parameters as a plain name -> tensor mapping.
"""
from __future__ import annotations

import math
import zlib
from collections import OrderedDict
from dataclasses import asdict, dataclass, field
from functools import lru_cache
from typing import Mapping

import numpy as np
import torch
import torch.nn.functional as F
from torch import Tensor, nn
from torch.func import functional_call

from mbinet.errors import ShapeMismatch
from mbinet.features import FeatureBundle, UtteranceFeatures

INTELLIGIBILITY = "intelligibility"
HASPI = "haspi"
KNOWN_TASKS = (INTELLIGIBILITY, HASPI)
SIDES = ("left", "right")
LFB_LOG_EPS = 1e-7
DTYPE = torch.float64

ParameterSet = OrderedDict[str, Tensor]


@dataclass(frozen=True)
class ModelConfig:
    lfb_filters: int = 64
    lfb_kernel: int = 400
    cnn_channels: tuple[int, ...] = (16, 32)
    blstm_hidden: int = 128
    attn_dim: int = 128
    proj_dim: int = 256
    tasks: tuple[str, ...] = (INTELLIGIBILITY, HASPI)
    seed: int = 0
    # input geometry
    ps_bins: int = 257
    raw_width: int = 400
    emb_dim: int = 64
    freq_stride: int = 3

    def __post_init__(self):
        object.__setattr__(self, "cnn_channels", tuple(int(c) for c in self.cnn_channels))
        tasks = tuple(t for t in KNOWN_TASKS if t in set(self.tasks))
        if set(self.tasks) - set(KNOWN_TASKS):
            raise ValueError(f"unknown tasks: {sorted(set(self.tasks) - set(KNOWN_TASKS))}")
        if INTELLIGIBILITY not in tasks:
            raise ValueError("tasks must include intelligibility")
        object.__setattr__(self, "tasks", tasks)
        widths = (self.lfb_filters, self.lfb_kernel, self.blstm_hidden, self.attn_dim,
                  self.proj_dim, self.ps_bins, self.raw_width, self.emb_dim, self.freq_stride)
        if min(widths) <= 0 or not self.cnn_channels or min(self.cnn_channels) <= 0:
            raise ValueError("all model widths must be positive")
        if self.lfb_kernel > self.raw_width:
            raise ValueError("lfb_kernel cannot exceed raw_width")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["cnn_channels"] = list(self.cnn_channels)
        d["tasks"] = list(self.tasks)
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> ModelConfig:
        return cls(**{**d, "cnn_channels": tuple(d["cnn_channels"]), "tasks": tuple(d["tasks"])})


@dataclass
class TaskPrediction:
    frame_left: Tensor
    frame_right: Tensor
    frame_merged: Tensor
    utterance: Tensor


@dataclass
class PredictionBundle:
    tasks: dict[str, TaskPrediction] = field(default_factory=dict)

    def __getitem__(self, task: str) -> TaskPrediction:
        return self.tasks[task]

    def __contains__(self, task: str) -> bool:
        return task in self.tasks

    def utterance_scores(self) -> dict[str, float]:
        return {t: float(p.utterance.detach()) for t, p in self.tasks.items()}


def _cnn_out_width(width: int, n_layers: int, stride: int) -> int:
    for _ in range(n_layers):
        width = (width + 2 - 3) // stride + 1
    return width


class SpectralCNN(nn.Module):
    """3x3 conv stack over a (time, feature) plane; strides only along features."""

    def __init__(self, in_width: int, channels: tuple[int, ...], freq_stride: int):
        super().__init__()
        chans = (1, *channels)
        self.convs = nn.ModuleList(
            nn.Conv2d(chans[i], chans[i + 1], kernel_size=3, stride=(1, freq_stride), padding=1)
            for i in range(len(channels))
        )
        self.out_features = channels[-1] * _cnn_out_width(in_width, len(channels), freq_stride)

    def forward(self, x: Tensor) -> Tensor:  # (T, W) -> (T, C * W')
        h = x[None, None]
        for conv in self.convs:
            h = F.elu(conv(h))
        t = x.shape[0]
        return h[0].permute(1, 0, 2).reshape(t, -1)


class Branch(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        self.lfb = nn.Conv1d(1, cfg.lfb_filters, cfg.lfb_kernel, stride=cfg.lfb_kernel, bias=False)
        self.ps_cnn = SpectralCNN(cfg.ps_bins, cfg.cnn_channels, cfg.freq_stride)
        self.emb_cnn = SpectralCNN(cfg.emb_dim, cfg.cnn_channels, cfg.freq_stride)
        concat = cfg.lfb_filters + self.ps_cnn.out_features + self.emb_cnn.out_features
        self.proj = nn.Linear(concat, cfg.proj_dim)
        self.blstm = nn.LSTM(cfg.proj_dim, cfg.blstm_hidden, batch_first=True, bidirectional=True)
        self.query = nn.Linear(2 * cfg.blstm_hidden, cfg.attn_dim, bias=False)
        self.key = nn.Linear(2 * cfg.blstm_hidden, cfg.attn_dim, bias=False)
        self.value = nn.Linear(2 * cfg.blstm_hidden, cfg.attn_dim, bias=False)
        self.heads = nn.ModuleDict({t: nn.Linear(cfg.attn_dim, 1) for t in cfg.tasks})

    def filterbank(self, raw: Tensor) -> Tensor:  # (T, W) -> (T, filters)
        out = self.lfb(raw[:, None, :]).abs().mean(dim=2)
        return torch.log(out + LFB_LOG_EPS)

    def attend(self, h: Tensor) -> Tensor:
        q, k, v = self.query(h), self.key(h), self.value(h)
        weights = torch.softmax(q @ k.T / math.sqrt(self.cfg.attn_dim), dim=-1)
        return weights @ v

    def forward(self, ps: Tensor, raw: Tensor, emb: Tensor) -> dict[str, Tensor]:
        x = torch.cat([self.filterbank(raw), self.ps_cnn(ps), self.emb_cnn(emb)], dim=1)
        h, _ = self.blstm(self.proj(x)[None])
        z = self.attend(h[0])
        return {t: head(z)[:, 0] for t, head in self.heads.items()}


class MBINet(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        self.left = Branch(cfg)
        self.right = Branch(cfg)
        self.merge = nn.ModuleDict({t: nn.Linear(2, 1) for t in cfg.tasks})

    def _inputs(self, b: FeatureBundle) -> tuple[Tensor, Tensor, Tensor]:
        cfg = self.cfg
        expected = {"ps": cfg.ps_bins, "raw_frames": cfg.raw_width, "emb": cfg.emb_dim}
        for name, width in expected.items():
            arr = getattr(b, name)
            if arr.ndim != 2 or arr.shape[1] != width:
                raise ShapeMismatch(f"{name} has shape {arr.shape}, model expects (T, {width})")
        return tuple(_as_tensor(getattr(b, name)) for name in expected)

    def branch(self, side: str, b: FeatureBundle) -> dict[str, Tensor]:
        return getattr(self, side)(*self._inputs(b))

    def forward(self, u: UtteranceFeatures) -> PredictionBundle:
        left = self.branch("left", u.left)
        right = self.branch("right", u.right)
        out = PredictionBundle()
        for t in self.cfg.tasks:
            merged, utterance = merge_scores(left[t], right[t], self.merge[t].weight, self.merge[t].bias)
            out.tasks[t] = TaskPrediction(left[t], right[t], merged, utterance)
        return out


def merge_scores(left: Tensor, right: Tensor, weight: Tensor, bias: Tensor) -> tuple[Tensor, Tensor]:
    """2->1 linear fusion of frame scores followed by the global average."""
    merged = F.linear(torch.stack([left, right], dim=1), weight, bias)[:, 0]
    return merged, merged.mean()


def _as_tensor(a) -> Tensor:
    if isinstance(a, Tensor):
        return a.to(DTYPE)
    return torch.from_numpy(np.ascontiguousarray(a, dtype=np.float64))


def _fans(shape: tuple[int, ...]) -> tuple[int, int]:
    receptive = math.prod(shape[2:]) if len(shape) > 2 else 1
    fan_in = (shape[1] if len(shape) > 1 else 1) * receptive
    return fan_in, shape[0] * receptive


def _is_bias(name: str) -> bool:
    leaf = name.rsplit(".", 1)[-1]
    return leaf == "bias" or leaf.startswith("bias_")


def init_params(cfg: ModelConfig) -> ParameterSet:
    """Glorot-uniform weights and zero biases, one seeded stream per array.

    Seeding per parameter name keeps shared weights identical whichever
    task heads are present.
    """
    params = OrderedDict()
    for name, p in _skeleton(cfg).named_parameters():
        shape = tuple(p.shape)
        if _is_bias(name):
            params[name] = torch.zeros(shape, dtype=DTYPE)
            continue
        fan_in, fan_out = _fans(shape)
        bound = math.sqrt(6.0 / (fan_in + fan_out))
        rng = np.random.default_rng([cfg.seed & 0xFFFFFFFFFFFFFFFF, zlib.crc32(name.encode())])
        params[name] = torch.from_numpy(rng.uniform(-bound, bound, size=shape))
    return params


@lru_cache(maxsize=16)
def _skeleton(cfg: ModelConfig) -> MBINet:
    with torch.random.fork_rng():
        return MBINet(cfg).to(DTYPE)


def build(cfg: ModelConfig, params: Mapping[str, Tensor] | None = None) -> MBINet:
    """Fresh module holding ``params`` (or a new initialisation)."""
    with torch.random.fork_rng():
        model = MBINet(cfg).to(DTYPE)
    load_params(model, init_params(cfg) if params is None else params)
    return model


def load_params(model: MBINet, params: Mapping[str, Tensor]) -> None:
    own = dict(model.named_parameters())
    if set(own) != set(params):
        missing, extra = sorted(set(own) - set(params)), sorted(set(params) - set(own))
        raise ShapeMismatch(f"parameter names differ; missing {missing}, unexpected {extra}")
    with torch.no_grad():
        for name, p in own.items():
            src = _as_tensor(params[name])
            if tuple(src.shape) != tuple(p.shape):
                raise ShapeMismatch(f"{name}: shape {tuple(src.shape)} != {tuple(p.shape)}")
            p.copy_(src)


def export_params(model: MBINet) -> OrderedDict[str, Tensor]:
    return OrderedDict((n, p.detach().clone()) for n, p in model.named_parameters())


def branch_forward(
    params: Mapping[str, Tensor], cfg: ModelConfig, b: FeatureBundle, side: str = "left"
) -> dict[str, Tensor]:
    """Per-task frame scores ``{task: (T,)}`` of one branch."""
    model = _skeleton(cfg)
    prefix = side + "."
    own = {k[len(prefix):]: v for k, v in params.items() if k.startswith(prefix)}
    return functional_call(getattr(model, side), own, model._inputs(b), strict=True)


def forward(params: Mapping[str, Tensor], cfg: ModelConfig, u: UtteranceFeatures) -> PredictionBundle:
    return functional_call(_skeleton(cfg), dict(params), (u,), strict=True)


def backward(
    params: Mapping[str, Tensor],
    cfg: ModelConfig,
    u: UtteranceFeatures,
    seeds: Mapping[str, Mapping[str, Tensor]],
) -> OrderedDict[str, Tensor]:
    """Vector-Jacobian product of the prediction bundle.

    ``seeds[task][field]`` is the gradient of some scalar with respect to
    ``frame_left``, ``frame_right``, ``frame_merged`` or ``utterance``;
    absent entries count as zero. Returns one gradient per parameter.
    """
    leaves = OrderedDict((n, _as_tensor(p).detach().requires_grad_(True)) for n, p in params.items())
    pred = forward(leaves, cfg, u)
    outputs, grads = [], []
    for task, fields in seeds.items():
        for field_name, g in fields.items():
            outputs.append(getattr(pred[task], field_name))
            grads.append(_as_tensor(g).reshape(outputs[-1].shape))
    result = torch.autograd.grad(outputs, list(leaves.values()), grads, allow_unused=True) if outputs \
        else [None] * len(leaves)
    return OrderedDict(
        (n, torch.zeros_like(p) if g is None else g) for (n, p), g in zip(leaves.items(), result)
    )
