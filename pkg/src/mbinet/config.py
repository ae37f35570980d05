"""Run configuration (TOML with dotted keys).

Example::

    manifest = "data/manifest.json"
    output_dir = "runs/track1"
    tasks = ["intelligibility", "haspi"]
    track = 1
    hl.enabled = true
    hl_before_embeddings = true
    provider.kind = "mock"
    provider.dim = 64
    model.blstm_hidden = 128
    loss.beta = 0.5
    optim.lr = 1e-4
    split.seed = 0

Relative paths are resolved against the directory of the config file.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping, Optional

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from mbinet.embeddings import ProviderSpec
from mbinet.errors import SchemaError
from mbinet.model import ModelConfig
from mbinet.objectives import LossWeights


@dataclass(frozen=True)
class OptimConfig:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    accumulate: int = 4
    max_epochs: int = 100
    patience: int = 5  # 0 disables early stopping
    order_seed: int = 0

    def __post_init__(self):
        if self.lr <= 0 or self.accumulate < 1 or self.max_epochs < 1 or self.patience < 0:
            raise ValueError(f"invalid optimizer settings: {self}")


@dataclass(frozen=True)
class RunConfig:
    manifest: Path
    output_dir: Path
    tasks: tuple[str, ...] = ("intelligibility", "haspi")
    track: Optional[int] = None
    hl_enabled: bool = True
    hl_before_embeddings: bool = True
    provider: ProviderSpec = field(default_factory=ProviderSpec)
    model: ModelConfig = field(default_factory=ModelConfig)
    loss: LossWeights = field(default_factory=LossWeights)
    optim: OptimConfig = field(default_factory=OptimConfig)
    split_seed: int = 0
    split_ratio: float = 0.9
    workers: int = 1

    def replace(self, **changes) -> RunConfig:
        return dataclasses.replace(self, **changes)


def _section(cls, values: Mapping[str, Any], name: str, **fixed):
    if not isinstance(values, Mapping):
        raise SchemaError(f"{name} must be a table")
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = set(values) - known
    if unknown:
        raise SchemaError(f"unknown {name}.* key(s): {sorted(unknown)}")
    try:
        return cls(**{**values, **fixed})
    except (TypeError, ValueError) as exc:
        raise SchemaError(f"invalid {name} settings: {exc}") from None


_TOP = {"manifest", "output_dir", "tasks", "track", "hl", "hl_before_embeddings", "provider",
        "model", "loss", "optim", "split", "workers"}


def from_mapping(raw: Mapping[str, Any], base_dir: Path = Path(".")) -> RunConfig:
    unknown = set(raw) - _TOP
    if unknown:
        raise SchemaError(f"unknown config key(s): {sorted(unknown)}")
    for key in ("manifest", "output_dir"):
        if key not in raw:
            raise SchemaError(f"config is missing {key!r}")
    tasks = tuple(raw.get("tasks", ("intelligibility", "haspi")))
    provider_raw = dict(raw.get("provider", {}))
    if provider_raw.get("fixture_dir"):
        provider_raw["fixture_dir"] = str(base_dir / provider_raw["fixture_dir"])
    provider = _section(ProviderSpec, provider_raw, "provider")
    model_raw = dict(raw.get("model", {}))
    for fixed in ("tasks", "emb_dim"):
        if fixed in model_raw:
            raise SchemaError(f"model.{fixed} is derived; set it via the top-level/provider keys")
    if "cnn_channels" in model_raw:
        model_raw["cnn_channels"] = tuple(model_raw["cnn_channels"])
    model = _section(ModelConfig, model_raw, "model", tasks=tasks, emb_dim=provider.dim)
    split_raw = raw.get("split", {})
    if set(split_raw) - {"seed", "ratio"}:
        raise SchemaError(f"unknown split.* key(s): {sorted(set(split_raw) - {'seed', 'ratio'})}")
    hl = raw.get("hl", {})
    if set(hl) - {"enabled"}:
        raise SchemaError(f"unknown hl.* key(s): {sorted(set(hl) - {'enabled'})}")
    return RunConfig(
        manifest=base_dir / raw["manifest"],
        output_dir=base_dir / raw["output_dir"],
        tasks=model.tasks,
        track=raw.get("track"),
        hl_enabled=bool(hl.get("enabled", True)),
        hl_before_embeddings=bool(raw.get("hl_before_embeddings", True)),
        provider=provider,
        model=model,
        loss=_section(LossWeights, raw.get("loss", {}), "loss"),
        optim=_section(OptimConfig, raw.get("optim", {}), "optim"),
        split_seed=int(split_raw.get("seed", 0)),
        split_ratio=float(split_raw.get("ratio", 0.9)),
        workers=int(raw.get("workers", 1)),
    )


def load_config(path: str | Path) -> RunConfig:
    path = Path(path)
    try:
        raw = tomllib.loads(path.read_text())
    except tomllib.TOMLDecodeError as exc:
        raise SchemaError(f"{path}: {exc}") from None
    return from_mapping(raw, path.parent)
