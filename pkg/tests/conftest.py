from pathlib import Path

import numpy as np
import pytest
import torch

from mbinet.config import OptimConfig, RunConfig
from mbinet.embeddings import ProviderSpec
from mbinet.features import FeatureBundle, UtteranceFeatures
from mbinet.model import ModelConfig
from mbinet.synthetic import make_corpus

torch.set_num_threads(1)

# every width <= 8 (raw frames are 16 samples); used for finite-difference checks
TINY = ModelConfig(
    lfb_filters=4, lfb_kernel=4, cnn_channels=(4, 4), blstm_hidden=4, attn_dim=4, proj_dim=8,
    ps_bins=8, raw_width=16, emb_dim=6, seed=3,
)

# small but real geometry (257 PS bins, 400-sample raw frames) for training runs
SMALL = ModelConfig(
    lfb_filters=8, cnn_channels=(4, 8), blstm_hidden=16, attn_dim=16, proj_dim=32, emb_dim=16,
)


def random_bundle(rng: np.random.Generator, cfg: ModelConfig, t: int) -> FeatureBundle:
    return FeatureBundle(
        ps=rng.normal(-2.0, 1.0, size=(t, cfg.ps_bins)),
        raw_frames=rng.normal(0.0, 0.3, size=(t, cfg.raw_width)),
        emb=np.tanh(rng.normal(size=(t, cfg.emb_dim))),
    )


def random_features(rng: np.random.Generator, cfg: ModelConfig, t: int) -> UtteranceFeatures:
    return UtteranceFeatures(random_bundle(rng, cfg, t), random_bundle(rng, cfg, t), "rand")


def run_config(manifest: Path, out: Path, **overrides) -> RunConfig:
    tasks = overrides.pop("tasks", ("intelligibility", "haspi"))
    model = overrides.pop("model", SMALL)
    model = ModelConfig.from_dict({**model.to_dict(), "tasks": list(tasks)})
    optim = overrides.pop("optim", OptimConfig(lr=3e-3, max_epochs=5, patience=0))
    return RunConfig(
        manifest=manifest, output_dir=out, tasks=model.tasks, provider=ProviderSpec(dim=model.emb_dim),
        model=model, optim=optim, **overrides,
    )


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def corpus8(tmp_path_factory) -> Path:
    return make_corpus(tmp_path_factory.mktemp("corpus8"), n_utterances=8, seed=0)


@pytest.fixture(scope="session")
def corpus_tracks(tmp_path_factory) -> Path:
    return make_corpus(tmp_path_factory.mktemp("corpus3t"), n_utterances=12, seed=5, n_tracks=3)


# acceptance reporting: one PASS/FAIL line per criterion at the end of the run
_ACCEPTANCE: dict[str, str] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance(name): acceptance criterion covered by the test")


def pytest_runtest_logreport(report):
    marker = dict(report.user_properties).get("acceptance")
    if marker is None:
        return
    if report.when == "call" or report.outcome != "passed":
        previous = _ACCEPTANCE.get(marker)
        if previous != "FAIL":
            _ACCEPTANCE[marker] = "PASS" if report.outcome == "passed" else "FAIL"


def pytest_collection_modifyitems(items):
    for item in items:
        m = item.get_closest_marker("acceptance")
        if m is not None:
            item.user_properties.append(("acceptance", m.args[0]))


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name, status in _ACCEPTANCE.items():
        terminalreporter.write_line(f"{status}  {name}")
