"""Non-intrusive binaural speech-intelligibility prediction."""

from mbinet.config import RunConfig, load_config
from mbinet.embeddings import FixtureProvider, MockProvider, ProviderSpec
from mbinet.features import FeatureBundle, UtteranceFeatures, assemble
from mbinet.hearing_loss import Audiogram, ListenerProfile
from mbinet.model import ModelConfig, PredictionBundle
from mbinet.objectives import LossWeights, UtteranceTargets, total_loss
from mbinet.training import evaluate, predict, train

__version__ = "0.1.0"

__all__ = [
    "Audiogram", "FeatureBundle", "FixtureProvider", "ListenerProfile", "LossWeights", "MockProvider",
    "ModelConfig", "PredictionBundle", "ProviderSpec", "RunConfig", "UtteranceFeatures",
    "UtteranceTargets", "assemble", "evaluate", "load_config", "predict", "total_loss", "train",
]
