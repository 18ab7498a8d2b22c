"""Probabilistic multi-view graph embedding."""

__version__ = "0.1.0"

from .errors import (
    DegenerateLikelihoodError,
    DimensionMismatchError,
    InnerProductOverflowError,
    PMvGEError,
    TrainingError,
    ValidationError,
)
from .graph import Dataset, LinkWeights, PairIndex, ViewPairSet, index_pairs, load_dataset, write_dataset
from .encoders import EncoderStack, LayerSpec, init_params, linear_specs, mlp_specs
from .model import AlphaMatrix, ModelState, log_likelihood, mu, sample_weights
from .training import TrainConfig, Trainer, minibatch_objective, train, update_alpha
