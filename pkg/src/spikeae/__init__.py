"""Spiking autoencoders trained with membrane-potential backpropagation."""

from .errors import (
    ConfigError,
    ConsistencyError,
    DataIOError,
    FormatError,
    InputDomainError,
    NumericalInstabilityError,
    SpikeAEError,
    StructuralError,
)
from .spike_core import (
    LifLayer,
    NeuronConfig,
    SpikeRaster,
    encode_poisson,
    lif_forward_step,
    poisson_spikes,
    scale_pixels,
    surrogate_derivative,
)
from .network import (
    HiddenStateMap,
    SpikingNetwork,
    TrainConfig,
    extract_hidden_state,
    train_audiocoder,
    train_autoencoder,
    synthesize_image,
)

__version__ = "0.1.0"
