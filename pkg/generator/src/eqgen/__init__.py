"""eqgen: recurrent VAE that writes texture-equation corpora."""

from .model import EquationVae, VaeConfig
from .sampling import sample, uve, uve_strings
from .training import CorpusError, TrainResult, train
from .vocab import TokenVocabulary

__all__ = [
    "CorpusError",
    "EquationVae",
    "TokenVocabulary",
    "TrainResult",
    "VaeConfig",
    "sample",
    "train",
    "uve",
    "uve_strings",
]

__version__ = "0.1.0"
