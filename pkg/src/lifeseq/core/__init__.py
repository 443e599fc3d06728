"""Core data structures: schema, encoding, grammar validation, numerics and the network."""

from .encoding import LifeSequence, encode_individual, encode_population, parse_events
from .network import LifeSequenceTransformer, build_model, parameter_census
from .quantization import QuantizerState, fit_quantizer
from .schema import PersonProfile, TabularRecord
from .validation import GrammarVerdict, failure_year_density, validate_sequence
from .vocabulary import Vocabulary

__all__ = [
    "PersonProfile",
    "TabularRecord",
    "QuantizerState",
    "fit_quantizer",
    "Vocabulary",
    "LifeSequence",
    "encode_individual",
    "encode_population",
    "parse_events",
    "GrammarVerdict",
    "validate_sequence",
    "failure_year_density",
    "LifeSequenceTransformer",
    "build_model",
    "parameter_census",
]
