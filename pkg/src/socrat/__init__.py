"""socrat: causal, chunked explanations for black-box structured models.

Perturb the input, watch the black box, fit one Bayesian logistic
regression per output token, and partition the resulting dependency graph
into robust explanation chunks.
"""
from .core import ExamplePair, PerturbationSet, Scheme, Side, Token, TokenSequence, tokenize
from .errors import (
    BlackBoxFailureError,
    EmptyNeighborhoodError,
    EmptySequenceError,
    ExternalPerturberUnavailableError,
    FormatError,
    InfeasibleBoundsError,
    InvalidKError,
    MissingOriginalError,
    ProtocolError,
    SocratError,
)

__version__ = "0.1.0"

__all__ = [
    "__version__",
    "Token",
    "TokenSequence",
    "ExamplePair",
    "PerturbationSet",
    "Side",
    "Scheme",
    "tokenize",
    "SocratError",
    "EmptySequenceError",
    "FormatError",
    "MissingOriginalError",
    "EmptyNeighborhoodError",
    "ExternalPerturberUnavailableError",
    "ProtocolError",
    "BlackBoxFailureError",
    "InfeasibleBoundsError",
    "InvalidKError",
]
