"""Decision-region topology of narrow fully-connected networks.

Component labeling on grids, unboundedness certificates for decision
regions, invertible-weight approximation and a small sphere-data trainer.
"""

from .errors import (ConvergenceError, IncompleteCertificateError, InputError, NarrowNetError,
                     PreconditionError, SchemaError, UnsupportedError)
from .net_core import RELU, TANH, ActivationKind, Layer, Network, decide, forward, leaky, width

__version__ = "0.1.0"

__all__ = [
    "ActivationKind", "Layer", "Network", "RELU", "TANH", "leaky", "forward", "decide", "width",
    "NarrowNetError", "InputError", "SchemaError", "PreconditionError", "UnsupportedError",
    "ConvergenceError", "IncompleteCertificateError",
]
