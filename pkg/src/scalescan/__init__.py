"""Multi-scale video-text retrieval with selective state-space learners."""

__version__ = "0.1.0"

from .errors import ConfigError, ContractError, DomainError, ScaleScanError
from .tensor import Tensor, no_grad

__all__ = [
    "ConfigError", "ContractError", "DomainError", "ScaleScanError",
    "Tensor", "no_grad", "__version__",
]
