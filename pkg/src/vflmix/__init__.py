"""vflmix: vertical federated learning with few-shot label unlearning."""

from . import attacks, data, federation, harness, nn, privacy, unlearn

__version__ = "0.1.0"

__all__ = [
    "attacks",
    "data",
    "federation",
    "harness",
    "nn",
    "privacy",
    "unlearn",
    "__version__",
]
