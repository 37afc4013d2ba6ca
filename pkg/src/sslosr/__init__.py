"""Semi-supervised open-set recognition with GANs.

Feature-matching GANs and adversarial reciprocal-point GANs trained and
evaluated under one open-set semi-supervised protocol, plus the supervised
softmax and reciprocal-point baselines.
"""

from sslosr.errors import (
    ArgumentError,
    FormatError,
    IntegrityError,
    NumericError,
    UnsupportedFormatError,
)

__version__ = "0.1.0"

__all__ = [
    "ArgumentError",
    "FormatError",
    "IntegrityError",
    "NumericError",
    "UnsupportedFormatError",
    "__version__",
]
