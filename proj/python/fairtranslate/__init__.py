"""Fairness-aware image-to-image translation toolkit (python surface).

The heavy lifting happens in the C++ extension `_core`, which links against
libtorch. Importing torch first guarantees the shared libraries are already
loaded when the extension is resolved.
"""

try:  # pragma: no cover - environment dependent
    import torch  # noqa: F401
except ImportError:
    pass

from ._core import (  # noqa: F401
    ValidationError,
    FormatError,
    TrainingDivergence,
    generate_synthetic,
    write_synthetic_dataset,
    decode_synthetic_labels,
    gaussian_stats,
    frechet_distance,
    frechet_from_embeddings,
    kid_from_embeddings,
    equality_of_opportunity,
    equality_of_opportunity_from_rates,
    equalized_odds,
    equalized_odds_from_rates,
    confusion_rates,
    train_pac,
    fpad,
    translate_images,
    __version__,
)

__all__ = [
    "ValidationError",
    "FormatError",
    "TrainingDivergence",
    "generate_synthetic",
    "write_synthetic_dataset",
    "decode_synthetic_labels",
    "gaussian_stats",
    "frechet_distance",
    "frechet_from_embeddings",
    "kid_from_embeddings",
    "equality_of_opportunity",
    "equality_of_opportunity_from_rates",
    "equalized_odds",
    "equalized_odds_from_rates",
    "confusion_rates",
    "train_pac",
    "fpad",
    "translate_images",
    "__version__",
]
