"""Layer-attentive text classification with a contrastive auxiliary loss."""
from .errors import ConfigError, DataError, LarcError, NumericalFailure
from .estimator import LayerAttentiveClassifier

__version__ = "0.1.0"

__all__ = ["ConfigError", "DataError", "LarcError", "LayerAttentiveClassifier", "NumericalFailure", "__version__"]
