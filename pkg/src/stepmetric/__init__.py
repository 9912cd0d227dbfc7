"""Assembly-step estimation with metric-learned embeddings, k-NN voting and anomaly rejection."""
from .errors import StepMetricError
from .losses import LOSS_MODES

__version__ = "0.1.0"

__all__ = ["LOSS_MODES", "StepMetricError", "__version__"]
