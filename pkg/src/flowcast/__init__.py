"""Road-network traffic forecasting with joint space-time linear attention."""

__version__ = "0.1.0"

from .tensor import Tensor, backward, l1_loss  # noqa: F401
