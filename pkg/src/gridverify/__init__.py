"""Complete verification of ReLU networks under linear grid-physics constraints."""

from ._core import BACKEND_NAME

__version__ = "0.1.0"
__all__ = ["BACKEND_NAME", "__version__"]
