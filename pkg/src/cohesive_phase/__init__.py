"""Phase-field approximation of free-discontinuity energies with superlinear surface terms."""
from .errors import DivergenceError, InputError, InvariantError, ShapeError

__version__ = "0.1.0"

__all__ = ["DivergenceError", "InputError", "InvariantError", "ShapeError", "__version__"]
