from functools import wraps
from typing import Optional, Sequence

from pydantic import ValidationError

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERICAL = 3


class AbdoshapeError(Exception):
    """Base class for shape pipeline errors"""
    exit_code = EXIT_DATA

    def __init__(self, message: str, cause: Optional[Exception] = None):
        super().__init__(message)
        self.cause = cause


class UsageError(AbdoshapeError):
    """Raised for invalid command-line usage or arguments"""
    exit_code = EXIT_USAGE


class DataError(AbdoshapeError):
    """Raised when input data is missing, malformed or unusable"""
    exit_code = EXIT_DATA


class NumericalError(AbdoshapeError):
    """Raised when a numerical routine fails"""
    exit_code = EXIT_NUMERICAL


class FileFormatError(DataError):
    """Raised when a VOX1/PCL1/TNSR/OFF/CSV file cannot be parsed"""
    pass


class ManifestError(DataError):
    """Raised when a cohort manifest is invalid"""
    pass


class EmptySurfaceError(DataError):
    """Raised when a voxel grid contains no isosurface"""
    pass


class GridBoundsError(DataError):
    """Raised when a synthetic shape does not fit its grid"""
    pass


class DegenerateMeshError(DataError):
    """Raised when a mesh has no usable (non-zero area) triangle"""
    pass


class ShapeMismatchError(DataError):
    """Raised when array or descriptor shapes do not line up"""

    def __init__(self, message: str, shapes: Sequence = (), cause: Optional[Exception] = None):
        super().__init__(message, cause)
        self.shapes = tuple(shapes)


class SingleClassError(DataError):
    """Raised when a training or evaluation set contains one class only"""
    pass


class NonManifoldMeshError(NumericalError):
    """Raised when extracted surfaces are not closed and edge-manifold"""
    pass


class DegenerateTriangleError(NumericalError):
    """Raised when FEM assembly meets a zero-area triangle"""

    def __init__(self, message: str, triangle_index: int, cause: Optional[Exception] = None):
        super().__init__(message, cause)
        self.triangle_index = triangle_index


class ConvergenceError(NumericalError):
    """Raised when an iterative solver stops before reaching tolerance"""

    def __init__(self, message: str, residuals: Sequence[float] = (), cause: Optional[Exception] = None):
        super().__init__(message, cause)
        self.residuals = list(residuals)


class InsufficientSpectrumError(NumericalError):
    """Raised when fewer non-zero eigenvalues than requested are available"""
    pass


class NonFiniteError(NumericalError):
    """Raised when an operation produces NaN or Inf"""
    pass


class PerplexityError(DataError):
    """Raised when a t-SNE perplexity cannot be met for the given row count"""
    pass


def wrap_errors(func):
    """Decorator to wrap unexpected exceptions in AbdoshapeError"""
    @wraps(func)
    def wrapper(*args, **kwargs):
        try:
            return func(*args, **kwargs)
        except AbdoshapeError:
            raise
        except ValidationError as e:
            raise UsageError(f"{func.__name__} got invalid settings: {str(e)}", cause=e)
        except (FloatingPointError, ArithmeticError, ValueError) as e:
            raise NumericalError(f"{func.__name__} failed: {str(e)}", cause=e)
        except OSError as e:
            raise DataError(f"{func.__name__} failed: {str(e)}", cause=e)
    return wrapper
