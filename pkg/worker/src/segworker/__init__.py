"""segworker: reference subprocess worker for the segcurate pipeline."""

__version__ = "0.1.0"

from .backends import AdapterBackend, BackendError, ProceduralBackend
from .server import WorkerConfig, serve

__all__ = ["AdapterBackend", "BackendError", "ProceduralBackend", "WorkerConfig", "serve", "__version__"]
