"""Caravan: a three-stage adaptive analysis pipeline engine with a persisted
task orchestrator, provenance-tracked artifact store, plugin registry, and
HTTP/CLI gateway."""

__version__ = "0.1.0"

from .core import FAMILIES, content_id, derive_seed, resolve_label
from .service import CaravanService, run_pipeline

__all__ = [
    "__version__",
    "FAMILIES",
    "content_id",
    "derive_seed",
    "resolve_label",
    "CaravanService",
    "run_pipeline",
]
