"""Grid-level toolkit for decomposing compactly supported functions into
pullback differences, with certified bounds at every stage."""

from .field_core import GridField, GridSpec, TimeField

__version__ = "0.1.0"

__all__ = ["GridField", "GridSpec", "TimeField", "__version__"]
