"""Converter from the released pretrained detector checkpoint to SPWF."""

from .export import (
    ExportError,
    ExportManifest,
    ShapeMismatch,
    UnknownTensor,
    export_reference_activations,
    export_weights,
    read_pgm,
    write_synthetic_checkpoint,
)

__all__ = [
    "ExportError",
    "ExportManifest",
    "ShapeMismatch",
    "UnknownTensor",
    "export_reference_activations",
    "export_weights",
    "read_pgm",
    "write_synthetic_checkpoint",
]

__version__ = "0.1.0"
