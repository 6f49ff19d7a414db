"""Post-activation tensor exporter for the bitbottleneck container format."""

from .export import ExporterError, ExportSpec, export_activations
from .model import MODELS, build_model, input_sample

__all__ = ["ExporterError", "ExportSpec", "export_activations",
           "MODELS", "build_model", "input_sample"]
