"""Post-processing and figure rendering for monohop telemetry CSV files."""

__version__ = "0.1.0"

from .render import KINDS, MODE_COLORS, PlotSpec, RenderError, load, render

__all__ = ["KINDS", "MODE_COLORS", "PlotSpec", "RenderError", "load", "render"]
