"""Regret-trace figures: mean cumulative-regret curves with seed bands."""

from .render import PlotSpec, SchemaError, build_figure, load_trace, render

__version__ = "0.1.0"

__all__ = ["PlotSpec", "SchemaError", "build_figure", "load_trace", "render"]
