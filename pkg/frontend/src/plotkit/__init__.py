"""plotkit: publication-style figures from benchmark CSV artifacts."""
from plotkit.figures import FigureSpec, PlotError, plot

__all__ = ["FigureSpec", "PlotError", "plot"]
__version__ = "0.1.0"
