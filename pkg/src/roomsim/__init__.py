"""Room-acoustics simulation engines and dereverberation evaluation toolkit.

Three RIR engines (image source, stochastic ray tracing, FDTD wave solver)
share one scene description, feed a WPE-based dereverberation pipeline, and
the agreement layer compares evaluation results across engines.
"""

from .version import __version__

__all__ = ["__version__"]
