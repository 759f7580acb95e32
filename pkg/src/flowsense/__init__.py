"""Graph-based soft sensors for chemical flowsheets, with transfer between plants."""

__version__ = "0.1.0"

from . import flowgraph, model, neural, procsim, rng, training, transfer  # noqa: E402
