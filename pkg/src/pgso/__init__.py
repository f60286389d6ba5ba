"""Parametrised graph shift operators and operator-learning GNNs.

Public surface:

- :mod:`pgso.graph` -- graph storage, loaders, blockmodel sampling, splits
- :mod:`pgso.operator` -- the 7-parameter operator family, presets,
  sparse materialisation, matrix-free application and analytic gradients
- :mod:`pgso.spectral` -- real-spectrum eigensolves and Gershgorin bounds
- :mod:`pgso.nn` -- layers, losses, Adam with parameter groups
- :mod:`pgso.train` -- training loops, sparsity and initialisation sweeps
- :mod:`pgso.plots` -- figure rendering for the CSV reports
- :mod:`pgso.cli` -- the ``pgso`` command-line front end
"""

from pgso.graph import AttributedGraph, SbmSpec, SplitAssignment, degrees, load_graph, sample_sbm, split_nodes
from pgso.operator import ParamSet, PgsoMatrix, apply, build_operator, preset
from pgso.spectral import GershgorinReport, SpectralReport, eigenvalues, gershgorin, spectral_report

__version__ = "0.1.0"

__all__ = [
    "AttributedGraph",
    "SbmSpec",
    "SplitAssignment",
    "degrees",
    "load_graph",
    "sample_sbm",
    "split_nodes",
    "ParamSet",
    "PgsoMatrix",
    "apply",
    "build_operator",
    "preset",
    "GershgorinReport",
    "SpectralReport",
    "eigenvalues",
    "gershgorin",
    "spectral_report",
    "__version__",
]
