"""Numerical laboratory for variance-preserving diffusion samplers on
compactly supported targets: exact score oracles, exponential-integrator
backward sampling, Wasserstein-1 diagnostics, bound evaluators, and a
verification harness for the quantitative inequalities the pipeline relies on.
"""

__version__ = "0.1.0"
