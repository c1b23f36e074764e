"""Post-hoc causal correction of black-box tabular generators."""

__version__ = "0.1.0"
