"""Multi-layered acoustic tokenizer with a multi-target bottleneck network."""

__version__ = "0.1.0"
