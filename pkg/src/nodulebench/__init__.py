"""nodulebench: a desk-scale 3-D nodule classifier plus multi-reader trial tooling."""

__version__ = "0.1.0"
