"""On-road object importance estimation with multi-fold top-down guidance."""

__version__ = "0.1.0"
