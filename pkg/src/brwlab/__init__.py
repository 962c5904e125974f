"""brwlab: critical branching random walks as electrical networks."""

__version__ = "0.1.0"
