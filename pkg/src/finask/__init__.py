"""finask: natural-language querying over a financial-statement warehouse."""

__version__ = "0.1.0"
