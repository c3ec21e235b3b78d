"""Many-body four-well embedding of a PT-symmetric gain/loss double well."""

__version__ = "0.1.0"
