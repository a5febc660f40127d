"""Multi-field spatio-temporal surrogate for shock propagation in structured media."""

__version__ = "0.1.0"
