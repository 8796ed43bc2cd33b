"""Daily journeys from call detail records, and the OD matrices built from them."""

__version__ = "0.1.0"
