"""Summary-then-predict modeling of behavioral time series, trained with GRPO."""

__version__ = "0.1.0"
