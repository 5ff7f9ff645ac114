"""Phone-aware LSTM language identification on a synthetic multi-language corpus."""

__version__ = "0.1.0"
