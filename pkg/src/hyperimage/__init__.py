"""Two-stage patch / hyper-image CNN pipelines on a small numpy engine."""

__version__ = "0.1.0"
