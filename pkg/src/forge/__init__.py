"""Judge-gated multi-agent pipeline turning requirement documents into repos."""

__version__ = "0.1.0"
