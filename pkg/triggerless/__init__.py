"""Laboratory for triggerless, dropout-activated neural-network backdoors."""

__version__ = "0.1.0"
