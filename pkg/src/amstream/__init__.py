"""Adaptive model streaming: server-side continual distillation for edge students."""

__version__ = "0.1.0"
