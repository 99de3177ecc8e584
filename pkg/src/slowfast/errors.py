"""Exceptions shared across the engines and the harness."""

from __future__ import annotations


class BlowUpError(RuntimeError):
    """A trajectory left the finite range; carries time and state summary."""

    def __init__(self, message: str, t: float, state: dict):
        super().__init__(f"{message} at t = {t:.6g}: {state}")
        self.t = t
        self.state = state


class ConfigError(ValueError):
    """Invalid experiment configuration (CLI exit code 64)."""
