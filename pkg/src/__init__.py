"""Cave exploration simulator: multi-robot frontier exploration with relay homing."""

__version__ = "0.1.0"
