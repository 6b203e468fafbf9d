"""Data-driven state-feedback synthesis for discrete-time systems with delays."""
__version__ = "0.1.0"
