"""Graph-augmented attention networks for classifying compounds over a shared interaction graph."""

__version__ = "0.1.0"
