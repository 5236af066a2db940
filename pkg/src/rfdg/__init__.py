"""Domain-generalized RF activity recognition: simulator, model, training and harness."""

__version__ = "0.1.0"
