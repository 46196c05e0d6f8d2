"""Multi-fidelity, multi-objective hyperparameter optimization for deep shift networks."""

__version__ = "0.1.0"
