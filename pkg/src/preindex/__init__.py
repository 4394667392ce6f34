"""PreIndex: estimate retraining cost under distribution shift from one forward pass."""

__version__ = "0.1.0"
