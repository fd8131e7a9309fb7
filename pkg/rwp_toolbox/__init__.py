"""rwp-toolbox -- random weight perturbation, SAM and SGD on desk-scale models."""

__version__ = "0.1.0"
