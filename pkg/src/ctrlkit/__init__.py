"""ctrlkit: AD-based linearization, DAE conversion, estimation and MPC."""

__version__ = "0.1.0"
