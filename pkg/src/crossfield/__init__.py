"""Channel models, estimators and beamformers for cross-field terahertz arrays."""

__version__ = "0.1.0"
