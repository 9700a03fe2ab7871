"""1-d residual CNNs for eddy-current defect depth classification."""

__version__ = "0.1.0"
