"""Maximum likelihood constraint inference on tabular MDPs."""

__version__ = "0.1.0"
