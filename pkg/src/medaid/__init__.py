"""medaid: multilingual multi-turn medical consultation toolkit."""

__version__ = "0.1.0"
