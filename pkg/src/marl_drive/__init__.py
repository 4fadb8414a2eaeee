"""Multi-agent driving simulator and reinforcement-learning toolkit."""

__version__ = "0.1.0"
