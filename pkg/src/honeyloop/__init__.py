"""Deterministic simulation of an RL-driven adaptive honeynet.

Simulated sensor telemetry becomes observation sequences, a double DQN
decides per source address whether to escalate it to a high-interaction
pod, and captured pod sessions feed the reward, an anomaly scorer and bot
family versioning.
"""

__version__ = "0.1.0"

from .errors import HoneyloopError

__all__ = ["HoneyloopError", "__version__"]
