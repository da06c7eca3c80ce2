"""Object-centric GVF discovery: slot-based question networks, meta-gradient cumulant learning and DDQN agents."""

__version__ = "0.1.0"
