"""Desk-scale PPO training and evaluation of a free-flyer wrench controller."""

__version__ = "0.1.0"
