"""Moment-based adversarial training for a dialogue-enabled instruction-following agent."""

__version__ = "0.1.0"
