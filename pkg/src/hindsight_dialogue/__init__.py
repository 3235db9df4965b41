"""Hindsight-supervised training data and rewards for goal-oriented dialogue agents."""

__version__ = "0.1.0"
