"""Keyframe-grounded video reasoning segmentation at toy scale.

Rewards, GRPO, a synthetic moving-object environment with a small policy,
chain-of-thought record generation and J/F evaluation.
"""

__version__ = "0.1.0"
