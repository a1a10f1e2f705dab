"""
armaxlab: ARMAX identification, model-free state estimation and
model-free LQG control, with seeded Monte Carlo experiment runners.
"""

__version__ = "1.0.0"
