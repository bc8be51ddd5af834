"""nastl: an architecture-search laboratory.

Reinforcement-learning agents improve architectures step by step against a
tabular benchmark; trained agents transfer between tasks (zero-shot,
fine-tune, retrain); an analysis suite turns run logs into performance
matrices, smoothed training curves and time-to-equivalence statistics.
"""

__version__ = "0.1.0"
