"""slatelab: a desk-scale recommender experimentation platform.

Ties together an impression-funnel event store, trailing-window and
interest features, weighted regression-tree models in a portable XML
format, factorized multiplicative scoring, greedy de-duplicated page
ranking, deterministic experiment bucketing, and hypercube A/B
analytics, all driven end to end by a seeded marketplace simulator.
"""

__version__ = "0.1.0"
