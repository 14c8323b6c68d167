"""Vision-based safe landing pipeline and closed-loop simulator.

Semantic ground mapping with Bayesian filtering and decay, metric
distance-transform landing-spot selection, a behavior-tree landing
controller, and a deterministic world to run it all against.
"""

__version__ = "0.1.0"
