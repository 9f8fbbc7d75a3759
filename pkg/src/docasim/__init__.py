"""docasim: a scheduler laboratory for broadcast V2V communications in
delimited out-of-coverage road segments.

Simulates periodic/event-driven broadcast traffic on a shared time-frequency
resource pool under protocol-model or SINR reception, and compares entry-time
centralized scheduling (random, orthogonal oracle, trained policy network)
against distributed sensing-based semi-persistent selection.
"""

__version__ = "0.1.0"
