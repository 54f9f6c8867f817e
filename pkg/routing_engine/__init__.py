"""Closed-loop payment routing controller: scoring, ordering, feedback and downtime."""

__version__ = "0.1.0"
