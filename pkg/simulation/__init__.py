"""Deterministic discrete-event harness for the routing engine."""
