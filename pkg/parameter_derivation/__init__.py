"""Offline derivation of exploration and downtime parameters from long-term SR statistics."""
