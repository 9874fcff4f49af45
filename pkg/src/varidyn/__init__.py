"""Variational reductions for analytical dynamics."""
