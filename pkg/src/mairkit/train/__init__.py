"""Synthetic data, optimizer, metrics, training loop and ablations."""
