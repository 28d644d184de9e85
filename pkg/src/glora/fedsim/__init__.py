"""Synthetic federated simulation: tasks, local training, sampling and the round loop."""
