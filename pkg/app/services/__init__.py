"""Simulated layers of the host and SSD stack."""
