"""Lookup tables: hardware profiles and workload presets."""
