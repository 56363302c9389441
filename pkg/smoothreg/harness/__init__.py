"""Experiment grids, result aggregation and verification suites."""
