"""Datasets, simulation, pipeline, oracles, reports and benchmarks."""
