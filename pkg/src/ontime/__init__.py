"""Bounded streaming memory, readiness-triggered answering and timing-aware scoring."""

__version__ = "0.1.0"
SCHEMA_VERSIONS = {"dataset": 1, "memory_tree": 1, "readiness_model": 1, "config": 1, "report": 1}
