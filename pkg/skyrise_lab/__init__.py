"""Skyrise lab: deterministic simulation of serverless compute, storage and query workloads."""

__version__ = "0.1.0"
