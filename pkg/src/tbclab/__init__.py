"""Temporal betweenness centrality: exact labels and a learned predictor."""

__version__ = "0.1.0"
