"""Retrieval engine and benchmark harness for two-genre historical corpora.

Subpackages cover the full benchmark loop: corpus ingestion and
segmentation, inverted indexing, BM25 retrieval, relevance-model
feedback with cross-genre transfer, graded evaluation, machine-assisted
judging, and the experiment harness with its HTTP API.
"""

__version__ = "0.1.0"
