"""citepipe: batch tooling for multi-reference citation text generation.

The package covers the full loop: streaming corpus ingest, citation-sample
extraction, knowledge-graph triplet attachment, budgeted prompt composition,
a retrying batch client for a remote generation endpoint, and METEOR/ROUGE
evaluation, plus a small reference implementation of quantile quantization
and the associated optimizer arithmetic.
"""

__version__ = "0.1.0"
