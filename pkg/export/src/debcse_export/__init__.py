"""Embedding and candidate-file exporters for the mining pipeline.

Writes the DEBC binary embedding format and the newline-delimited candidate
record format consumed by the mining CLI; no imports from the consumer
package, only its published file formats.
"""

__version__ = "0.1.0"
