"""Debiased contrastive training-data construction for sentence embeddings.

Library surface: corpus ingestion and the DEBC embedding format
(corpus_store), similarity kernels (similarity), propensity-weighted miners
(negative_miner, positive_miner), the toy encoder and trainer (encoder,
trainer), distribution diagnostics (analysis), and the pipeline CLI (cli).
"""

__version__ = "0.1.0"
