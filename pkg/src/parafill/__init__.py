"""Controllable paragraph infilling toolkit.

Pipeline stages: ingest novels (corpus), annotate paragraphs with entities
and summaries (annotate), train a byte-level BPE vocabulary (tokenizer),
pack conditioning records into model samples (assembly), train a tiny
decoder-only transformer (model), generate with greedy/beam/sampling
strategies (decode), score control and reconstruction (metrics), and serve
everything over HTTP (service). The `parafill` CLI orchestrates all stages.
"""

__version__ = "0.1.0"
