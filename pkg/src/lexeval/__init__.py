"""Harness for measuring LLM judgments of word complexity.

The library covers the full loop: corpus loading, prompt assembly from a
shipped template catalog, batched HTTP dispatch with a resumable journal,
structured-output parsing, score estimation from repeated samples,
metrics and echo-fidelity auditing, fine-tune data preparation, and a
desk-scale first-order meta-learning kernel. The ``lexeval`` CLI wires it
together.
"""

__version__ = "0.1.0"
