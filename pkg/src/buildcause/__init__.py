"""Causal structure discovery for building sensor systems.

Candidate graphs from constraint-based search, penalized continuous structure
learning, and a language-model prior are merged by consensus and validated by
simulated do-interventions in an iterative refinement loop.
"""

__version__ = "0.1.0"
