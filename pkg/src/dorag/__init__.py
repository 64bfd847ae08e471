"""Knowledge-graph-enhanced retrieval-augmented QA pipeline."""

__version__ = "0.1.0"
