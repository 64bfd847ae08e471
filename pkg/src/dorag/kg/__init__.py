"""Knowledge graph: store, traversal, and the extraction/merge pipeline."""

from .store import EntityNode, GraphStore, RelationEdge, Subgraph  # noqa: F401
