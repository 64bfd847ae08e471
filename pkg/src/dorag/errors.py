"""Shared exception hierarchy for the dorag pipeline."""


class DoragError(Exception):
    """Base class for all pipeline errors."""


# --- ingest ---------------------------------------------------------------

class UndecodableInput(DoragError):
    """Raw bytes could not be decoded as text in the declared format."""


class EmptyDocument(DoragError):
    """Document yielded no extractable content."""


class InvalidPolicy(DoragError):
    """Chunking policy violates overlap < target."""


# --- embedding / index ----------------------------------------------------

class EmptyText(DoragError):
    """Embedding requested for empty text."""


class GatewayFailure(DoragError):
    """LLM call failed after retries."""


class ProviderFailure(GatewayFailure):
    """Remote provider failed at the transport level after retries."""


class DimensionMismatch(DoragError):
    """Vectors of unequal dimension."""


class ZeroVector(DoragError):
    """All-zero vector where a direction is required."""


class EmptyIndex(DoragError):
    """Search against an index with no entries."""


# --- knowledge graph ------------------------------------------------------

class DanglingEndpoint(DoragError):
    """Edge references a node that does not exist."""


class EmptyGraph(DoragError):
    """Operation requires a non-empty graph."""


class UnknownSeed(DoragError):
    """Traversal seed not present in the graph."""


# --- gateway --------------------------------------------------------------

class MalformedReply(DoragError):
    """Gateway reply failed schema validation after the repair retry."""


class MalformedExtraction(DoragError):
    """Extraction agent reply failed schema validation."""


# --- retrieval / generation ----------------------------------------------

class AlphaOutOfRange(DoragError):
    """Fusion alpha outside [0, 1]."""


class Unanswerable(DoragError):
    """Both retrieval stores are empty; nothing to ground an answer on."""


# --- evalkit --------------------------------------------------------------

class NoStatements(DoragError):
    """Judge extracted zero statements from the ground truth."""


class NoClaims(DoragError):
    """Judge extracted zero claims from a non-abstained answer."""


class OutOfRange(DoragError):
    """Metric input outside [0, 1]."""
