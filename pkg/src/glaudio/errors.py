"""Exception and warning types shared across the package."""


class GlaudioError(Exception):
    """Base class for all errors raised by this package."""


# --- graph construction ---

class DimensionMismatch(GlaudioError):
    """Array shapes are inconsistent with each other or with the graph."""


class OutOfRangeEdge(GlaudioError):
    """An edge endpoint lies outside [0, n)."""


class SelfLoopInEdgeList(GlaudioError):
    """The input edge list contains a self-loop; self-loops enter only via the
    operator variant."""


class DuplicateEdge(GlaudioError):
    """Duplicate undirected edge rejected in strict mode."""


class MaskOverlap(GlaudioError):
    """Train/val/test masks are not pairwise disjoint."""


# --- wave encoder ---

class TimeOutOfRange(GlaudioError):
    """Requested time lies outside (0, T]."""


class VertexOutOfRange(GlaudioError):
    """Vertex index outside [0, n)."""


# --- spectral oracle ---

class TooLargeForOracle(GlaudioError):
    """Graph exceeds the dense-eigendecomposition size limit."""


class ConvergenceFailure(GlaudioError):
    """The eigensolver failed or returned a decomposition violating the
    positive-semidefinite contract."""


class NonIntegralSpectrum(GlaudioError):
    """k times an eigenvalue is not integral; projection recovery requires an
    integral rescaled spectrum."""


class RepeatedEigenvalues(GlaudioError):
    """Projection recovery requires pairwise distinct eigenvalues."""


class InsufficientSamples(GlaudioError):
    """Supplied signal does not cover the quadrature grid."""


# --- decoder ---

class BadDimensions(GlaudioError):
    """Non-positive or mutually inconsistent decoder dimensions."""


class TapeMismatch(GlaudioError):
    """backward() received a tape that was not produced by a matching
    forward() call."""


# --- trainer ---

class EmptyMask(GlaudioError):
    """A loss or metric was requested over an empty vertex mask."""


class LabelOutOfRange(GlaudioError):
    """A masked vertex carries a label outside [0, num_classes)."""


class ShapeMismatch(GlaudioError):
    """Parameter, gradient, and optimizer-state shapes disagree."""


class InvalidConfig(GlaudioError):
    """A configuration value violates its contract."""


# --- data io ---

class MalformedRow(GlaudioError):
    """A raw dataset row could not be parsed."""


class EmptyFile(GlaudioError):
    """A raw dataset file contains no rows."""


class ParseError(GlaudioError):
    """A bundle file is not valid JSON or violates the bundle schema."""


class VersionMismatch(GlaudioError):
    """Bundle or checkpoint format_version is not supported."""


# --- warnings ---

class StabilityWarning(UserWarning):
    """h * sqrt(max eigenvalue bound) >= 2: the integrator may be unstable."""


class IsolatedVertexWarning(UserWarning):
    """A degree-0 vertex under a normalized variant; its D^{-1/2} entry is set
    to 0 and the vertex carries a constant signal."""


class DuplicateEdgeWarning(UserWarning):
    """Duplicate edges in the input were merged."""


class DroppedEdgeWarning(UserWarning):
    """Edges referencing unknown vertex ids were dropped during ingestion."""
