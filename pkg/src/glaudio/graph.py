"""Graph representation and the four Laplacian operator variants.

The wave equation is driven by one of four symmetric positive semi-definite
operators: the combinatorial Laplacian L = D - A, its symmetric normalization
N = D^{-1/2} L D^{-1/2}, and the self-loop variants I + L and I + N.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
import scipy.sparse as sp

from .errors import (
    DimensionMismatch,
    DuplicateEdge,
    DuplicateEdgeWarning,
    IsolatedVertexWarning,
    LabelOutOfRange,
    MaskOverlap,
    OutOfRangeEdge,
    SelfLoopInEdgeList,
)


class LaplacianVariant(Enum):
    COMBINATORIAL = "combinatorial"
    NORMALIZED = "normalized"
    COMBINATORIAL_SELFLOOP = "combinatorial-selfloop"
    NORMALIZED_SELFLOOP = "normalized-selfloop"

    @classmethod
    def parse(cls, value: "LaplacianVariant | str") -> "LaplacianVariant":
        if isinstance(value, cls):
            return value
        try:
            return cls(value)
        except ValueError:
            names = ", ".join(v.value for v in cls)
            raise ValueError(f"unknown Laplacian variant {value!r}; expected one of: {names}")

    @classmethod
    def from_flags(cls, normalized: bool, self_loops: bool) -> "LaplacianVariant":
        """Map the hyperparameter-table flags onto a variant."""
        if normalized:
            return cls.NORMALIZED_SELFLOOP if self_loops else cls.NORMALIZED
        return cls.COMBINATORIAL_SELFLOOP if self_loops else cls.COMBINATORIAL


@dataclass(frozen=True)
class Graph:
    """Immutable undirected graph with node features, labels, and split masks.

    `edges` is canonical: shape (m, 2), u < v per row, rows lexicographically
    sorted, no duplicates, no self-loops. `labels` is an integer class array
    for classification or a float matrix for regression targets. The three
    masks are pairwise disjoint boolean arrays of length n.
    """

    n: int
    edges: np.ndarray
    features: np.ndarray
    labels: np.ndarray
    train_mask: np.ndarray
    val_mask: np.ndarray
    test_mask: np.ndarray
    report: dict = field(default_factory=dict, compare=False, repr=False)

    @property
    def num_edges(self) -> int:
        return int(self.edges.shape[0])

    @property
    def degrees(self) -> np.ndarray:
        counts = np.bincount(self.edges.ravel(), minlength=self.n)
        return counts.astype(np.int64)

    @property
    def num_classes(self) -> int:
        if self.labels.ndim != 1:
            raise ValueError("num_classes is defined for integer class labels only")
        return int(self.labels.max(initial=-1)) + 1


def _canonical_edges(n: int, edges, strict: bool) -> tuple[np.ndarray, int]:
    arr = np.asarray(list(edges) if not isinstance(edges, np.ndarray) else edges, dtype=np.int64)
    if arr.size == 0:
        return np.zeros((0, 2), dtype=np.int64), 0
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise DimensionMismatch(f"edge list must have shape (m, 2), got {arr.shape}")
    if arr.min() < 0 or arr.max() >= n:
        bad = arr[(arr < 0).any(axis=1) | (arr >= n).any(axis=1)][0]
        raise OutOfRangeEdge(f"edge {tuple(bad)} has an endpoint outside [0, {n})")
    loops = arr[:, 0] == arr[:, 1]
    if loops.any():
        v = int(arr[loops][0, 0])
        raise SelfLoopInEdgeList(
            f"self-loop at vertex {v}; self-loops enter only via the operator variant"
        )
    lo = np.minimum(arr[:, 0], arr[:, 1])
    hi = np.maximum(arr[:, 0], arr[:, 1])
    canon = np.unique(np.stack([lo, hi], axis=1), axis=0)
    removed = arr.shape[0] - canon.shape[0]
    if removed > 0:
        if strict:
            raise DuplicateEdge(f"{removed} duplicate edge(s) in input")
        warnings.warn(f"merged {removed} duplicate edge(s)", DuplicateEdgeWarning, stacklevel=3)
    return canon, removed


def build_graph(
    n: int,
    edges,
    features=None,
    labels=None,
    masks=None,
    strict: bool = False,
) -> Graph:
    """Validate and canonicalize a graph.

    Directed input edges are symmetrized to u < v pairs; duplicates are merged
    with a warning (raised as DuplicateEdge when strict=True). `masks` is an
    optional (train, val, test) triple of boolean arrays or index arrays.
    The returned Graph carries a `report` dict summarizing validation.
    """
    if n < 0:
        raise DimensionMismatch(f"vertex count must be >= 0, got {n}")
    canon, removed = _canonical_edges(n, edges, strict)

    if features is None:
        feats = np.zeros((n, 1), dtype=np.float64)
    else:
        feats = np.array(features, dtype=np.float64)
        if feats.ndim == 1:
            feats = feats[:, None]
        if feats.shape[0] != n:
            raise DimensionMismatch(f"feature rows {feats.shape[0]} != vertex count {n}")

    if labels is None:
        labs = np.full(n, -1, dtype=np.int64)
    else:
        labs = np.asarray(labels)
        labs = labs.astype(np.int64) if np.issubdtype(labs.dtype, np.integer) else labs.astype(np.float64)
        if labs.shape[0] != n:
            raise DimensionMismatch(f"label rows {labs.shape[0]} != vertex count {n}")

    mask_arrays = []
    if masks is None:
        masks = (None, None, None)
    if len(masks) != 3:
        raise DimensionMismatch("masks must be a (train, val, test) triple")
    for m in masks:
        if m is None:
            mask_arrays.append(np.zeros(n, dtype=bool))
            continue
        m = np.asarray(m)
        if m.dtype == bool:
            if m.shape != (n,):
                raise DimensionMismatch(f"boolean mask length {m.shape} != ({n},)")
            mask_arrays.append(m.copy())
        else:
            idx = m.astype(np.int64)
            if idx.size and (idx.min() < 0 or idx.max() >= n):
                raise OutOfRangeEdge(f"mask index outside [0, {n})")
            b = np.zeros(n, dtype=bool)
            b[idx] = True
            mask_arrays.append(b)
    train, val, test = mask_arrays
    if (train & val).any() or (train & test).any() or (val & test).any():
        raise MaskOverlap("train/val/test masks must be pairwise disjoint")

    covered = train | val | test
    if covered.any() and labs.ndim == 1 and (labs[covered] < 0).any():
        bad = int(labs[covered][labs[covered] < 0][0])
        raise LabelOutOfRange(f"masked vertex carries invalid label {bad}")
    if covered.any() and labs.ndim == 2 and not np.isfinite(labs[covered]).all():
        raise DimensionMismatch("masked vertices must carry finite regression targets")

    for a in (canon, feats, labs, train, val, test):
        a.setflags(write=False)
    degrees = np.bincount(canon.ravel(), minlength=n) if n else np.zeros(0, dtype=np.int64)
    report = {
        "n": n,
        "num_edges": int(canon.shape[0]),
        "duplicate_edges_merged": removed,
        "min_degree": int(degrees.min()) if n else 0,
        "max_degree": int(degrees.max()) if n else 0,
        "num_isolated": int((degrees == 0).sum()) if n else 0,
        "mask_sizes": [int(train.sum()), int(val.sum()), int(test.sum())],
    }
    return Graph(n=n, edges=canon, features=feats, labels=labs,
                 train_mask=train, val_mask=val, test_mask=test, report=report)


@dataclass(frozen=True)
class LaplacianOperator:
    """Sparse symmetric PSD operator in one of the four variants.

    `matrix` is CSR with sorted column indices, making matrix-vector products
    bit-deterministic. `max_eigenvalue_bound` is 2*max_degree for the
    combinatorial variant, 2 for the normalized one, plus 1 with self-loops.
    """

    variant: LaplacianVariant
    matrix: sp.csr_matrix
    max_eigenvalue_bound: float

    @property
    def n(self) -> int:
        return int(self.matrix.shape[0])

    def apply(self, x: np.ndarray) -> np.ndarray:
        """Sparse matrix-vector (or matrix-matrix) product."""
        if x.shape[0] != self.n:
            raise DimensionMismatch(f"operand rows {x.shape[0]} != operator size {self.n}")
        return self.matrix @ x


def build_operator(graph: Graph, variant: "LaplacianVariant | str") -> LaplacianOperator:
    """Assemble the requested Laplacian variant as a canonical CSR matrix.

    Degree-0 vertices under a normalized variant get D^{-1/2} entries of 0 and
    a warning: the vertex carries a constant (self-loop variants: pure unit
    frequency) signal rather than aborting the build.
    """
    variant = LaplacianVariant.parse(variant)
    n = graph.n
    deg = graph.degrees.astype(np.float64)
    u, v = graph.edges[:, 0], graph.edges[:, 1]
    self_loops = variant in (LaplacianVariant.COMBINATORIAL_SELFLOOP,
                             LaplacianVariant.NORMALIZED_SELFLOOP)
    normalized = variant in (LaplacianVariant.NORMALIZED,
                             LaplacianVariant.NORMALIZED_SELFLOOP)

    if normalized:
        isolated = deg == 0
        if isolated.any():
            warnings.warn(
                f"{int(isolated.sum())} degree-0 vertex(es) under a normalized variant; "
                "their D^{-1/2} entries are set to 0",
                IsolatedVertexWarning,
                stacklevel=2,
            )
        # One weight per undirected edge, reused for both triangle entries,
        # so the matrix is exactly symmetric.
        off = -1.0 / np.sqrt(deg[u] * deg[v])
        diag = np.where(deg > 0, 1.0, 0.0)
        bound = 2.0
    else:
        off = np.full(u.shape[0], -1.0)
        diag = deg.copy()
        bound = 2.0 * (deg.max() if n else 0.0)

    if self_loops:
        diag = diag + 1.0
        bound += 1.0

    rows = np.concatenate([u, v, np.arange(n)])
    cols = np.concatenate([v, u, np.arange(n)])
    vals = np.concatenate([off, off, diag])
    matrix = sp.coo_matrix((vals, (rows, cols)), shape=(n, n)).tocsr()
    matrix.sort_indices()
    matrix.data.setflags(write=False)
    return LaplacianOperator(variant=variant, matrix=matrix, max_eigenvalue_bound=float(bound))


def permute_graph(graph: Graph, perm: np.ndarray) -> Graph:
    """Relabel vertices: new index of old vertex i is perm[i]."""
    perm = np.asarray(perm, dtype=np.int64)
    if perm.shape != (graph.n,) or sorted(perm.tolist()) != list(range(graph.n)):
        raise DimensionMismatch("perm must be a permutation of range(n)")
    inv = np.empty_like(perm)
    inv[perm] = np.arange(graph.n)
    new_edges = perm[graph.edges]
    masks = (graph.train_mask[inv], graph.val_mask[inv], graph.test_mask[inv])
    return build_graph(graph.n, new_edges, graph.features[inv], graph.labels[inv], masks)
