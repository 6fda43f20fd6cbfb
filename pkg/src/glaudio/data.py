"""Dataset ingestion, the canonical JSON bundle, splits, and synthetic tasks.

Public datasets are consumed as the raw whitespace-separated content/cites
text files; a converter turns them into the canonical bundle once, and all
experiments consume bundles. Synthetic generators cover homophilic and
heterophilic block models plus the planted long-range distance task.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    DroppedEdgeWarning,
    EmptyFile,
    InvalidConfig,
    MalformedRow,
    ParseError,
    VersionMismatch,
)
from .graph import Graph, build_graph

BUNDLE_VERSION = "1"


@dataclass
class GraphBundle:
    """Canonical on-disk graph container.

    features is always a dense float64 (n, d) matrix in memory;
    sparse_features records whether disk serialization writes per-node index
    lists (implicit value 1.0) instead of dense rows. splits maps
    "train"/"val"/"test" to index arrays when present.
    """

    num_nodes: int
    edges: np.ndarray
    features: np.ndarray
    labels: np.ndarray
    splits: dict | None = None
    metadata: dict = field(default_factory=dict)
    sparse_features: bool = False
    format_version: str = BUNDLE_VERSION

    def to_graph(self) -> Graph:
        masks = (None, None, None)
        if self.splits:
            masks = (self.splits.get("train"), self.splits.get("val"),
                     self.splits.get("test"))
        return build_graph(self.num_nodes, self.edges, self.features,
                           self.labels, masks)

    def structurally_equal(self, other: "GraphBundle") -> bool:
        if (self.num_nodes != other.num_nodes
                or self.format_version != other.format_version
                or self.sparse_features != other.sparse_features
                or self.metadata != other.metadata):
            return False
        if not (np.array_equal(self.edges, other.edges)
                and np.array_equal(self.features, other.features)
                and np.array_equal(self.labels, other.labels)):
            return False
        mine, theirs = self.splits or {}, other.splits or {}
        if set(mine) != set(theirs):
            return False
        return all(np.array_equal(np.asarray(mine[k]), np.asarray(theirs[k])) for k in mine)


def _validate_bundle(bundle: GraphBundle) -> None:
    edges = np.asarray(bundle.edges)
    if edges.size and (edges.min() < 0 or edges.max() >= bundle.num_nodes):
        raise ParseError("bundle edge endpoint out of range")
    if bundle.features.shape[0] != bundle.num_nodes:
        raise ParseError("bundle feature rows != num_nodes")
    if bundle.labels.shape[0] != bundle.num_nodes:
        raise ParseError("bundle label rows != num_nodes")
    if bundle.splits:
        seen = np.zeros(bundle.num_nodes, dtype=bool)
        for name, idx in bundle.splits.items():
            idx = np.asarray(idx)
            if idx.size and (idx.min() < 0 or idx.max() >= bundle.num_nodes):
                raise ParseError(f"split {name!r} index out of range")
            if seen[idx].any():
                raise ParseError("bundle splits are not disjoint")
            seen[idx] = True


def load_content_cites(content_path, cites_path) -> GraphBundle:
    """Ingest the raw citation-network distribution format.

    content rows: "<id> <feat_1> ... <feat_k> <label>"; cites rows:
    "<cited_id> <citing_id>". String ids map to dense indices in first-
    appearance order of the content file; citation edges are symmetrized and
    edges naming unknown ids are dropped with a counted warning.
    """
    content_lines = [ln for ln in Path(content_path).read_text().splitlines() if ln.strip()]
    if not content_lines:
        raise EmptyFile(f"{content_path} contains no rows")
    ids: dict[str, int] = {}
    feature_rows: list[np.ndarray] = []
    label_names: list[str] = []
    width = None
    for lineno, line in enumerate(content_lines, 1):
        tokens = line.split()
        if len(tokens) < 2:
            raise MalformedRow(f"{content_path}:{lineno}: expected id, features, label")
        node_id, label = tokens[0], tokens[-1]
        if node_id in ids:
            raise MalformedRow(f"{content_path}:{lineno}: duplicate id {node_id!r}")
        if width is None:
            width = len(tokens)
        elif len(tokens) != width:
            raise MalformedRow(
                f"{content_path}:{lineno}: expected {width} tokens, got {len(tokens)}"
            )
        try:
            row = np.array([float(tok) for tok in tokens[1:-1]], dtype=np.float64)
        except ValueError:
            raise MalformedRow(f"{content_path}:{lineno}: non-numeric feature") from None
        ids[node_id] = len(feature_rows)
        feature_rows.append(row)
        label_names.append(label)

    class_names = sorted(set(label_names))
    class_index = {name: i for i, name in enumerate(class_names)}
    labels = np.array([class_index[name] for name in label_names], dtype=np.int64)
    features = np.vstack(feature_rows) if feature_rows else np.zeros((0, 0))

    cites_lines = [ln for ln in Path(cites_path).read_text().splitlines() if ln.strip()]
    if not cites_lines:
        raise EmptyFile(f"{cites_path} contains no rows")
    edges = set()
    dropped = 0
    for lineno, line in enumerate(cites_lines, 1):
        tokens = line.split()
        if len(tokens) != 2:
            raise MalformedRow(f"{cites_path}:{lineno}: expected two ids")
        cited, citing = tokens
        if cited not in ids or citing not in ids:
            dropped += 1
            continue
        u, v = ids[cited], ids[citing]
        if u == v:
            dropped += 1
            continue
        edges.add((min(u, v), max(u, v)))
    if dropped:
        warnings.warn(f"dropped {dropped} citation(s) referencing unknown ids "
                      "or self-citations", DroppedEdgeWarning, stacklevel=2)
    edge_array = np.array(sorted(edges), dtype=np.int64).reshape(-1, 2)

    binary = bool(features.size) and set(np.unique(features)) <= {0.0, 1.0}
    return GraphBundle(
        num_nodes=len(feature_rows),
        edges=edge_array,
        features=features,
        labels=labels,
        splits=None,
        metadata={"class_names": class_names, "dropped_edges": dropped},
        sparse_features=binary,
    )


def save_bundle(bundle: GraphBundle, path) -> None:
    """Serialize a bundle as UTF-8 JSON (format_version 1)."""
    _validate_bundle(bundle)
    if bundle.sparse_features:
        features = [np.flatnonzero(row).tolist() for row in bundle.features]
        feature_key = "features_sparse"
        extra = {"feature_dim": int(bundle.features.shape[1])}
    else:
        features = bundle.features.tolist()
        feature_key = "features"
        extra = {}
    payload = {
        "format_version": bundle.format_version,
        "num_nodes": bundle.num_nodes,
        "edges": np.asarray(bundle.edges).tolist(),
        feature_key: features,
        **extra,
        "labels": np.asarray(bundle.labels).tolist(),
        "splits": {k: np.asarray(v).tolist() for k, v in bundle.splits.items()}
        if bundle.splits else None,
        "metadata": bundle.metadata,
    }
    Path(path).write_text(json.dumps(payload))


def load_bundle(path) -> GraphBundle:
    """Parse a bundle file; raises ParseError / VersionMismatch."""
    text = Path(path).read_text()
    try:
        payload = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: line {exc.lineno} col {exc.colno}: {exc.msg}") from None
    if not isinstance(payload, dict):
        raise ParseError(f"{path}: bundle must be a JSON object")
    version = payload.get("format_version")
    if version != BUNDLE_VERSION:
        raise VersionMismatch(f"{path}: format_version {version!r} unsupported")
    try:
        num_nodes = int(payload["num_nodes"])
        edges = np.asarray(payload["edges"], dtype=np.int64).reshape(-1, 2)
        labels = np.asarray(payload["labels"])
        labels = labels.astype(np.int64) if labels.ndim == 1 and not labels.dtype.kind == "f" \
            else labels.astype(np.float64)
        if "features_sparse" in payload:
            dim = int(payload["feature_dim"])
            features = np.zeros((num_nodes, dim), dtype=np.float64)
            for i, idx in enumerate(payload["features_sparse"]):
                idx = np.asarray(idx, dtype=np.int64)
                if idx.size > 1 and not (np.diff(idx) > 0).all():
                    raise ParseError(f"{path}: sparse indices not strictly ascending "
                                     f"for node {i}")
                features[i, idx] = 1.0
            sparse = True
        else:
            features = np.asarray(payload["features"], dtype=np.float64)
            if features.ndim == 1:
                features = features[:, None]
            sparse = False
        raw_splits = payload.get("splits")
        splits = None
        if raw_splits is not None:
            splits = {k: np.asarray(v, dtype=np.int64) for k, v in raw_splits.items()}
        bundle = GraphBundle(
            num_nodes=num_nodes, edges=edges, features=features, labels=labels,
            splits=splits, metadata=payload.get("metadata", {}),
            sparse_features=sparse, format_version=version,
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"{path}: malformed bundle: {exc}") from None
    _validate_bundle(bundle)
    return bundle


def make_splits(n: int, fractions, seed: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Seeded disjoint train/val/test index arrays of rounded sizes.

    When the fractions sum to 1 the splits cover all n vertices (the last
    split takes the remainder); smaller sums leave vertices unassigned.
    """
    fractions = tuple(float(f) for f in fractions)
    if len(fractions) != 3 or any(f < 0 for f in fractions):
        raise InvalidConfig("fractions must be three nonnegative numbers")
    total = sum(fractions)
    if total > 1.0 + 1e-9:
        raise InvalidConfig(f"fractions sum to {total} > 1")
    order = np.random.default_rng(seed).permutation(n)
    n_train = round(fractions[0] * n)
    n_val = round(fractions[1] * n)
    if abs(total - 1.0) <= 1e-9:
        n_test = n - n_train - n_val
    else:
        n_test = min(round(fractions[2] * n), n - n_train - n_val)
    train = np.sort(order[:n_train])
    val = np.sort(order[n_train:n_train + n_val])
    test = np.sort(order[n_train + n_val:n_train + n_val + n_test])
    return train, val, test


def synth_sbm(
    n: int,
    num_classes: int,
    p_in: float,
    p_out: float,
    feature_noise: float = 0.0,
    seed: int = 0,
    split_fractions=(0.6, 0.2, 0.2),
) -> GraphBundle:
    """Stochastic block model with one-hot class features plus Gaussian noise.

    Homophilic when p_in > p_out, heterophilic when p_in < p_out. Blocks are
    contiguous index ranges of near-equal size; everything derives from the
    seed.
    """
    if n < 1 or num_classes < 1:
        raise InvalidConfig("n and num_classes must be >= 1")
    if not (0 <= p_in <= 1 and 0 <= p_out <= 1):
        raise InvalidConfig("edge probabilities must lie in [0, 1]")
    rng = np.random.default_rng(seed)
    labels = (np.arange(n) * num_classes) // n
    same = labels[:, None] == labels[None, :]
    prob = np.where(same, p_in, p_out)
    draw = rng.random((n, n))
    upper = np.triu(np.ones((n, n), dtype=bool), k=1)
    adj = (draw < prob) & upper
    u, v = np.nonzero(adj)
    edges = np.stack([u, v], axis=1).astype(np.int64)
    features = np.eye(num_classes)[labels]
    if feature_noise > 0:
        features = features + feature_noise * rng.standard_normal(features.shape)
    train, val, test = make_splits(n, split_fractions, seed=int(rng.integers(2 ** 31)))
    return GraphBundle(
        num_nodes=n, edges=edges, features=features, labels=labels.astype(np.int64),
        splits={"train": train, "val": val, "test": test},
        metadata={"dataset": "sbm", "num_classes": num_classes,
                  "p_in": p_in, "p_out": p_out, "feature_noise": feature_noise,
                  "seed": seed},
    )


def synth_distance_task(
    path_length_k: int,
    num_chains: int,
    seed: int = 0,
    split_fractions=(0.6, 0.2, 0.2),
) -> GraphBundle:
    """Disjoint chains where each tail's label is a bit planted at its head.

    Every chain is a path of path_length_k edges (head at one end, tail at
    distance k). Feature channel 0 carries the planted bit (+-1) at the head
    and is zero elsewhere; channel 1 is i.i.d. Gaussian noise everywhere.
    Only tails are labeled and masked, so the task is solvable only by
    transporting the head's bit across distance k.
    """
    if path_length_k < 1 or num_chains < 1:
        raise InvalidConfig("path_length_k and num_chains must be >= 1")
    rng = np.random.default_rng(seed)
    per = path_length_k + 1
    n = num_chains * per
    bits = rng.integers(0, 2, size=num_chains)
    features = np.zeros((n, 2))
    features[:, 1] = rng.standard_normal(n)
    labels = np.zeros(n, dtype=np.int64)
    edges = []
    heads = np.arange(num_chains) * per
    tails = heads + path_length_k
    for c in range(num_chains):
        base = heads[c]
        features[base, 0] = 2.0 * bits[c] - 1.0
        labels[tails[c]] = bits[c]
        for step in range(path_length_k):
            edges.append((base + step, base + step + 1))
    train_c, val_c, test_c = make_splits(num_chains, split_fractions,
                                         seed=int(rng.integers(2 ** 31)))
    return GraphBundle(
        num_nodes=n,
        edges=np.array(edges, dtype=np.int64),
        features=features,
        labels=labels,
        splits={"train": tails[train_c], "val": tails[val_c], "test": tails[test_c]},
        metadata={"dataset": "distance", "path_length_k": path_length_k,
                  "num_chains": num_chains, "seed": seed},
    )
