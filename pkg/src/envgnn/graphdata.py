"""Graph container, text-format IO, normalized adjacency, and split construction.

File formats (all plain text, diffable):

* ``edges.tsv``    one ``u<TAB>v`` per line, 0-based integer ids, undirected
* ``features.tsv`` one node per line, D tab-separated decimal floats
* ``labels.tsv``   one integer class per line
* ``splits.json``  {"train": [...], "valid": [...], "test_id": [...],
                    "ood_groups": [[...], ...] or ["dir", ...]}
* ``dataset.json`` {name, C, D, metric, id_graphs, ood_graphs, generator}
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import os
from dataclasses import dataclass, field

import numpy as np

from .rng import STREAM_SPLIT, Rng
from .sparse import SparseAdj

log = logging.getLogger(__name__)


class ParseError(ValueError):
    """A data file failed validation; carries file name and line number."""

    def __init__(self, path: str, line: int, message: str):
        super().__init__(f"{path}:{line}: {message}")
        self.path = path
        self.line = line


@dataclass
class Graph:
    """An undirected graph with node features and integer labels.

    Edges are stored canonically (u < v, each pair once); ``degrees`` counts
    stored incidences per node. Isolated nodes are permitted.
    """

    n: int
    features: np.ndarray
    labels: np.ndarray
    edges: np.ndarray
    num_classes: int
    degrees: np.ndarray = field(default=None)

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        self.edges = np.asarray(self.edges, dtype=np.int64).reshape(-1, 2)
        self.edges = canonical_edges(self.n, self.edges)
        if self.features.shape[0] != self.n:
            raise ValueError("feature rows must equal node count")
        if self.labels.shape != (self.n,):
            raise ValueError("labels must be one integer per node")
        if self.n and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise ValueError("label out of range")
        self.degrees = compute_degrees(self.n, self.edges)

    @property
    def num_features(self) -> int:
        return self.features.shape[1]

    def same_structure(self, other: "Graph") -> bool:
        return self.n == other.n and np.array_equal(self.edges, other.edges)


def canonical_edges(n: int, edges: np.ndarray) -> np.ndarray:
    """Drop self loops and duplicates; store each undirected pair as (u<v)."""
    edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    if edges.size and (edges.min() < 0 or edges.max() >= n):
        raise ValueError("edge endpoint out of range")
    edges = edges[edges[:, 0] != edges[:, 1]]
    lo = np.minimum(edges[:, 0], edges[:, 1])
    hi = np.maximum(edges[:, 0], edges[:, 1])
    pairs = np.unique(np.stack([lo, hi], axis=1), axis=0) if len(lo) else np.zeros((0, 2), dtype=np.int64)
    return pairs


def compute_degrees(n: int, edges: np.ndarray) -> np.ndarray:
    deg = np.zeros(n, dtype=np.int64)
    if len(edges):
        np.add.at(deg, edges[:, 0], 1)
        np.add.at(deg, edges[:, 1], 1)
    return deg


@dataclass
class SplitSpec:
    """Disjoint train/valid/test_id node sets plus ordered OOD groups."""

    train: np.ndarray
    valid: np.ndarray
    test_id: np.ndarray
    ood_groups: list

    def __post_init__(self):
        self.train = np.asarray(self.train, dtype=np.int64)
        self.valid = np.asarray(self.valid, dtype=np.int64)
        self.test_id = np.asarray(self.test_id, dtype=np.int64)
        parts = [set(self.train.tolist()), set(self.valid.tolist()), set(self.test_id.tolist())]
        total = sum(len(p) for p in parts)
        if len(parts[0] | parts[1] | parts[2]) != total:
            raise ValueError("train/valid/test_id must be pairwise disjoint")


@dataclass
class Dataset:
    """One or more ID graphs, OOD graphs, a split over pooled ID nodes, metadata."""

    id_graphs: list
    ood_graphs: list
    split: SplitSpec
    metadata: dict

    def __post_init__(self):
        dims = {g.num_features for g in self.id_graphs + self.ood_graphs}
        classes = {g.num_classes for g in self.id_graphs + self.ood_graphs}
        if len(dims) != 1 or len(classes) != 1:
            raise ValueError("all graphs in a dataset must share D and C")

    @property
    def num_classes(self) -> int:
        return self.id_graphs[0].num_classes

    @property
    def num_features(self) -> int:
        return self.id_graphs[0].num_features

    @property
    def metric(self) -> str:
        return self.metadata.get("metric", "accuracy")

    def id_node_count(self) -> int:
        return sum(g.n for g in self.id_graphs)

    def id_offsets(self) -> list[int]:
        """Global index offset of each ID graph in the pooled node universe."""
        offs, total = [], 0
        for g in self.id_graphs:
            offs.append(total)
            total += g.n
        return offs

    def pooled_id_labels(self) -> np.ndarray:
        return np.concatenate([g.labels for g in self.id_graphs])


# ---------------------------------------------------------------------------
# graph file IO
# ---------------------------------------------------------------------------


def _parse_int(token: str, path: str, line: int, what: str) -> int:
    try:
        val = int(token)
    except ValueError:
        raise ParseError(path, line, f"non-integer {what}: {token!r}") from None
    return val


def load_graph(directory: str, num_classes: int | None = None) -> Graph:
    """Load and validate a graph directory (edges/features/labels TSVs)."""
    epath = os.path.join(directory, "edges.tsv")
    fpath = os.path.join(directory, "features.tsv")
    lpath = os.path.join(directory, "labels.tsv")
    for p in (epath, fpath, lpath):
        if not os.path.exists(p):
            raise FileNotFoundError(f"missing graph file: {p}")

    features = []
    width = None
    with open(fpath) as fh:
        for i, raw in enumerate(fh, start=1):
            raw = raw.rstrip("\n")
            if not raw:
                continue
            row = raw.split("\t")
            if width is None:
                width = len(row)
            elif len(row) != width:
                raise ParseError(fpath, i, f"ragged feature row: {len(row)} != {width}")
            try:
                features.append([float(x) for x in row])
            except ValueError:
                raise ParseError(fpath, i, "non-numeric feature value") from None
    features = np.asarray(features, dtype=np.float64)
    n = features.shape[0]

    labels = []
    with open(lpath) as fh:
        for i, raw in enumerate(fh, start=1):
            raw = raw.strip()
            if not raw:
                continue
            labels.append(_parse_int(raw, lpath, i, "label"))
    if len(labels) != n:
        raise ParseError(lpath, len(labels) + 1, f"expected {n} labels, got {len(labels)}")
    labels = np.asarray(labels, dtype=np.int64)
    if num_classes is None:
        num_classes = int(labels.max()) + 1 if n else 1
    bad = np.nonzero((labels < 0) | (labels >= num_classes))[0]
    if len(bad):
        raise ParseError(lpath, int(bad[0]) + 1, f"label {labels[bad[0]]} out of range [0, {num_classes})")

    edges = []
    with open(epath) as fh:
        for i, raw in enumerate(fh, start=1):
            raw = raw.rstrip("\n")
            if not raw:
                continue
            parts = raw.split("\t")
            if len(parts) != 2:
                raise ParseError(epath, i, f"expected 'u<TAB>v', got {raw!r}")
            u = _parse_int(parts[0], epath, i, "node id")
            v = _parse_int(parts[1], epath, i, "node id")
            if not (0 <= u < n and 0 <= v < n):
                raise ParseError(epath, i, f"node id out of range [0, {n}): ({u}, {v})")
            edges.append((u, v))
    edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    return Graph(n, features, labels, edges, num_classes)


def save_graph(directory: str, g: Graph) -> None:
    os.makedirs(directory, exist_ok=True)
    with open(os.path.join(directory, "edges.tsv"), "w") as fh:
        for u, v in g.edges:
            fh.write(f"{u}\t{v}\n")
    with open(os.path.join(directory, "features.tsv"), "w") as fh:
        for row in g.features:
            fh.write("\t".join(repr(float(x)) for x in row) + "\n")
    with open(os.path.join(directory, "labels.tsv"), "w") as fh:
        for y in g.labels:
            fh.write(f"{y}\n")


# ---------------------------------------------------------------------------
# normalized adjacency
# ---------------------------------------------------------------------------


def build_norm_adj(g: Graph, add_self_loops: bool = False) -> SparseAdj:
    """Symmetric CSR with entries 1/sqrt(d_u d_v).

    Degrees are taken after optional self-loop insertion; self-loop mode adds
    stored entries (u, u). Zero-degree nodes without self-loops get an empty
    row (their embeddings flow only through the model's self-transform path).
    """
    deg = g.degrees.astype(np.float64)
    rows = np.concatenate([g.edges[:, 0], g.edges[:, 1]]) if len(g.edges) else np.zeros(0, dtype=np.int64)
    cols = np.concatenate([g.edges[:, 1], g.edges[:, 0]]) if len(g.edges) else np.zeros(0, dtype=np.int64)
    if add_self_loops:
        deg = deg + 1.0
        rows = np.concatenate([rows, np.arange(g.n)])
        cols = np.concatenate([cols, np.arange(g.n)])
    isolated = np.nonzero(deg == 0)[0]
    if len(isolated):
        log.info("build_norm_adj: %d zero-degree node(s) get empty rows", len(isolated))
    safe = np.where(deg > 0, deg, 1.0)
    vals = 1.0 / np.sqrt(safe[rows] * safe[cols]) if len(rows) else np.zeros(0)
    return SparseAdj.from_coo(g.n, rows, cols, vals)


# ---------------------------------------------------------------------------
# splits
# ---------------------------------------------------------------------------


def split_random(universe, ratios, seed: int) -> SplitSpec:
    """Random disjoint train/valid/test split; floors, remainder to train."""
    universe = np.asarray(universe, dtype=np.int64)
    if universe.size == 0:
        raise ValueError("split universe must be nonempty")
    if abs(sum(ratios) - 1.0) > 1e-9 or len(ratios) != 3:
        raise ValueError("ratios must be three values summing to 1")
    rng = Rng(seed).substream(STREAM_SPLIT)
    perm = universe[rng.permutation(universe.size)]
    n = universe.size
    n_valid = math.floor(ratios[1] * n)
    n_test = math.floor(ratios[2] * n)
    n_train = n - n_valid - n_test  # floor(train) + all remainder
    train = np.sort(perm[:n_train])
    valid = np.sort(perm[n_train : n_train + n_valid])
    test = np.sort(perm[n_train + n_valid :])
    return SplitSpec(train, valid, test, ood_groups=[])


# ---------------------------------------------------------------------------
# dataset IO
# ---------------------------------------------------------------------------


def save_dataset(directory: str, ds: Dataset) -> None:
    os.makedirs(directory, exist_ok=True)
    id_dirs = [f"id_{i}" for i in range(len(ds.id_graphs))]
    ood_dirs = [f"ood_{i}" for i in range(len(ds.ood_graphs))]
    for sub, g in zip(id_dirs + ood_dirs, ds.id_graphs + ds.ood_graphs):
        save_graph(os.path.join(directory, sub), g)
    splits = {
        "train": ds.split.train.tolist(),
        "valid": ds.split.valid.tolist(),
        "test_id": ds.split.test_id.tolist(),
        "ood_groups": ood_dirs,
    }
    with open(os.path.join(directory, "splits.json"), "w") as fh:
        json.dump(splits, fh, indent=1)
    manifest = dict(ds.metadata)
    manifest.update(
        {
            "C": ds.num_classes,
            "D": ds.num_features,
            "id_graphs": id_dirs,
            "ood_graphs": ood_dirs,
        }
    )
    manifest["content_hash"] = _content_hash(directory, id_dirs + ood_dirs)
    with open(os.path.join(directory, "dataset.json"), "w") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)


def _content_hash(directory: str, graph_dirs: list[str]) -> str:
    h = hashlib.sha256()
    files = ["splits.json"] + [
        os.path.join(d, f)
        for d in sorted(graph_dirs)
        for f in ("edges.tsv", "features.tsv", "labels.tsv")
    ]
    for rel in files:
        h.update(rel.encode())
        with open(os.path.join(directory, rel), "rb") as fh:
            h.update(fh.read())
    return h.hexdigest()


def load_dataset(directory: str) -> Dataset:
    mpath = os.path.join(directory, "dataset.json")
    if not os.path.exists(mpath):
        raise FileNotFoundError(f"missing dataset manifest: {mpath}")
    with open(mpath) as fh:
        manifest = json.load(fh)
    c = int(manifest["C"])
    id_graphs = [load_graph(os.path.join(directory, d), c) for d in manifest["id_graphs"]]
    ood_graphs = [load_graph(os.path.join(directory, d), c) for d in manifest["ood_graphs"]]
    with open(os.path.join(directory, "splits.json")) as fh:
        splits = json.load(fh)
    ood_groups = splits.get("ood_groups", [])
    split = SplitSpec(splits["train"], splits["valid"], splits["test_id"], ood_groups)
    return Dataset(id_graphs, ood_graphs, split, manifest)


def dataset_manifest_hash(directory: str) -> str:
    with open(os.path.join(directory, "dataset.json"), "rb") as fh:
        return hashlib.sha256(fh.read()).hexdigest()
