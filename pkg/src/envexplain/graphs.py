"""Graph containers, subgraph extraction, serialization, and DOT export.

Graphs are undirected and immutable: each edge is stored once as (src, dst)
with src < dst, features are a float64 matrix with one row per node, and node
types are small non-negative integers. Explanations are boolean masks over a
graph's nodes and edges plus the log-probability of the selection; every
masked edge must have both endpoints masked.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

import numpy as np

__all__ = [
    "EnvMeta",
    "MotifTruth",
    "Graph",
    "Explanation",
    "ShiftInfo",
    "Dataset",
    "validate_explanation",
    "induced_subgraph",
    "complement_graph",
    "serialize",
    "deserialize",
    "export_dot",
    "degrees",
    "adjacency_mean",
]

DATASET_VERSION = 1
SPLIT_TAGS = ("train", "val", "test")


@dataclass(frozen=True)
class EnvMeta:
    """Generator-side provenance: base family, size bucket, planted env dims."""

    family: str
    family_id: int
    size_bucket: int
    env_dims: tuple[int, ...]


@dataclass(frozen=True)
class MotifTruth:
    """Ground-truth motif masks; the bridge edge is never part of the motif."""

    node_mask: np.ndarray
    edge_mask: np.ndarray


@dataclass(frozen=True)
class Graph:
    """Immutable undirected attributed graph.

    Parameters
    ----------
    n : int
        Number of nodes; may be zero.
    edges : ndarray of shape (m, 2), int64
        Each undirected edge exactly once, with ``src < dst``.
    x : ndarray of shape (n, d), float64
        Node feature matrix.
    node_types : ndarray of shape (n,), int64
        Small non-negative type ids (0 = base node, k = motif role k-1).
    label : int
        Class label of the graph.
    env_meta : EnvMeta or None
        Generation record; absent on graphs built from masks.
    gt_motif : MotifTruth or None
        Ground-truth explanation masks aligned with ``edges``.
    """

    n: int
    edges: np.ndarray
    x: np.ndarray
    node_types: np.ndarray
    label: int
    env_meta: EnvMeta | None = None
    gt_motif: MotifTruth | None = None

    def __post_init__(self):
        edges = np.asarray(self.edges, dtype=np.int64).reshape(-1, 2)
        x = np.ascontiguousarray(np.asarray(self.x, dtype=np.float64))
        types = np.asarray(self.node_types, dtype=np.int64).reshape(-1)
        if self.n < 0:
            raise ValueError("node count must be non-negative")
        if x.ndim != 2 or x.shape[0] != self.n:
            raise ValueError("feature matrix must have one row per node")
        if types.shape[0] != self.n:
            raise ValueError("node_types length must equal the node count")
        if np.any(types < 0):
            raise ValueError("node types must be non-negative")
        if edges.shape[0]:
            if edges.min() < 0 or edges.max() >= self.n:
                raise ValueError("edge endpoint out of range")
            if np.any(edges[:, 0] >= edges[:, 1]):
                raise ValueError("edges must satisfy src < dst (no self loops)")
            keys = edges[:, 0] * self.n + edges[:, 1]
            if np.unique(keys).size != edges.shape[0]:
                raise ValueError("duplicate edge")
        if self.gt_motif is not None:
            if self.gt_motif.node_mask.shape != (self.n,):
                raise ValueError("gt node mask length mismatch")
            if self.gt_motif.edge_mask.shape != (edges.shape[0],):
                raise ValueError("gt edge mask length mismatch")
        for arr in (edges, x, types):
            arr.setflags(write=False)
        object.__setattr__(self, "edges", edges)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "node_types", types)

    @property
    def m(self) -> int:
        return int(self.edges.shape[0])

    @property
    def d(self) -> int:
        return int(self.x.shape[1])


@dataclass(frozen=True)
class Explanation:
    """Boolean node/edge masks plus the log-probability of the selection."""

    node_mask: np.ndarray
    edge_mask: np.ndarray
    log_prob: float

    def __post_init__(self):
        node_mask = np.asarray(self.node_mask, dtype=bool)
        edge_mask = np.asarray(self.edge_mask, dtype=bool)
        node_mask.setflags(write=False)
        edge_mask.setflags(write=False)
        object.__setattr__(self, "node_mask", node_mask)
        object.__setattr__(self, "edge_mask", edge_mask)
        if not self.log_prob <= 0.0:
            raise ValueError("log_prob must be <= 0")

    @property
    def num_nodes(self) -> int:
        return int(self.node_mask.sum())

    @property
    def num_edges(self) -> int:
        return int(self.edge_mask.sum())


def validate_explanation(g: Graph, e: Explanation) -> None:
    """Raise if the explanation is not closed over ``g``'s edge endpoints."""
    if e.node_mask.shape != (g.n,):
        raise ValueError("node mask length %d does not match graph with %d nodes" % (e.node_mask.size, g.n))
    if e.edge_mask.shape != (g.m,):
        raise ValueError("edge mask length %d does not match graph with %d edges" % (e.edge_mask.size, g.m))
    if g.m:
        picked = g.edges[e.edge_mask]
        if picked.size and not (e.node_mask[picked[:, 0]].all() and e.node_mask[picked[:, 1]].all()):
            raise ValueError("explanation edge with an unselected endpoint")


@dataclass(frozen=True)
class ShiftInfo:
    """Which distribution shift a dataset was split under."""

    kind: str
    domain: str | None = None

    def __post_init__(self):
        if self.kind not in ("covariate", "concept", "none"):
            raise ValueError("unknown shift kind %r" % self.kind)
        if self.kind != "none" and self.domain not in ("basis", "size"):
            raise ValueError("unknown shift domain %r" % self.domain)


@dataclass
class Dataset:
    """A list of graphs with optional split tags and shift descriptor."""

    graphs: list[Graph]
    split_tags: list[str] | None = None
    shift: ShiftInfo | None = None

    def __post_init__(self):
        if self.split_tags is not None:
            if len(self.split_tags) != len(self.graphs):
                raise ValueError("one split tag per graph required")
            bad = [t for t in self.split_tags if t not in SPLIT_TAGS]
            if bad:
                raise ValueError("unknown split tag %r" % bad[0])
            if self.graphs and "train" not in self.split_tags:
                raise ValueError("train split must be nonempty")

    def __len__(self) -> int:
        return len(self.graphs)

    def split(self, tag: str) -> list[Graph]:
        if tag not in SPLIT_TAGS:
            raise ValueError("unknown split tag %r" % tag)
        if self.split_tags is None:
            raise ValueError("dataset has no split tags")
        return [g for g, t in zip(self.graphs, self.split_tags) if t == tag]


def degrees(g: Graph) -> np.ndarray:
    deg = np.zeros(g.n, dtype=np.int64)
    if g.m:
        np.add.at(deg, g.edges[:, 0], 1)
        np.add.at(deg, g.edges[:, 1], 1)
    return deg


def adjacency_mean(g: Graph, edge_keep: np.ndarray | None = None) -> np.ndarray:
    """Row-normalized dense adjacency; isolated nodes get an all-zero row.

    ``edge_keep`` optionally restricts to a boolean subset of the edges.
    """
    a = np.zeros((g.n, g.n))
    edges = g.edges if edge_keep is None else g.edges[edge_keep]
    if edges.shape[0]:
        a[edges[:, 0], edges[:, 1]] = 1.0
        a[edges[:, 1], edges[:, 0]] = 1.0
        deg = a.sum(axis=1, keepdims=True)
        np.divide(a, deg, out=a, where=deg > 0)
    return a


def _remap(g: Graph, keep_nodes: np.ndarray, keep_edges: np.ndarray) -> Graph:
    """Build the subgraph of the kept nodes/edges with indices compacted."""
    old_ids = np.flatnonzero(keep_nodes)
    new_of_old = np.full(g.n, -1, dtype=np.int64)
    new_of_old[old_ids] = np.arange(old_ids.size)
    sub_edges = new_of_old[g.edges[keep_edges]] if g.m else np.zeros((0, 2), dtype=np.int64)
    gt = None
    if g.gt_motif is not None:
        gt = MotifTruth(
            node_mask=g.gt_motif.node_mask[keep_nodes].copy(),
            edge_mask=g.gt_motif.edge_mask[keep_edges].copy(),
        )
    return Graph(
        n=int(old_ids.size),
        edges=sub_edges,
        x=g.x[keep_nodes].copy(),
        node_types=g.node_types[keep_nodes].copy(),
        label=g.label,
        env_meta=g.env_meta,
        gt_motif=gt,
    )


def induced_subgraph(g: Graph, e: Explanation) -> Graph:
    """The explained part: masked nodes with exactly the masked edges."""
    validate_explanation(g, e)
    return _remap(g, e.node_mask, e.edge_mask)


def complement_graph(g: Graph, e: Explanation) -> Graph:
    """The remainder after removing the explanation.

    All masked edges are dropped. A node is dropped only when it is masked
    and no unmasked edge still touches it, i.e. it lives exclusively in the
    explained part; masked nodes shared with the remainder are kept.
    """
    validate_explanation(g, e)
    keep_edges = ~e.edge_mask
    rem_deg = np.zeros(g.n, dtype=np.int64)
    if g.m:
        kept = g.edges[keep_edges]
        np.add.at(rem_deg, kept[:, 0], 1)
        np.add.at(rem_deg, kept[:, 1], 1)
    keep_nodes = ~e.node_mask | (rem_deg > 0)
    return _remap(g, keep_nodes, keep_edges)


def _graph_to_record(g: Graph, tag: str | None, shift: ShiftInfo | None) -> dict:
    rec = {
        "v": DATASET_VERSION,
        "n": g.n,
        "d": g.d,
        "edges": g.edges.tolist(),
        "x": g.x.tolist(),
        "types": g.node_types.tolist(),
        "y": int(g.label),
        "env": None,
        "gt": None,
        "split": tag,
        "shift": None,
    }
    if g.env_meta is not None:
        rec["env"] = {
            "family": g.env_meta.family,
            "family_id": g.env_meta.family_id,
            "size_bucket": g.env_meta.size_bucket,
            "env_dims": list(g.env_meta.env_dims),
        }
    if g.gt_motif is not None:
        rec["gt"] = {
            "nodes": [int(b) for b in g.gt_motif.node_mask],
            "edges": [int(b) for b in g.gt_motif.edge_mask],
        }
    if shift is not None:
        rec["shift"] = {"kind": shift.kind, "domain": shift.domain}
    return rec


def _graph_from_record(rec: dict) -> tuple[Graph, str | None, ShiftInfo | None]:
    version = rec.get("v")
    if version != DATASET_VERSION:
        raise ValueError("unsupported dataset version: %r" % version)
    env = None
    if rec.get("env") is not None:
        e = rec["env"]
        env = EnvMeta(
            family=e["family"],
            family_id=int(e["family_id"]),
            size_bucket=int(e["size_bucket"]),
            env_dims=tuple(int(d) for d in e["env_dims"]),
        )
    gt = None
    if rec.get("gt") is not None:
        gt = MotifTruth(
            node_mask=np.asarray(rec["gt"]["nodes"], dtype=bool),
            edge_mask=np.asarray(rec["gt"]["edges"], dtype=bool),
        )
    n = int(rec["n"])
    d = int(rec["d"])
    g = Graph(
        n=n,
        edges=np.asarray(rec["edges"], dtype=np.int64).reshape(-1, 2),
        x=np.asarray(rec["x"], dtype=np.float64).reshape(n, d),
        node_types=np.asarray(rec["types"], dtype=np.int64),
        label=int(rec["y"]),
        env_meta=env,
        gt_motif=gt,
    )
    shift = None
    if rec.get("shift") is not None:
        shift = ShiftInfo(kind=rec["shift"]["kind"], domain=rec["shift"].get("domain"))
    return g, rec.get("split"), shift


def serialize(dataset: Dataset, path) -> None:
    """Write one JSON record per graph; an empty dataset is a zero-line file.

    Floats are emitted through ``repr`` (via json), which round-trips float64
    exactly, so deserialize(serialize(ds)) is bit-identical.
    """
    tags = dataset.split_tags or [None] * len(dataset.graphs)
    with open(path, "w") as fh:
        for g, tag in zip(dataset.graphs, tags):
            json.dump(_graph_to_record(g, tag, dataset.shift), fh, separators=(",", ":"))
            fh.write("\n")


def deserialize(path) -> Dataset:
    """Read a dataset file; malformed lines raise with their line number."""
    graphs: list[Graph] = []
    tags: list[str | None] = []
    shift: ShiftInfo | None = None
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as err:
                raise ValueError("line %d: invalid JSON (%s)" % (lineno, err.msg)) from err
            try:
                g, tag, line_shift = _graph_from_record(rec)
            except (KeyError, ValueError, TypeError) as err:
                raise ValueError("line %d: %s" % (lineno, err)) from err
            graphs.append(g)
            tags.append(tag)
            if shift is None:
                shift = line_shift
    has_tags = any(t is not None for t in tags)
    if has_tags and any(t is None for t in tags):
        raise ValueError("split tags must cover every graph or none")
    return Dataset(graphs=graphs, split_tags=tags if has_tags else None, shift=shift)


def export_dot(g: Graph, e: Explanation | None = None, name: str = "g") -> str:
    """Deterministic DOT text; explained nodes and edges carry highlight attrs.

    The graph is emitted as a digraph with ``dir=none`` so edges render
    undirected; statements follow node index order and stored edge order.
    """
    if e is not None:
        validate_explanation(g, e)
    lines = ["digraph %s {" % name, "  edge [dir=none];"]
    for i in range(g.n):
        attrs = 'label="%d" type="%d"' % (i, g.node_types[i])
        if e is not None and e.node_mask[i]:
            attrs += ' color="crimson" penwidth="2" explained="1"'
        lines.append("  n%d [%s];" % (i, attrs))
    for j in range(g.m):
        src, dst = int(g.edges[j, 0]), int(g.edges[j, 1])
        if e is not None and e.edge_mask[j]:
            lines.append('  n%d -> n%d [color="crimson" penwidth="2" explained="1"];' % (src, dst))
        else:
            lines.append("  n%d -> n%d;" % (src, dst))
    lines.append("}")
    return "\n".join(lines) + "\n"
