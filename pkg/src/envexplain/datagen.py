"""Synthetic motif-classification datasets with plantable distribution shifts.

Each graph is one base graph (the environment part) plus one motif (the causal
part) attached through a single bridge edge. The graph label is the motif
identity, so the motif subgraph is the ground-truth explanation; the bridge
edge belongs to neither the motif nor the base.

Environment signal is planted twice so both recovery routes can be scored
against ground truth: structurally, through the base family and base size, and
in features, through the configured env dims which carry the base-family index
plus noise. Class-informative feature dims carry the motif-role one-hot, and
the remaining filler dims track the node type so that only the env dims look
environment-consistent under a distributional comparison.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .graphs import Dataset, EnvMeta, Graph, MotifTruth, ShiftInfo

__all__ = [
    "GenConfig",
    "BASE_FAMILIES",
    "MOTIFS",
    "NUM_SIZE_BUCKETS",
    "generate",
    "split",
    "size_bucket",
]

# motif edge lists over local node ids 0..4; roles are the local ids
MOTIFS = {
    "house": ((0, 1), (1, 2), (2, 3), (0, 3), (2, 4), (3, 4)),
    "pentagon": ((0, 1), (1, 2), (2, 3), (3, 4), (0, 4)),
    "candy": ((0, 1), (1, 2), (2, 3), (0, 3), (3, 4)),
}
MOTIF_SIZE = 5

BASE_FAMILIES = ("path", "cycle", "tree", "barabasi-albert", "wheel")

NUM_SIZE_BUCKETS = 5

CLASS_FEATURE_DIMS = MOTIF_SIZE  # dims 0..4 carry the motif-role one-hot


@dataclass(frozen=True)
class GenConfig:
    """Knobs for one synthetic dataset."""

    num_graphs: int = 2000
    base_families: tuple[str, ...] = BASE_FAMILIES
    base_size_range: tuple[int, int] = (8, 16)
    motif_set: tuple[str, ...] = ("house", "pentagon", "candy")
    feature_dim: int = 8
    env_dims: tuple[int, ...] = (6, 7)
    concept_corr: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.num_graphs < 1:
            raise ValueError("num_graphs must be positive")
        if not self.base_families:
            raise ValueError("at least one base family required")
        unknown = [f for f in self.base_families if f not in BASE_FAMILIES]
        if unknown:
            raise ValueError("unknown base family %r" % unknown[0])
        if not self.motif_set:
            raise ValueError("at least one motif required")
        unknown = [m for m in self.motif_set if m not in MOTIFS]
        if unknown:
            raise ValueError("unknown motif %r" % unknown[0])
        lo, hi = self.base_size_range
        if lo < MOTIF_SIZE:
            raise ValueError("base_size_range minimum %d is below the motif size %d" % (lo, MOTIF_SIZE))
        if hi < lo:
            raise ValueError("base_size_range maximum below minimum")
        if self.feature_dim < CLASS_FEATURE_DIMS + 1:
            raise ValueError("feature_dim must leave room beyond the %d motif-role dims" % CLASS_FEATURE_DIMS)
        if not self.env_dims:
            raise ValueError("at least one env dim required")
        for dim in self.env_dims:
            if not 0 <= dim < self.feature_dim:
                raise ValueError("env dim %d outside [0, %d)" % (dim, self.feature_dim))
            if dim < CLASS_FEATURE_DIMS:
                raise ValueError("env dim %d overlaps the motif-role dims [0, %d)" % (dim, CLASS_FEATURE_DIMS))
        if not 0.0 <= self.concept_corr <= 1.0:
            raise ValueError("concept_corr must lie in [0, 1]")


def size_bucket(size: int, size_range: tuple[int, int]) -> int:
    """Even bucketing of base sizes into NUM_SIZE_BUCKETS bins."""
    lo, hi = size_range
    if not lo <= size <= hi:
        raise ValueError("size %d outside range %r" % (size, size_range))
    return min(NUM_SIZE_BUCKETS - 1, (size - lo) * NUM_SIZE_BUCKETS // (hi - lo + 1))


def _base_path(s, rng):
    return [(i, i + 1) for i in range(s - 1)]


def _base_cycle(s, rng):
    return [(i, i + 1) for i in range(s - 1)] + [(0, s - 1)]


def _base_tree(s, rng):
    return [(int(rng.integers(0, i)), i) for i in range(1, s)]


def _base_ba(s, rng):
    # preferential attachment with 2 edges per arrival, seeded by a triangle
    edges = [(0, 1), (0, 2), (1, 2)]
    deg = np.array([2.0, 2.0, 2.0])
    for i in range(3, s):
        targets = rng.choice(i, size=2, replace=False, p=deg / deg.sum())
        for t in sorted(int(t) for t in targets):
            edges.append((t, i))
            deg[t] += 1.0
        deg = np.append(deg, 2.0)
    return edges


def _base_wheel(s, rng):
    spokes = [(0, i) for i in range(1, s)]
    rim = [(i, i + 1) for i in range(1, s - 1)] + [(1, s - 1)]
    return spokes + rim


_BASE_BUILDERS = {
    "path": _base_path,
    "cycle": _base_cycle,
    "tree": _base_tree,
    "barabasi-albert": _base_ba,
    "wheel": _base_wheel,
}


def _canonical_edges(edges: np.ndarray, n: int) -> tuple[np.ndarray, np.ndarray]:
    lo = np.minimum(edges[:, 0], edges[:, 1])
    hi = np.maximum(edges[:, 0], edges[:, 1])
    stacked = np.stack([lo, hi], axis=1)
    order = np.argsort(lo * n + hi, kind="stable")
    return stacked[order], order


def _make_graph(cfg: GenConfig, label: int, family_idx: int, rng) -> Graph:
    family = cfg.base_families[family_idx]
    lo, hi = cfg.base_size_range
    s = int(rng.integers(lo, hi + 1))
    base_edges = _BASE_BUILDERS[family](s, rng)
    motif_edges = MOTIFS[cfg.motif_set[label]]
    n = s + MOTIF_SIZE

    edges = [(a, b) for a, b in base_edges]
    gt_edge = [False] * len(edges)
    for a, b in motif_edges:
        edges.append((s + a, s + b))
        gt_edge.append(True)
    bridge = (int(rng.integers(0, s)), s + int(rng.integers(0, MOTIF_SIZE)))
    edges.append(bridge)
    gt_edge.append(False)

    types = np.zeros(n, dtype=np.int64)
    types[s:] = np.arange(1, MOTIF_SIZE + 1)
    gt_node = np.zeros(n, dtype=bool)
    gt_node[s:] = True

    d = cfg.feature_dim
    x = np.zeros((n, d))
    x[:, :CLASS_FEATURE_DIMS] = rng.normal(0.0, 0.1, size=(n, CLASS_FEATURE_DIMS))
    for role in range(MOTIF_SIZE):
        x[s + role, role] += 1.0
    filler = [j for j in range(CLASS_FEATURE_DIMS, d) if j not in cfg.env_dims]
    for j in filler:
        x[:, j] = 0.5 * types + 0.25 * rng.normal(size=n)
    for j in cfg.env_dims:
        x[:, j] = family_idx + 0.3 * rng.normal(size=n)

    # hide the construction order so node index carries no signal
    perm = rng.permutation(n)
    inv = np.empty(n, dtype=np.int64)
    inv[perm] = np.arange(n)
    edge_arr = inv[np.asarray(edges, dtype=np.int64)]
    edge_arr, order = _canonical_edges(edge_arr, n)
    gt_edge = np.asarray(gt_edge)[order]
    x_p = np.empty_like(x)
    x_p[inv] = x
    types_p = np.empty_like(types)
    types_p[inv] = types
    gt_node_p = np.empty_like(gt_node)
    gt_node_p[inv] = gt_node

    return Graph(
        n=n,
        edges=edge_arr,
        x=x_p,
        node_types=types_p,
        label=label,
        env_meta=EnvMeta(
            family=family,
            family_id=family_idx,
            size_bucket=size_bucket(s, cfg.base_size_range),
            env_dims=tuple(cfg.env_dims),
        ),
        gt_motif=MotifTruth(node_mask=gt_node_p, edge_mask=gt_edge),
    )


def generate(cfg: GenConfig) -> Dataset:
    """Build cfg.num_graphs labeled graphs; same cfg gives identical bytes."""
    rng = np.random.default_rng(cfg.seed)
    num_families = len(cfg.base_families)
    graphs = []
    for _ in range(cfg.num_graphs):
        label = int(rng.integers(0, len(cfg.motif_set)))
        if rng.random() < cfg.concept_corr:
            family_idx = label % num_families
        else:
            family_idx = int(rng.integers(0, num_families))
        graphs.append(_make_graph(cfg, label, family_idx, rng))
    return Dataset(graphs=graphs)


def _tags_from_groups(values, train_set, val_set, test_set):
    tags = []
    for v in values:
        if v in train_set:
            tags.append("train")
        elif v in val_set:
            tags.append("val")
        elif v in test_set:
            tags.append("test")
        else:
            raise AssertionError("unassigned group %r" % (v,))
    return tags


def _covariate_tags(dataset: Dataset, domain: str) -> list[str]:
    metas = [g.env_meta for g in dataset.graphs]
    if domain == "basis":
        values = [m.family_id for m in metas]
    else:
        values = [m.size_bucket for m in metas]
    groups = sorted(set(values))
    if len(groups) < 5:
        raise ValueError(
            "covariate/%s split needs at least 5 distinct %s groups, found %d"
            % (domain, domain, len(groups))
        )
    k = len(groups)
    n_train = k - 2
    train_set = set(groups[:n_train])
    val_set = {groups[n_train]}
    test_set = set(groups[n_train + 1:])
    return _tags_from_groups(values, train_set, val_set, test_set)


def _concept_tags(dataset: Dataset, train_corr: float, rng) -> list[str]:
    n = len(dataset.graphs)
    num_families = max(g.env_meta.family_id for g in dataset.graphs) + 1
    aligned = np.array(
        [g.label % num_families == g.env_meta.family_id for g in dataset.graphs]
    )
    a_total = int(aligned.sum())
    c = train_corr
    if abs(2 * c - 1) < 1e-9:
        raise ValueError("concept split needs train_corr away from 0.5")
    # train+val block carries correlation c, test carries 1-c; block sizes are
    # then forced by the aligned count: c*S + (1-c)*(n-S) = a_total
    block = (a_total - (1 - c) * n) / (2 * c - 1)
    s1 = int(round(block))
    s2 = n - s1
    a1 = int(round(c * s1))
    a2 = a_total - a1
    u1, u2 = s1 - a1, s2 - a2
    if min(s1, s2, a1, a2, u1, u2) < 0 or s1 < 4 or s2 < 1:
        raise ValueError(
            "concept split infeasible: %d aligned of %d graphs cannot realize "
            "train correlation %.2f; regenerate with a different concept_corr" % (a_total, n, c)
        )
    test_frac_aligned = a2 / s2
    if abs(test_frac_aligned - (1 - c)) > 0.05:
        raise ValueError(
            "concept split infeasible: test alignment %.2f would miss target %.2f"
            % (test_frac_aligned, 1 - c)
        )
    aligned_ids = rng.permutation(np.flatnonzero(aligned))
    other_ids = rng.permutation(np.flatnonzero(~aligned))
    tags = [""] * n
    # train takes 3/4 of the block, val the rest, both at correlation c
    for ids, take in ((aligned_ids, a1), (other_ids, u1)):
        n_train = int(round(0.75 * take))
        for i in ids[:n_train]:
            tags[i] = "train"
        for i in ids[n_train:take]:
            tags[i] = "val"
        for i in ids[take:]:
            tags[i] = "test"
    return tags


def split(
    dataset: Dataset,
    shift: str,
    domain: str | None = None,
    seed: int = 0,
    train_corr: float = 0.9,
) -> Dataset:
    """Tag every graph train/val/test under the requested shift.

    covariate: held-out basis families or size buckets (3:1:1 over groups).
    concept: train/val carry family-label correlation train_corr, test carries
    the inverted correlation; split sizes follow from the aligned-graph count.
    none: seeded uniform 3:1:1 tags, for in-distribution baselines.
    """
    if any(g.env_meta is None for g in dataset.graphs):
        raise ValueError("split requires generator metadata on every graph")
    if shift == "covariate":
        if domain not in ("basis", "size"):
            raise ValueError("covariate shift needs domain 'basis' or 'size'")
        tags = _covariate_tags(dataset, domain)
        info = ShiftInfo(kind="covariate", domain=domain)
    elif shift == "concept":
        if domain not in (None, "basis"):
            raise ValueError("concept shift is planted on base families only")
        tags = _concept_tags(dataset, train_corr, np.random.default_rng(seed))
        info = ShiftInfo(kind="concept", domain="basis")
    elif shift == "none":
        order = np.random.default_rng(seed).permutation(len(dataset.graphs))
        n_train = int(round(0.6 * len(order)))
        n_val = int(round(0.2 * len(order)))
        tags = [""] * len(order)
        for pos, i in enumerate(order):
            tags[i] = "train" if pos < n_train else ("val" if pos < n_train + n_val else "test")
        info = ShiftInfo(kind="none")
    else:
        raise ValueError("unknown shift %r" % shift)
    return Dataset(graphs=dataset.graphs, split_tags=tags, shift=info)
