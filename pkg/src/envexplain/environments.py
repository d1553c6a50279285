"""Non-parametric environment analysis over graph structure and features.

No learned parameters anywhere in this module. Structure environments come
from clustering continuous Weisfeiler-Leman embeddings; feature environments
from clustering node features restricted to environment-consistent dimensions;
causal nodes from variance gradients within (environment, label) groups; and
causal edges from how much single-edge removal moves a graph's embedding
relative to its environment center.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from .graphs import Graph, adjacency_mean, degrees

__all__ = [
    "StructureEmbeddings",
    "structure_features",
    "wl_embed",
    "kmeans",
    "kmeans_detail",
    "kmeans_restarts",
    "variance_scores",
    "js_divergence",
    "EnvironmentAnalyzer",
]

ENV_MODEL_VERSION = 1

DEGREE_BUCKETS = 5  # degrees 1,2,3,4,>=5


@dataclass(frozen=True)
class StructureEmbeddings:
    """Per-node WL embeddings (iterations concatenated) and their mean pool."""

    nodes: np.ndarray
    graph: np.ndarray


def structure_features(g: Graph, num_types: int) -> np.ndarray:
    """One-hot degree bucket (1,2,3,4,>=5) next to one-hot node type."""
    if g.n and int(g.node_types.max()) >= num_types:
        raise ValueError("node type %d outside the %d known types" % (g.node_types.max(), num_types))
    x = np.zeros((g.n, DEGREE_BUCKETS + num_types))
    if g.n:
        buckets = np.clip(degrees(g), 1, DEGREE_BUCKETS) - 1
        idx = np.arange(g.n)
        x[idx, buckets] = 1.0
        x[idx, DEGREE_BUCKETS + g.node_types] = 1.0
    return x


def wl_embed(g: Graph, x_str: np.ndarray, iterations: int) -> StructureEmbeddings:
    """Continuous WL: average self with neighbor mean, keep every iteration.

    h(t) = (h(t-1) + neighbor_mean(h(t-1))) / 2; the embedding concatenates
    h(0)..h(iterations). Parameter-free and permutation-equivariant.
    """
    if iterations < 0:
        raise ValueError("iterations must be non-negative")
    a = adjacency_mean(g)
    hs = [x_str]
    for _ in range(iterations):
        hs.append(0.5 * (hs[-1] + a @ hs[-1]))
    nodes = np.concatenate(hs, axis=1)
    graph = nodes.mean(axis=0) if g.n else np.zeros(nodes.shape[1])
    return StructureEmbeddings(nodes=nodes, graph=graph)


def _kmeans_pp(points: np.ndarray, k: int, rng) -> np.ndarray:
    centers = np.empty((k, points.shape[1]))
    centers[0] = points[rng.integers(len(points))]
    d2 = ((points - centers[0]) ** 2).sum(axis=1)
    for j in range(1, k):
        total = d2.sum()
        if total <= 0.0:
            idx = int(rng.integers(len(points)))
        else:
            idx = int(rng.choice(len(points), p=d2 / total))
        centers[j] = points[idx]
        d2 = np.minimum(d2, ((points - centers[j]) ** 2).sum(axis=1))
    return centers


def kmeans_detail(points, k: int, seed: int, tol: float = 1e-4, max_iter: int = 100):
    """Seeded k-means++ plus Lloyd; returns (centers, labels, inertia, trace).

    Assignment ties go to the lowest center index; a cluster that empties is
    reseeded to the point farthest from its current center. The trace holds
    the inertia measured at each assignment step.
    """
    points = np.asarray(points, dtype=np.float64)
    if k <= 0:
        raise ValueError("K must be positive")
    if points.ndim != 2 or len(points) < k:
        raise ValueError("need at least K points to form K clusters")
    rng = np.random.default_rng(seed)
    centers = _kmeans_pp(points, k, rng)
    trace = []
    for _ in range(max_iter):
        dists = ((points[:, None, :] - centers[None]) ** 2).sum(axis=2)
        labels = np.argmin(dists, axis=1)
        trace.append(float(dists[np.arange(len(points)), labels].sum()))
        for j in range(k):
            if not np.any(labels == j):
                far = int(np.argmax(dists[np.arange(len(points)), labels]))
                centers[j] = points[far]
                labels[far] = j
        new_centers = np.stack([points[labels == j].mean(axis=0) for j in range(k)])
        shift = float(np.sqrt(((new_centers - centers) ** 2).sum(axis=1)).max())
        centers = new_centers
        if shift < tol:
            break
    dists = ((points[:, None, :] - centers[None]) ** 2).sum(axis=2)
    labels = np.argmin(dists, axis=1)
    inertia = float(dists[np.arange(len(points)), labels].sum())
    return centers, labels, inertia, trace


def kmeans(points, k: int, seed: int):
    """Single k-means run; see kmeans_detail for the exact procedure."""
    centers, labels, _, _ = kmeans_detail(points, k, seed)
    return centers, labels


def kmeans_restarts(points, k: int, seed: int, restarts: int = 10):
    """Lowest-inertia result over seeded restarts; ties keep the first."""
    best = None
    for r in range(restarts):
        centers, labels, inertia, _ = kmeans_detail(points, k, seed + r)
        if best is None or inertia < best[2]:
            best = (centers, labels, inertia)
    return best


def variance_scores(rows: np.ndarray):
    """Total per-dimension variance of a row set, its gradient, and scores.

    S = sum_d Var_d(rows); dS/drow_i = 2 (row_i - mean) / N, which already
    accounts for the mean's own dependence on row_i; score_i is the gradient's
    L2 norm.
    """
    rows = np.asarray(rows, dtype=np.float64)
    n = rows.shape[0]
    mean = rows.mean(axis=0)
    s = float(((rows - mean) ** 2).sum() / n)
    grads = 2.0 * (rows - mean) / n
    scores = np.sqrt((grads ** 2).sum(axis=1))
    return s, grads, scores


def js_divergence(p: np.ndarray, q: np.ndarray) -> float:
    """Jensen-Shannon divergence, base 2, between two histograms."""
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    ps, qs = p.sum(), q.sum()
    if ps > 0:
        p = p / ps
    if qs > 0:
        q = q / qs
    m = 0.5 * (p + q)

    def kl(a, b):
        mask = a > 0
        return float(np.sum(a[mask] * np.log2(a[mask] / b[mask])))

    return 0.5 * kl(p, m) + 0.5 * kl(q, m)


def _mean_pairwise_js(groups: list[np.ndarray], lo: float, hi: float, bins: int) -> float:
    """Mean JS over all group pairs, with shared bins spanning [lo, hi]."""
    if hi <= lo:
        return 0.0
    hists = [np.histogram(v, bins=bins, range=(lo, hi))[0] for v in groups if len(v)]
    if len(hists) < 2:
        return 0.0
    total = 0.0
    count = 0
    for i in range(len(hists)):
        for j in range(i + 1, len(hists)):
            total += js_divergence(hists[i], hists[j])
            count += 1
    return total / count


class EnvironmentAnalyzer(BaseEstimator):
    """Fits structure and feature environments plus causal partitions.

    Parameters
    ----------
    num_envs : int
        K for both clusterings.
    wl_iterations : int
        WL propagation depth (the embeddings concatenate every iteration).
    refine_rounds : int
        Alternations between feature-environment assignment and
        environment-dimension refinement.
    js_threshold : float
        A dimension counts as environment-consistent when its mean pairwise
        JS divergence across groups stays at or below this.
    histogram_bins : int
        Bins for the per-dimension histograms.
    restarts : int
        Seeded k-means restarts (lowest inertia wins).
    seed : int
        Base seed for all clustering.
    """

    def __init__(self, num_envs=5, wl_iterations=3, refine_rounds=5,
                 js_threshold=0.2, histogram_bins=16, restarts=10, seed=0):
        self.num_envs = num_envs
        self.wl_iterations = wl_iterations
        self.refine_rounds = refine_rounds
        self.js_threshold = js_threshold
        self.histogram_bins = histogram_bins
        self.restarts = restarts
        self.seed = seed

    def _check_fitted(self):
        if not getattr(self, "fitted_", False):
            raise NotFittedError("environment analyzer is not fitted; call fit first")

    def _embed(self, g: Graph) -> StructureEmbeddings:
        return wl_embed(g, structure_features(g, self.num_types_), self.wl_iterations)

    def _dims_over_groups(self, x: np.ndarray, group_keys: np.ndarray,
                          lo: np.ndarray, hi: np.ndarray, dims) -> dict[int, float]:
        """Mean pairwise JS per dim across the groups keyed by group_keys."""
        keys = np.unique(group_keys)
        out = {}
        for dim in dims:
            groups = [x[group_keys == key, dim] for key in keys]
            out[dim] = _mean_pairwise_js(groups, lo[dim], hi[dim], self.histogram_bins)
        return out

    def fit(self, X, y=None):
        graphs = list(X)
        if not graphs:
            raise ValueError("fit requires at least one graph")
        if len(graphs) < self.num_envs:
            raise ValueError("need at least num_envs graphs to cluster")
        if self.wl_iterations < 1:
            raise ValueError("wl_iterations must be at least 1")
        labels_y = np.asarray([g.label for g in graphs] if y is None else list(y))
        self.num_types_ = int(max(int(g.node_types.max(initial=0)) for g in graphs)) + 1
        embeds = [self._embed(g) for g in graphs]
        h_graphs = np.stack([e.graph for e in embeds])

        centers, s_labels, _ = kmeans_restarts(h_graphs, self.num_envs, self.seed, self.restarts)
        self.structure_centers_ = centers
        self.structure_labels_ = s_labels

        # environment-consistent feature dimensions, then feature environments
        node_x = np.vstack([g.x for g in graphs])
        node_type = np.concatenate([g.node_types for g in graphs])
        node_y = np.concatenate([np.full(g.n, yy) for g, yy in zip(graphs, labels_y)])
        d = node_x.shape[1]
        lo, hi = node_x.min(axis=0), node_x.max(axis=0)
        type_y_keys = node_type * (labels_y.max() + 1) + node_y
        js_by_dim = self._dims_over_groups(node_x, type_y_keys, lo, hi, range(d))
        dim_env = [dim for dim in range(d) if js_by_dim[dim] <= self.js_threshold]

        node_graph = np.concatenate([np.full(g.n, i) for i, g in enumerate(graphs)])
        for _ in range(self.refine_rounds):
            f_centers, f_labels = self._feature_cluster(graphs, dim_env)
            node_env = np.asarray(f_labels)[node_graph]
            # a dim survives if, inside each environment, its distribution is
            # consistent across node types; comparisons never cross environments
            js_refined = {dim: [] for dim in dim_env}
            for env in np.unique(node_env):
                sel = node_env == env
                per_env = self._dims_over_groups(node_x[sel], node_type[sel], lo, hi, dim_env)
                for dim in dim_env:
                    js_refined[dim].append(per_env[dim])
            dim_env = [dim for dim in dim_env
                       if not js_refined[dim] or np.mean(js_refined[dim]) <= self.js_threshold]
        f_centers, f_labels = self._feature_cluster(graphs, dim_env)
        self.dim_env_ = tuple(dim_env)
        self.feature_centers_ = f_centers
        self.feature_labels_ = f_labels

        self._fit_causal_partitions(graphs, embeds, labels_y)
        self.fitted_ = True
        return self

    def _feature_cluster(self, graphs, dim_env):
        dims = list(dim_env)
        if not dims:
            warnings.warn("no environment-consistent dims found; falling back to all dims")
            dims = list(range(graphs[0].d))
        pooled = np.stack([g.x[:, dims].mean(axis=0) if g.n else np.zeros(len(dims)) for g in graphs])
        centers, labels, _ = kmeans_restarts(pooled, self.num_envs, self.seed + 1000, self.restarts)
        return centers, labels

    def _fit_causal_partitions(self, graphs, embeds, labels_y):
        """Variance-gradient node split per (E_s, Y) group; edge split per graph."""
        n_graphs = len(graphs)
        self.causal_node_masks_ = [None] * n_graphs
        group_key = self.structure_labels_ * (labels_y.max() + 1) + labels_y
        for key in np.unique(group_key):
            members = np.flatnonzero(group_key == key)
            if len(members) == 1:
                # a lone graph gives no within-group contrast: every node
                # counts as environment-side by convention
                i = int(members[0])
                self.causal_node_masks_[i] = np.zeros(graphs[i].n, dtype=bool)
                continue
            rows = np.vstack([embeds[i].nodes for i in members])
            _, _, scores = variance_scores(rows)
            median = float(np.median(scores))
            off = 0
            for i in members:
                n = graphs[i].n
                self.causal_node_masks_[i] = scores[off:off + n] > median
                off += n
        self.causal_edge_masks_ = [
            self.causal_edge_partition(graphs[i], self.structure_centers_[self.structure_labels_[i]])
            for i in range(n_graphs)
        ]

    def causal_edge_partition(self, g: Graph, center: np.ndarray) -> np.ndarray:
        """True for causal edges: single-edge removal moves h_G strongly
        relative to the environment center. Low movers sit in the shared
        environment structure, mirroring the high-gradient node rule."""
        if g.m == 0:
            return np.zeros(0, dtype=bool)
        scores = self.edge_scores(g, center)
        threshold = scores.mean() + scores.std()
        return scores > threshold

    def edge_scores(self, g: Graph, center: np.ndarray) -> np.ndarray:
        """Per-edge |distance change to center| under single-edge removal."""
        x_str = structure_features(g, self.num_types_)
        base = wl_embed(g, x_str, self.wl_iterations)
        d0 = float(np.linalg.norm(base.graph - center))
        b = np.zeros((g.n, g.n))
        b[g.edges[:, 0], g.edges[:, 1]] = 1.0
        b[g.edges[:, 1], g.edges[:, 0]] = 1.0
        stack = np.repeat(b[None], g.m, axis=0)
        ks = np.arange(g.m)
        stack[ks, g.edges[:, 0], g.edges[:, 1]] = 0.0
        stack[ks, g.edges[:, 1], g.edges[:, 0]] = 0.0
        deg = stack.sum(axis=2, keepdims=True)
        a = np.divide(stack, deg, out=np.zeros_like(stack), where=deg > 0)
        h = np.repeat(x_str[None], g.m, axis=0)
        parts = [h]
        for _ in range(self.wl_iterations):
            parts.append(0.5 * (parts[-1] + a @ parts[-1]))
        h_all = np.concatenate(parts, axis=2)
        h_g = h_all.mean(axis=1)
        dists = np.sqrt(((h_g - center) ** 2).sum(axis=1))
        return np.abs(dists - d0)

    def infer_env(self, g: Graph) -> tuple[int, int]:
        """Nearest structure and feature centers; ties to the lowest index."""
        self._check_fitted()
        emb = self._embed(g)
        es = int(np.argmin(((self.structure_centers_ - emb.graph) ** 2).sum(axis=1)))
        dims = list(self.dim_env_) if self.dim_env_ else list(range(g.d))
        pooled = g.x[:, dims].mean(axis=0) if g.n else np.zeros(len(dims))
        ef = int(np.argmin(((self.feature_centers_ - pooled) ** 2).sum(axis=1)))
        return es, ef

    def predict(self, X):
        """(N, 2) array of structure and feature environment labels."""
        return np.asarray([self.infer_env(g) for g in X])

    def save(self, path):
        self._check_fitted()
        payload = {
            "v": ENV_MODEL_VERSION,
            "kind": "env-model",
            "params": self.get_params(),
            "num_types": self.num_types_,
            "structure_centers": self.structure_centers_.tolist(),
            "structure_labels": [int(v) for v in self.structure_labels_],
            "feature_centers": self.feature_centers_.tolist(),
            "feature_labels": [int(v) for v in self.feature_labels_],
            "dim_env": list(self.dim_env_),
            "causal_node_masks": [[int(b) for b in m] for m in self.causal_node_masks_],
            "causal_edge_masks": [[int(b) for b in m] for m in self.causal_edge_masks_],
        }
        with open(path, "w") as fh:
            json.dump(payload, fh)
            fh.write("\n")

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            payload = json.load(fh)
        if payload.get("v") != ENV_MODEL_VERSION:
            raise ValueError("unsupported environment model version: %r" % payload.get("v"))
        if payload.get("kind") != "env-model":
            raise ValueError("checkpoint is not an environment model")
        model = cls(**payload["params"])
        model.num_types_ = int(payload["num_types"])
        model.structure_centers_ = np.asarray(payload["structure_centers"], dtype=np.float64)
        model.structure_labels_ = np.asarray(payload["structure_labels"], dtype=np.int64)
        model.feature_centers_ = np.asarray(payload["feature_centers"], dtype=np.float64)
        model.feature_labels_ = np.asarray(payload["feature_labels"], dtype=np.int64)
        model.dim_env_ = tuple(int(v) for v in payload["dim_env"])
        model.causal_node_masks_ = [np.asarray(m, dtype=bool) for m in payload["causal_node_masks"]]
        model.causal_edge_masks_ = [np.asarray(m, dtype=bool) for m in payload["causal_edge_masks"]]
        model.fitted_ = True
        return model
