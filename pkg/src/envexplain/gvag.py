"""Graph variational generator and the explainer's loss stack.

The generator encodes a graph embedding (next to its environment embedding)
into a graph latent, then decodes per-node and per-edge existence
probabilities from the graph latent, the node latents, and the environment
embedding. A second decoder pair with its own parameters produces logits for
the causal-alignment regularizer, keeping the regularization pressure on the
shared embeddings rather than on the probability decoders.

All losses take taped values where a gradient path exists and plain floats
where the quantity is produced by the frozen target model.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .graphs import Explanation, Graph
from .tensor import (
    ParamStore,
    Tape,
    Value,
    add,
    concat,
    div,
    exp,
    log,
    matmul,
    mlp2_forward,
    mlp2_init,
    mul,
    neg,
    reparameterize,
    rows,
    sigmoid,
    slice_cols,
    softplus,
    sqrt,
    sub,
    tile_rows,
    transpose,
    vmean,
    vsum,
    clamp,
)

__all__ = [
    "EPSILON_PROB",
    "ProbMap",
    "LossBreakdown",
    "GraphVariationalGenerator",
    "freeze_probs",
    "graph_log_prob",
    "masked_log_prob",
    "geometric_prob",
    "agreement_loss",
    "risk_loss",
    "causal_alignment",
    "complement_hinge",
    "size_penalty",
    "contrastive_loss",
    "improvement_reward",
    "total_loss",
]

EPSILON_PROB = 1e-6


@dataclass(frozen=True)
class ProbMap:
    """Frozen existence probabilities for one graph's nodes and edges."""

    node_prob: np.ndarray
    edge_prob: np.ndarray

    def __post_init__(self):
        node_prob = np.asarray(self.node_prob, dtype=np.float64)
        edge_prob = np.asarray(self.edge_prob, dtype=np.float64)
        if node_prob.ndim != 1 or edge_prob.ndim != 1:
            raise ValueError("probability vectors must be one-dimensional")
        for name, arr in (("node", node_prob), ("edge", edge_prob)):
            if arr.size and (arr.min() <= 0.0 or arr.max() >= 1.0):
                raise ValueError("%s probabilities must lie strictly inside (0, 1)" % name)
        object.__setattr__(self, "node_prob", node_prob)
        object.__setattr__(self, "edge_prob", edge_prob)


@dataclass(frozen=True)
class LossBreakdown:
    """One training step's loss parts plus the weights that combined them."""

    vae: float
    agreement: float
    risk: float
    contrast: float
    reward: float
    causal: float
    hinge: float
    size: float
    total: float
    w_vae: float
    w_recon: float
    w_contrast: float
    w_reward: float

    FIELDS = ("vae", "agreement", "risk", "contrast", "reward", "causal", "hinge", "size")


class GraphVariationalGenerator:
    """Graph encoder plus node/edge probability decoders on a shared store."""

    def __init__(self, store: ParamStore, h_dim: int, node_latent: int = 16,
                 graph_latent: int = 16, env_dim: int = 16, hidden_dim: int = 64,
                 prefix: str = "gvag"):
        self.store = store
        self.h_dim = h_dim
        self.node_latent = node_latent
        self.graph_latent = graph_latent
        self.env_dim = env_dim
        self.prefix = prefix
        mlp2_init(store, prefix + ".enc", h_dim + env_dim, hidden_dim, 2 * graph_latent)
        node_in = graph_latent + node_latent + env_dim
        edge_in = graph_latent + 2 * node_latent + env_dim
        mlp2_init(store, prefix + ".node_dec", node_in, hidden_dim, 1)
        mlp2_init(store, prefix + ".edge_dec", edge_in, hidden_dim, 1)
        mlp2_init(store, prefix + ".node_reg", node_in, hidden_dim, 1)
        mlp2_init(store, prefix + ".edge_reg", edge_in, hidden_dim, 1)

    def encode(self, tape: Tape, h_g: Value, e_g: Value) -> tuple[Value, Value]:
        """(mu, logvar) of the graph latent from [h_G, e_G]."""
        out = mlp2_forward(self.store, tape, self.prefix + ".enc", concat([h_g, e_g]))
        mu = slice_cols(out, 0, self.graph_latent)
        logvar = clamp(slice_cols(out, self.graph_latent, 2 * self.graph_latent), -10.0, 10.0)
        return mu, logvar

    def sample_latent(self, tape: Tape, h_g: Value, e_g: Value, noise: np.ndarray) -> Value:
        mu, logvar = self.encode(tape, h_g, e_g)
        return reparameterize(mu, logvar, noise)

    def _inputs(self, tape: Tape, z_g: Value, z_nodes: Value, e_g: Value,
                g: Graph) -> tuple[Value, Value]:
        n = z_nodes.shape[0]
        node_in = concat([tile_rows(z_g, n), z_nodes, tile_rows(e_g, n)])
        z_src = rows(z_nodes, g.edges[:, 0])
        z_dst = rows(z_nodes, g.edges[:, 1])
        edge_in = concat([tile_rows(z_g, g.m), z_src, z_dst, tile_rows(e_g, g.m)])
        return node_in, edge_in

    def logits(self, tape: Tape, z_g: Value, z_nodes: Value, e_g: Value, g: Graph,
               regularizer: bool = False) -> tuple[Value, Value]:
        """Node and edge existence logits; the regularizer pair has own params."""
        node_in, edge_in = self._inputs(tape, z_g, z_nodes, e_g, g)
        suffix = "_reg" if regularizer else "_dec"
        node_logits = mlp2_forward(self.store, tape, self.prefix + ".node" + suffix, node_in)
        edge_logits = mlp2_forward(self.store, tape, self.prefix + ".edge" + suffix, edge_in)
        return node_logits, edge_logits

    def probs(self, tape: Tape, z_g: Value, z_nodes: Value, e_g: Value,
              g: Graph) -> tuple[Value, Value]:
        """Existence probabilities shifted into [eps, 1-eps]; shapes (n,1), (m,1)."""
        node_logits, edge_logits = self.logits(tape, z_g, z_nodes, e_g, g)
        scale = Value(1.0 - 2.0 * EPSILON_PROB)
        shift = Value(EPSILON_PROB)
        node_p = add(mul(sigmoid(node_logits), scale), shift)
        edge_p = add(mul(sigmoid(edge_logits), scale), shift)
        return node_p, edge_p


def freeze_probs(node_p: Value, edge_p: Value) -> ProbMap:
    """Detach taped probability columns into a sampling-ready ProbMap."""
    return ProbMap(node_prob=node_p.data[:, 0].copy(), edge_prob=edge_p.data[:, 0].copy())


def graph_log_prob(pm: ProbMap, e: Explanation) -> float:
    """Log of the product of selected node and edge probabilities."""
    if e.node_mask.shape != pm.node_prob.shape or e.edge_mask.shape != pm.edge_prob.shape:
        raise ValueError("explanation masks do not match the probability map")
    total = 0.0
    if e.num_nodes:
        total += float(np.log(pm.node_prob[e.node_mask]).sum())
    if e.num_edges:
        total += float(np.log(pm.edge_prob[e.edge_mask]).sum())
    return total


def masked_log_prob(node_p: Value, edge_p: Value, e: Explanation) -> Value:
    """Taped counterpart of graph_log_prob over (n,1)/(m,1) probability values."""
    parts = []
    node_idx = np.flatnonzero(e.node_mask)
    edge_idx = np.flatnonzero(e.edge_mask)
    if node_idx.size:
        parts.append(vsum(log(rows(node_p, node_idx))))
    if edge_idx.size:
        parts.append(vsum(log(rows(edge_p, edge_idx))))
    if not parts:
        return Value(np.float64(0.0))
    total = parts[0]
    for p in parts[1:]:
        total = add(total, p)
    return total


def geometric_prob(log_prob: Value, count: int) -> Value:
    """exp(mean per-element log probability); count 0 is treated as 1."""
    return exp(mul(log_prob, Value(1.0 / max(1, count))))


def agreement_loss(log_probs: list[Value], matched: list[bool]) -> Value:
    """Mean signed log-probability: matched samples push their probability up
    (negative sign), label-flipping samples push it down."""
    if not log_probs or len(log_probs) != len(matched):
        raise ValueError("need one matched flag per sampled explanation")
    total = None
    for lp, ok in zip(log_probs, matched):
        term = neg(lp) if ok else lp
        total = term if total is None else add(total, term)
    return mul(total, Value(1.0 / len(log_probs)))


def risk_loss(loss_gaps: list[float], log_probs: list[Value], counts: list[int]) -> Value:
    """Mean of (excess loss of the explanation) x (its geometric-mean prob)."""
    if not loss_gaps or len(loss_gaps) != len(log_probs) or len(counts) != len(log_probs):
        raise ValueError("need one loss gap and element count per sample")
    total = None
    for gap, lp, count in zip(loss_gaps, log_probs, counts):
        term = mul(geometric_prob(lp, count), Value(float(gap)))
        total = term if total is None else add(total, term)
    return mul(total, Value(1.0 / len(loss_gaps)))


def _bce_with_logits(logits: Value, targets: np.ndarray) -> Value:
    t = Value(np.asarray(targets, dtype=np.float64).reshape(logits.shape))
    ones = Value(np.ones(logits.shape))
    return add(mul(t, softplus(neg(logits))), mul(sub(ones, t), softplus(logits)))


def causal_alignment(per_graph: list[tuple[Value, Value, np.ndarray, np.ndarray]]) -> Value:
    """Mean BCE pulling the regularizer decoders toward the analyzer's causal
    node and edge partitions; per graph the node and edge means add."""
    if not per_graph:
        raise ValueError("need at least one graph")
    total = None
    for node_logits, edge_logits, node_mask, edge_mask in per_graph:
        term = vmean(_bce_with_logits(node_logits, node_mask))
        if edge_mask.size:
            term = add(term, vmean(_bce_with_logits(edge_logits, edge_mask)))
        total = term if total is None else add(total, term)
    return mul(total, Value(1.0 / len(per_graph)))


def complement_hinge(complement_losses: list[float], explanation_losses: list[float]) -> Value:
    """Mean complement loss over instances where the complement outscores the
    explanation; zero when no instance violates."""
    violating = [ls for ls, lc in zip(complement_losses, explanation_losses) if ls > lc]
    value = float(np.mean(violating)) if violating else 0.0
    return Value(np.float64(value))


def size_penalty(loss_gaps: list[float], sub_nodes: list[int], prior_nodes: list[int],
                 eps: float = 1e-8) -> Value:
    """Compactness penalty: harmful explanations pay for exceeding the prior
    size, helpful ones earn more reward the smaller they are."""
    terms = []
    for gap, n_sub, n_prior in zip(loss_gaps, sub_nodes, prior_nodes):
        if gap > 0:
            terms.append((1.0 / (gap + eps)) * ((n_sub - n_prior) / n_prior))
        else:
            terms.append((1.0 / (gap + eps)) * (1.0 / (n_sub + eps)))
    return Value(np.float64(float(np.mean(terms)) if terms else 0.0))


def contrastive_loss(z_a: Value, z_b: Value, labels: np.ndarray,
                     temperature: float = 0.5, eps: float = 1e-8) -> Value:
    """Class-contrastive loss between original and perturbed graph latents.

    Pairs run over (original i, perturbed j); same-label pairs count as
    intra-class. A single-class batch has an empty inter sum and a loss
    near zero.
    """
    labels = np.asarray(labels)
    if z_a.shape[0] != z_b.shape[0] or z_a.shape[0] != labels.shape[0]:
        raise ValueError("need one label per embedding row")
    sim = matmul(z_a, transpose(z_b))
    norm_a = sqrt(add(vsum(mul(z_a, z_a), axis=1, keepdims=True), Value(1e-12)))
    norm_b = sqrt(add(vsum(mul(z_b, z_b), axis=1, keepdims=True), Value(1e-12)))
    scores = mul(div(sim, matmul(norm_a, transpose(norm_b))), Value(1.0 / temperature))
    weights = exp(scores)
    intra_mask = (labels[:, None] == labels[None, :]).astype(np.float64)
    intra = vsum(mul(weights, Value(intra_mask)))
    inter = vsum(mul(weights, Value(1.0 - intra_mask)))
    return neg(log(div(intra, add(add(intra, inter), Value(eps)))))


def improvement_reward(mean_gap_now: float, mean_gap_prev: float, mean_prob: Value) -> Value:
    """(current mean loss gap - previous epoch's) x expected subgraph prob.

    Negative when explanations improved, acting as a reward; the first epoch
    passes mean_gap_prev = mean_gap_now and contributes zero.
    """
    return mul(mean_prob, Value(float(mean_gap_now - mean_gap_prev)))


def total_loss(parts: dict[str, Value], w_vae: float = 1.0, w_recon: float = 2.0,
               w_contrast: float = 0.5, w_reward: float = 1.0) -> tuple[Value, LossBreakdown]:
    """Weighted sum of all loss parts plus its breakdown record.

    ``parts`` must carry exactly the LossBreakdown part names. Regularizers
    (causal, hinge, size) enter unweighted.
    """
    missing = set(LossBreakdown.FIELDS) - set(parts)
    if missing:
        raise ValueError("missing loss parts: %s" % ", ".join(sorted(missing)))
    for name in LossBreakdown.FIELDS:
        if not np.isfinite(parts[name].data):
            raise FloatingPointError("non-finite loss part: %s" % name)
    total = add(mul(parts["vae"], Value(float(w_vae))),
                mul(add(parts["agreement"], parts["risk"]), Value(float(w_recon))))
    total = add(total, mul(parts["contrast"], Value(float(w_contrast))))
    total = add(total, mul(parts["reward"], Value(float(w_reward))))
    total = add(total, add(parts["causal"], add(parts["hinge"], parts["size"])))
    breakdown = LossBreakdown(
        vae=float(parts["vae"].data),
        agreement=float(parts["agreement"].data),
        risk=float(parts["risk"].data),
        contrast=float(parts["contrast"].data),
        reward=float(parts["reward"].data),
        causal=float(parts["causal"].data),
        hinge=float(parts["hinge"].data),
        size=float(parts["size"].data),
        total=float(total.data),
        w_vae=float(w_vae),
        w_recon=float(w_recon),
        w_contrast=float(w_contrast),
        w_reward=float(w_reward),
    )
    return total, breakdown
