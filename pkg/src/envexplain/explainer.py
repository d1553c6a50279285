"""Explainer estimator: trains the generators against a frozen classifier.

The explainer composes a fitted GraphClassifier (used only through its
single-graph prediction surface) and a fitted EnvironmentAnalyzer. Training
alternates, per batch: environment lookup, node and graph variational
encoding, existence probabilities, stochastic subgraph samples, and one
optimizer step over the full loss stack. Explaining a graph is deterministic:
latents collapse to their means and the edge-first reconstruction picks the
top-scoring edges.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from .environments import EnvironmentAnalyzer
from .graphs import Explanation, Graph, complement_graph, induced_subgraph
from .gvag import (
    GraphVariationalGenerator,
    LossBreakdown,
    agreement_loss,
    causal_alignment,
    complement_hinge,
    contrastive_loss,
    freeze_probs,
    geometric_prob,
    improvement_reward,
    masked_log_prob,
    risk_loss,
    size_penalty,
    total_loss,
)
from .nodevae import NodeVAE, env_embedding, env_tables_init
from .sampling import ReconConfig, prior_node_count, reconstruct_edge_first, sample_subgraph_train
from .tensor import Adam, ParamStore, Tape, Value, add, load_params, mul, read_checkpoint_meta, save_params, concat

__all__ = ["SubgraphExplainer", "MANIFEST_NAME"]

MANIFEST_NAME = "manifest.json"
PARAMS_NAME = "params.json"
ENV_MODEL_NAME = "envmodel.json"

HYPER_NAMES = (
    "num_samples", "epochs", "batch_size", "learning_rate", "weight_decay",
    "node_latent", "graph_latent", "env_dim", "hidden_dim", "w_vae", "w_recon",
    "w_contrast", "w_reward", "w_agreement", "w_risk", "w_mse", "w_kl",
    "density", "max_iter",
    "min_edges", "prior_fraction", "prior_min", "prior_max", "temperature",
    "seed",
)


@dataclass(frozen=True)
class _GraphView:
    """Frozen per-graph context captured once before training."""

    g: Graph
    y: int
    loss_g: float
    node_h: np.ndarray
    graph_h: np.ndarray
    env_s: int
    env_f: int
    causal_nodes: np.ndarray
    causal_edges: np.ndarray
    prior: int


class SubgraphExplainer(BaseEstimator):
    """Variational subgraph explainer for a frozen graph classifier.

    Parameters
    ----------
    classifier : fitted GraphClassifier
        Target model; only its single-graph prediction surface is touched.
    analyzer : fitted EnvironmentAnalyzer
        Environment labels, environment feature dimensions, and causal
        partitions. Must have been fitted on the same graphs passed to fit.
    num_samples : int
        Stochastic subgraph samples per graph per step.
    epochs, batch_size, learning_rate, weight_decay : training loop knobs.
    node_latent, graph_latent, env_dim, hidden_dim : generator widths.
    w_vae, w_recon, w_contrast, w_reward : loss weights; the alignment,
        hinge, and size regularizers enter unweighted.
    w_agreement, w_risk : extra factors on the two reconstruction terms
        inside the w_recon sum; zeroing one disables that term alone.
    w_mse, w_kl : node autoencoder loss weights.
    density, max_iter, min_edges : reconstruction knobs.
    prior_fraction, prior_min, prior_max : expected explanation size.
    temperature : contrastive similarity temperature.
    seed : drives parameter init, batching, sampling, and perturbations.
    """

    def __init__(self, classifier=None, analyzer=None, *, num_samples=4,
                 epochs=10, batch_size=64, learning_rate=0.005,
                 weight_decay=1e-4, node_latent=16, graph_latent=16,
                 env_dim=16, hidden_dim=64, w_vae=1.0, w_recon=2.0,
                 w_contrast=0.5, w_reward=1.0, w_agreement=1.0, w_risk=1.0,
                 w_mse=1.0, w_kl=0.1,
                 density=0.1, max_iter=20, min_edges=4, prior_fraction=0.3,
                 prior_min=5, prior_max=7, temperature=0.5, seed=0):
        self.classifier = classifier
        self.analyzer = analyzer
        self.num_samples = num_samples
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.weight_decay = weight_decay
        self.node_latent = node_latent
        self.graph_latent = graph_latent
        self.env_dim = env_dim
        self.hidden_dim = hidden_dim
        self.w_vae = w_vae
        self.w_recon = w_recon
        self.w_contrast = w_contrast
        self.w_reward = w_reward
        self.w_agreement = w_agreement
        self.w_risk = w_risk
        self.w_mse = w_mse
        self.w_kl = w_kl
        self.density = density
        self.max_iter = max_iter
        self.min_edges = min_edges
        self.prior_fraction = prior_fraction
        self.prior_min = prior_min
        self.prior_max = prior_max
        self.temperature = temperature
        self.seed = seed

    # -- construction helpers -------------------------------------------

    def _validate(self):
        if self.classifier is None or self.analyzer is None:
            raise ValueError("both classifier and analyzer are required")
        if not hasattr(self.classifier, "classes_"):
            raise NotFittedError("classifier is not fitted")
        if not hasattr(self.analyzer, "causal_node_masks_"):
            raise NotFittedError("environment analyzer is not fitted")
        for name in ("num_samples", "epochs", "batch_size", "max_iter",
                     "min_edges", "prior_min", "prior_max"):
            if int(getattr(self, name)) < 1:
                raise ValueError("%s must be at least 1" % name)
        if not 0.0 < self.density <= 1.0:
            raise ValueError("density must lie in (0, 1]")
        if self.learning_rate <= 0.0 or self.temperature <= 0.0:
            raise ValueError("learning_rate and temperature must be positive")
        if self.w_agreement < 0.0 or self.w_risk < 0.0:
            raise ValueError("w_agreement and w_risk must be nonnegative")

    def _build(self, h_dim: int, num_envs: int):
        self.h_dim_ = int(h_dim)
        self.num_envs_ = int(num_envs)
        self.store_ = ParamStore(seed=self.seed)
        env_tables_init(self.store_, num_envs=self.num_envs_, env_dim=self.env_dim)
        self.vae_ = NodeVAE(self.store_, h_dim=self.h_dim_,
                            latent_dim=self.node_latent, env_dim=self.env_dim,
                            hidden_dim=self.hidden_dim)
        self.gen_ = GraphVariationalGenerator(self.store_, h_dim=self.h_dim_,
                                              node_latent=self.node_latent,
                                              graph_latent=self.graph_latent,
                                              env_dim=self.env_dim,
                                              hidden_dim=self.hidden_dim)

    def _recon_config(self, g: Graph) -> ReconConfig:
        return ReconConfig(
            max_nodes=prior_node_count(g.n, self.prior_fraction,
                                       self.prior_min, self.prior_max),
            density=self.density, max_iter=self.max_iter,
            min_edges=self.min_edges)

    def _views(self, graphs: list[Graph]) -> list[_GraphView]:
        analyzer = self.analyzer
        if len(analyzer.causal_node_masks_) != len(graphs):
            raise ValueError("analyzer was fitted on %d graphs, got %d; fit it "
                             "on the same training graphs"
                             % (len(analyzer.causal_node_masks_), len(graphs)))
        views = []
        for i, g in enumerate(graphs):
            if g.n == 0:
                raise ValueError("training graphs must be non-empty")
            node_mask = analyzer.causal_node_masks_[i]
            edge_mask = analyzer.causal_edge_masks_[i]
            if node_mask.shape != (g.n,) or edge_mask.shape != (g.m,):
                raise ValueError("analyzer masks do not match graph %d; fit the "
                                 "analyzer on the same training graphs" % i)
            pred = self.classifier.predict_one(g)
            views.append(_GraphView(
                g=g, y=int(pred.label),
                loss_g=float(-np.log(pred.class_probs.max())),
                node_h=pred.node_embeddings, graph_h=pred.graph_embedding,
                env_s=int(analyzer.structure_labels_[i]),
                env_f=int(analyzer.feature_labels_[i]),
                causal_nodes=node_mask.astype(np.float64),
                causal_edges=edge_mask.astype(np.float64),
                prior=prior_node_count(g.n, self.prior_fraction,
                                       self.prior_min, self.prior_max)))
        return views

    def _perturbed_embedding(self, view: _GraphView, views: list[_GraphView],
                             batch: np.ndarray, rng) -> np.ndarray:
        """Graph embedding after swapping environment feature columns with
        rows donated by a batch graph under a different feature environment."""
        dims = list(self.analyzer.dim_env_)
        donors = [j for j in batch if views[j].env_f != view.env_f]
        if not donors:
            donors = [j for j in batch if views[j].g is not view.g]
        if not dims or not donors:
            return view.graph_h
        donor = views[int(rng.choice(np.asarray(donors)))].g
        x = np.array(view.g.x)
        pick = rng.integers(0, donor.n, size=view.g.n)
        x[:, dims] = donor.x[pick][:, dims]
        perturbed = Graph(n=view.g.n, edges=view.g.edges, x=x,
                          node_types=view.g.node_types, label=view.g.label)
        return self.classifier.predict_one(perturbed).graph_embedding

    # -- training ---------------------------------------------------------

    def _batch_parts(self, tape: Tape, batch: np.ndarray,
                     views: list[_GraphView], rng,
                     prev_gap: float | None):
        vae_terms, z_graphs, z_perturbed, labels = [], [], [], []
        log_probs, matched, gaps, counts = [], [], [], []
        comp_losses, expl_losses, sizes, priors = [], [], [], []
        causal_rows = []
        for j in batch:
            view = views[j]
            g = view.g
            e_f = env_embedding(self.store_, tape, "feature", view.env_f)
            e_s = env_embedding(self.store_, tape, "structure", view.env_s)
            e_g = mul(add(e_s, e_f), Value(0.5))
            vloss, z_nodes = self.vae_.loss(
                tape, view.node_h, e_f,
                rng.normal(size=(g.n, self.node_latent)),
                w_mse=self.w_mse, w_kl=self.w_kl)
            vae_terms.append(vloss)
            h_g = Value(view.graph_h.reshape(1, -1))
            z_g = self.gen_.sample_latent(tape, h_g, e_g,
                                          rng.normal(size=(1, self.graph_latent)))
            node_p, edge_p = self.gen_.probs(tape, z_g, z_nodes, e_g, g)
            pm = freeze_probs(node_p, edge_p)
            cfg = self._recon_config(g)
            for _ in range(self.num_samples):
                ex = sample_subgraph_train(pm, g, cfg, rng)
                part = self.classifier.predict_one(induced_subgraph(g, ex),
                                                   reference_label=view.y)
                rest = self.classifier.predict_one(complement_graph(g, ex),
                                                   reference_label=view.y)
                log_probs.append(masked_log_prob(node_p, edge_p, ex))
                matched.append(int(part.label) == view.y)
                gaps.append(part.loss - view.loss_g)
                counts.append(ex.num_nodes + ex.num_edges)
                comp_losses.append(rest.loss)
                expl_losses.append(part.loss)
                sizes.append(ex.num_nodes)
                priors.append(view.prior)
            reg_node, reg_edge = self.gen_.logits(tape, z_g, z_nodes, e_g, g,
                                                  regularizer=True)
            causal_rows.append((reg_node, reg_edge, view.causal_nodes,
                                view.causal_edges))
            h_pert = self._perturbed_embedding(view, views, batch, rng)
            z_graphs.append(z_g)
            z_perturbed.append(self.gen_.sample_latent(
                tape, Value(h_pert.reshape(1, -1)), e_g,
                rng.normal(size=(1, self.graph_latent))))
            labels.append(view.y)

        scale = Value(1.0 / len(vae_terms))
        vae_total = vae_terms[0]
        for term in vae_terms[1:]:
            vae_total = add(vae_total, term)
        mean_prob = geometric_prob(log_probs[0], counts[0])
        for lp, c in zip(log_probs[1:], counts[1:]):
            mean_prob = add(mean_prob, geometric_prob(lp, c))
        mean_prob = mul(mean_prob, Value(1.0 / len(log_probs)))
        gap_now = float(np.mean(gaps))
        parts = {
            "vae": mul(vae_total, scale),
            "agreement": mul(agreement_loss(log_probs, matched),
                             Value(float(self.w_agreement))),
            "risk": mul(risk_loss(gaps, log_probs, counts),
                        Value(float(self.w_risk))),
            "contrast": contrastive_loss(concat(z_graphs, axis=0),
                                         concat(z_perturbed, axis=0),
                                         np.asarray(labels),
                                         temperature=self.temperature),
            "reward": improvement_reward(
                gap_now, gap_now if prev_gap is None else prev_gap, mean_prob),
            "causal": causal_alignment(causal_rows),
            "hinge": complement_hinge(comp_losses, expl_losses),
            "size": size_penalty(gaps, sizes, priors),
        }
        total, breakdown = total_loss(parts, w_vae=self.w_vae,
                                      w_recon=self.w_recon,
                                      w_contrast=self.w_contrast,
                                      w_reward=self.w_reward)
        return total, breakdown, gap_now

    def fit(self, X, y=None):
        """Train the explainer on the analyzer's fit graphs.

        Emits one aggregated LossBreakdown per epoch into ``log_``. A
        non-finite loss aborts training, restores the parameters of the last
        finished epoch, and raises RuntimeError.
        """
        self._validate()
        graphs = list(X)
        if not graphs:
            raise ValueError("need at least one training graph")
        self._build(h_dim=self.classifier.hidden_dim,
                    num_envs=self.analyzer.num_envs)
        views = self._views(graphs)
        rng = np.random.default_rng(self.seed)
        optimizer = Adam(self.store_, learning_rate=self.learning_rate,
                         weight_decay=self.weight_decay)
        last_good = self.store_.snapshot()
        self.log_ = []
        prev_gap: float | None = None
        for _ in range(self.epochs):
            order = rng.permutation(len(views))
            epoch_rows, epoch_gaps = [], []
            try:
                for start in range(0, len(order), self.batch_size):
                    batch = order[start:start + self.batch_size]
                    tape = Tape()
                    total, breakdown, gap_now = self._batch_parts(
                        tape, batch, views, rng, prev_gap)
                    tape.backward(total)
                    optimizer.step(self.store_.gradients(tape))
                    epoch_rows.append(breakdown)
                    epoch_gaps.append(gap_now)
            except FloatingPointError as err:
                self.store_.restore(last_good)
                raise RuntimeError(
                    "training diverged (%s); parameters restored to the last "
                    "finished epoch" % err) from err
            prev_gap = float(np.mean(epoch_gaps))
            last_good = self.store_.snapshot()
            self.log_.append(_mean_breakdown(epoch_rows))
        return self

    # -- inference ----------------------------------------------------------

    def _check_fitted(self):
        if not hasattr(self, "store_"):
            raise NotFittedError("explainer is not fitted; call fit first")

    def _prob_map(self, g: Graph):
        pred = self.classifier.predict_one(g)
        env_s, env_f = self.analyzer.infer_env(g)
        tape = Tape()
        e_f = env_embedding(self.store_, tape, "feature", env_f)
        e_s = env_embedding(self.store_, tape, "structure", env_s)
        e_g = mul(add(e_s, e_f), Value(0.5))
        e_rows = Value(np.broadcast_to(e_f.data, (g.n, self.env_dim)).copy())
        z_nodes, _ = self.vae_.encode(tape, Value(pred.node_embeddings), e_rows)
        z_g, _ = self.gen_.encode(tape, Value(pred.graph_embedding.reshape(1, -1)), e_g)
        node_p, edge_p = self.gen_.probs(tape, z_g, z_nodes, e_g, g)
        return freeze_probs(node_p, edge_p)

    def explain(self, g: Graph) -> Explanation:
        """Deterministic explanation: latents at their means, edge-first pick."""
        self._check_fitted()
        if g.n == 0:
            return Explanation(node_mask=np.zeros(0, dtype=bool),
                               edge_mask=np.zeros(0, dtype=bool), log_prob=0.0)
        return reconstruct_edge_first(self._prob_map(g), g, self._recon_config(g))

    def predict(self, X):
        """One Explanation per graph."""
        return [self.explain(g) for g in X]

    # -- persistence ---------------------------------------------------------

    def save(self, path):
        """Write params, environment model, and a manifest into a directory."""
        self._check_fitted()
        path = Path(path)
        path.mkdir(parents=True, exist_ok=True)
        meta = {"kind": "explainer-params", "h_dim": self.h_dim_,
                "num_envs": self.num_envs_}
        save_params(self.store_, path / PARAMS_NAME, meta=meta)
        self.analyzer.save(path / ENV_MODEL_NAME)
        manifest = {
            "kind": "explainer",
            "version": 1,
            "files": {"params": PARAMS_NAME, "env_model": ENV_MODEL_NAME},
            "hyperparams": {name: getattr(self, name) for name in HYPER_NAMES},
            "epochs_logged": len(getattr(self, "log_", [])),
        }
        with open(path / MANIFEST_NAME, "w") as fh:
            json.dump(manifest, fh, indent=2, sort_keys=True)
            fh.write("\n")

    @classmethod
    def load(cls, path, classifier):
        """Rebuild a fitted explainer from a checkpoint directory.

        The frozen classifier is not part of the checkpoint and must be
        supplied by the caller.
        """
        path = Path(path)
        with open(path / MANIFEST_NAME) as fh:
            manifest = json.load(fh)
        if manifest.get("kind") != "explainer":
            raise ValueError("not an explainer checkpoint: %r" % (manifest.get("kind"),))
        analyzer = EnvironmentAnalyzer.load(path / manifest["files"]["env_model"])
        model = cls(classifier=classifier, analyzer=analyzer,
                    **manifest["hyperparams"])
        meta = read_checkpoint_meta(path / manifest["files"]["params"])
        if meta.get("kind") != "explainer-params":
            raise ValueError("unexpected parameter file kind: %r" % (meta.get("kind"),))
        model._build(h_dim=meta["h_dim"], num_envs=meta["num_envs"])
        load_params(model.store_, path / manifest["files"]["params"])
        model.log_ = []
        return model


def _mean_breakdown(rows: list[LossBreakdown]) -> LossBreakdown:
    def mean(field):
        return float(np.mean([getattr(r, field) for r in rows]))

    return LossBreakdown(
        vae=mean("vae"), agreement=mean("agreement"), risk=mean("risk"),
        contrast=mean("contrast"), reward=mean("reward"), causal=mean("causal"),
        hinge=mean("hinge"), size=mean("size"), total=mean("total"),
        w_vae=rows[0].w_vae, w_recon=rows[0].w_recon,
        w_contrast=rows[0].w_contrast, w_reward=rows[0].w_reward)
