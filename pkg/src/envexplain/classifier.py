"""The frozen graph classifier under explanation.

A small message-passing network: each layer concatenates a node's state with
the mean of its neighbors' states and applies a linear map plus ReLU; mean
pooling and a linear head produce class logits. Explainers are restricted to
the prediction record this module returns: probabilities, loss, and the last
layer's embeddings. No gradients or internals cross that boundary.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from .graphs import Graph, adjacency_mean
from .tensor import (
    Adam,
    ParamStore,
    Tape,
    Value,
    add,
    concat,
    load_params,
    log_softmax,
    matmul,
    mul,
    neg,
    read_checkpoint_meta,
    relu,
    save_params,
    transpose,
    vsum,
)

__all__ = ["Prediction", "GraphClassifier"]


@dataclass(frozen=True)
class Prediction:
    """Everything an explainer may see about one model call.

    class_probs sums to one; label is the predicted class value with argmax
    ties resolved to the lowest index; loss is the cross-entropy against the
    reference label; node_embeddings and graph_embedding come from the last
    message-passing layer.
    """

    class_probs: np.ndarray
    label: int
    loss: float
    node_embeddings: np.ndarray
    graph_embedding: np.ndarray


def _batch_arrays(graphs: list[Graph]):
    """Disjoint-union adjacency, stacked features, and mean-pool matrix."""
    n_tot = sum(g.n for g in graphs)
    d = graphs[0].d
    x = np.zeros((n_tot, d))
    a = np.zeros((n_tot, n_tot))
    p = np.zeros((len(graphs), n_tot))
    off = 0
    for bi, g in enumerate(graphs):
        if g.n:
            x[off:off + g.n] = g.x
            a[off:off + g.n, off:off + g.n] = adjacency_mean(g)
            p[bi, off:off + g.n] = 1.0 / g.n
        off += g.n
    return x, a, p


class GraphClassifier(BaseEstimator):
    """Mean-aggregation message-passing classifier over whole graphs.

    Parameters
    ----------
    hidden_dim : int
        Width of every message-passing layer.
    num_layers : int
        Message-passing depth.
    learning_rate, weight_decay, epochs, batch_size : training knobs.
    seed : int
        Controls initialization and batch order; same seed, same model.
    """

    def __init__(self, hidden_dim=64, num_layers=3, learning_rate=0.005,
                 weight_decay=1e-4, epochs=10, batch_size=64, seed=0):
        self.hidden_dim = hidden_dim
        self.num_layers = num_layers
        self.learning_rate = learning_rate
        self.weight_decay = weight_decay
        self.epochs = epochs
        self.batch_size = batch_size
        self.seed = seed

    def _init_store(self, feature_dim: int, num_classes: int) -> ParamStore:
        store = ParamStore(seed=self.seed)
        d_in = feature_dim
        for layer in range(self.num_layers):
            store.add("layer%d.w" % layer, (self.hidden_dim, 2 * d_in))
            store.add_zeros("layer%d.b" % layer, (self.hidden_dim,))
            d_in = self.hidden_dim
        store.add("head.w", (num_classes, d_in))
        store.add_zeros("head.b", (num_classes,))
        return store

    def _forward_tape(self, tape: Tape, x, a, p):
        h = Value(x, tape)
        av = Value(a, tape)
        for layer in range(self.num_layers):
            nbr = matmul(av, h)
            cat = concat([h, nbr], axis=1)
            w = self.store_.use(tape, "layer%d.w" % layer)
            b = self.store_.use(tape, "layer%d.b" % layer)
            h = relu(add(matmul(cat, transpose(w)), b))
        hg = matmul(Value(p, tape), h)
        logits = add(matmul(hg, transpose(self.store_.use(tape, "head.w"))),
                     self.store_.use(tape, "head.b"))
        return logits

    def _forward_np(self, x, a, p):
        h = x
        for layer in range(self.num_layers):
            cat = np.concatenate([h, a @ h], axis=1)
            w = self.store_.array("layer%d.w" % layer)
            b = self.store_.array("layer%d.b" % layer)
            h = np.maximum(cat @ w.T + b, 0.0)
        hg = p @ h
        logits = hg @ self.store_.array("head.w").T + self.store_.array("head.b")
        return h, hg, logits

    def fit(self, X, y=None):
        """Train on a list of graphs; labels default to each graph's own.

        Returns self with a frozen parameter store; raises on a non-finite
        batch loss. Zero epochs leaves the seeded initialization untouched.
        """
        graphs = list(X)
        if not graphs:
            raise ValueError("training set is empty")
        labels = np.asarray([g.label for g in graphs] if y is None else list(y))
        if labels.shape != (len(graphs),):
            raise ValueError("one label per graph required")
        d = graphs[0].d
        if any(g.d != d for g in graphs):
            raise ValueError("inconsistent feature dimensions")
        self.classes_ = np.unique(labels)
        self.feature_dim_ = d
        y_idx = np.searchsorted(self.classes_, labels)
        self.store_ = self._init_store(d, len(self.classes_))
        self.fitted_ = True
        opt = Adam(self.store_, learning_rate=self.learning_rate,
                   weight_decay=self.weight_decay)
        rng = np.random.default_rng(self.seed)
        self.training_log_ = []
        for epoch in range(self.epochs):
            order = rng.permutation(len(graphs))
            losses = []
            for start in range(0, len(order), self.batch_size):
                batch = order[start:start + self.batch_size]
                x, a, p = _batch_arrays([graphs[i] for i in batch])
                onehot = np.zeros((len(batch), len(self.classes_)))
                onehot[np.arange(len(batch)), y_idx[batch]] = 1.0
                tape = Tape()
                logits = self._forward_tape(tape, x, a, p)
                picked = vsum(mul(log_softmax(logits), Value(onehot, tape)))
                loss = mul(neg(picked), Value(np.asarray(1.0 / len(batch)), tape))
                value = loss.item()
                if not np.isfinite(value):
                    raise RuntimeError("non-finite training loss at epoch %d" % epoch)
                tape.backward(loss)
                opt.step(self.store_.gradients(tape))
                losses.append(value)
            acc = self.score(graphs, labels)
            self.training_log_.append((epoch, float(np.mean(losses)), acc))
        return self

    def _check_fitted(self):
        if not getattr(self, "fitted_", False):
            raise NotFittedError("classifier is not fitted; call fit first")

    def predict_one(self, g: Graph, reference_label=None) -> Prediction:
        """Frozen single-graph inference: the whole explainer-facing surface.

        An empty graph gets the uniform distribution with zero embeddings.
        """
        self._check_fitted()
        num_classes = len(self.classes_)
        ref = g.label if reference_label is None else reference_label
        pos = np.searchsorted(self.classes_, ref)
        if pos >= num_classes or self.classes_[pos] != ref:
            raise ValueError("reference label %r was not seen in training" % (ref,))
        if g.n == 0:
            probs = np.full(num_classes, 1.0 / num_classes)
            return Prediction(
                class_probs=probs,
                label=int(self.classes_[0]),
                loss=float(np.log(num_classes)),
                node_embeddings=np.zeros((0, self.hidden_dim)),
                graph_embedding=np.zeros(self.hidden_dim),
            )
        if g.d != self.feature_dim_:
            raise ValueError("feature dimension %d does not match the model's %d" % (g.d, self.feature_dim_))
        x, a, p = _batch_arrays([g])
        h, hg, logits = self._forward_np(x, a, p)
        z = logits[0] - logits[0].max()
        probs = np.exp(z)
        probs /= probs.sum()
        return Prediction(
            class_probs=probs,
            label=int(self.classes_[int(np.argmax(probs))]),
            loss=float(-np.log(probs[pos])),
            node_embeddings=h,
            graph_embedding=hg[0],
        )

    def predict_proba(self, X):
        self._check_fitted()
        return np.stack([self.predict_one(g, reference_label=self.classes_[0]).class_probs for g in X])

    def predict(self, X):
        proba = self.predict_proba(X)
        return self.classes_[np.argmax(proba, axis=1)]

    def score(self, X, y=None):
        graphs = list(X)
        labels = np.asarray([g.label for g in graphs] if y is None else list(y))
        return float(np.mean(self.predict(graphs) == labels))

    def save(self, path):
        self._check_fitted()
        save_params(self.store_, path, meta={
            "kind": "graph-classifier",
            "params": self.get_params(),
            "classes": [int(c) for c in self.classes_],
            "feature_dim": self.feature_dim_,
        })

    @classmethod
    def load(cls, path):
        meta = read_checkpoint_meta(path)
        if meta.get("kind") != "graph-classifier":
            raise ValueError("checkpoint is not a graph-classifier: %r" % meta.get("kind"))
        model = cls(**meta["params"])
        model.classes_ = np.asarray(meta["classes"])
        model.feature_dim_ = int(meta["feature_dim"])
        model.store_ = model._init_store(model.feature_dim_, len(model.classes_))
        load_params(model.store_, path)
        model.training_log_ = []
        model.fitted_ = True
        return model
