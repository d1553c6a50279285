"""Explainer estimator: training loop, inference, persistence, isolation."""

import math

import numpy as np
import pytest
from sklearn.exceptions import NotFittedError

from envexplain.classifier import GraphClassifier
from envexplain.datagen import GenConfig, generate, split
from envexplain.environments import EnvironmentAnalyzer
from envexplain.explainer import SubgraphExplainer
from envexplain.graphs import validate_explanation


def make_graphs(num=150, seed=0):
    ds = split(generate(GenConfig(num_graphs=num,
                                  base_families=("path", "tree", "wheel"),
                                  seed=seed)), "none", seed=seed)
    return ds.split("train")


def small_explainer(classifier, analyzer, **overrides):
    params = dict(num_samples=2, epochs=2, batch_size=32, node_latent=4,
                  graph_latent=4, env_dim=4, hidden_dim=16, seed=0)
    params.update(overrides)
    return SubgraphExplainer(classifier, analyzer, **params)


@pytest.fixture(scope="module")
def world():
    train = make_graphs()
    clf = GraphClassifier(hidden_dim=16, num_layers=2, epochs=4, seed=0).fit(train)
    ana = EnvironmentAnalyzer(num_envs=3, seed=0).fit(train)
    exp = small_explainer(clf, ana).fit(train)
    return train, clf, ana, exp


@pytest.fixture(scope="module")
def tiny():
    graphs = make_graphs(num=70)[:40]
    clf = GraphClassifier(hidden_dim=12, num_layers=2, epochs=2, seed=1).fit(graphs)
    # 40 graphs are too few for dimension screening; the fallback is expected.
    with pytest.warns(UserWarning, match="falling back"):
        ana = EnvironmentAnalyzer(num_envs=2, seed=1).fit(graphs)
    return graphs, clf, ana


class TestFit:
    def test_log_has_one_row_per_epoch(self, world):
        _, _, _, exp = world
        assert len(exp.log_) == exp.epochs
        assert all(np.isfinite(row.total) for row in exp.log_)

    def test_log_records_weights(self, world):
        _, _, _, exp = world
        row = exp.log_[0]
        assert (row.w_vae, row.w_recon, row.w_contrast, row.w_reward) == (1.0, 2.0, 0.5, 1.0)

    def test_epoch_rows_keep_linearity(self, world):
        _, _, _, exp = world
        for row in exp.log_:
            expected = (row.w_vae * row.vae + row.w_recon * (row.agreement + row.risk)
                        + row.w_contrast * row.contrast + row.w_reward * row.reward
                        + row.causal + row.hinge + row.size)
            assert abs(row.total - expected) < 1e-9

    def test_first_epoch_reward_is_zero(self, world):
        _, _, _, exp = world
        assert exp.log_[0].reward == 0.0

    def test_parameters_registered(self, world):
        _, _, _, exp = world
        names = exp.store_.names()
        assert "env.structure" in names and "env.feature" in names
        assert any(n.startswith("nodevae.") for n in names)
        assert any(n.startswith("gvag.") for n in names)

    def test_seeded_rerun_identical(self, tiny):
        graphs, clf, ana = tiny
        kwargs = dict(num_samples=1, epochs=1, batch_size=20)
        a = small_explainer(clf, ana, **kwargs).fit(graphs)
        b = small_explainer(clf, ana, **kwargs).fit(graphs)
        for name in a.store_.names():
            np.testing.assert_array_equal(a.store_.array(name), b.store_.array(name))

    def test_divergence_restores_last_good(self, tiny):
        graphs, clf, ana = tiny
        exp = small_explainer(clf, ana, learning_rate=1e160, epochs=2,
                              batch_size=16, num_samples=1)
        with pytest.raises(RuntimeError, match="diverged"), \
                np.errstate(over="ignore", invalid="ignore"):
            exp.fit(graphs)
        for name in exp.store_.names():
            assert np.isfinite(exp.store_.array(name)).all()

    def test_requires_both_estimators(self):
        with pytest.raises(ValueError, match="required"):
            SubgraphExplainer().fit([])

    def test_requires_fitted_estimators(self, tiny):
        graphs, clf, _ = tiny
        with pytest.raises(NotFittedError):
            SubgraphExplainer(GraphClassifier(), EnvironmentAnalyzer()).fit(graphs)
        with pytest.raises(NotFittedError):
            SubgraphExplainer(clf, EnvironmentAnalyzer()).fit(graphs)

    def test_rejects_graphs_the_analyzer_never_saw(self, tiny):
        graphs, clf, ana = tiny
        with pytest.raises(ValueError, match="same training graphs"):
            small_explainer(clf, ana).fit(graphs[:10])

    def test_empty_training_set_rejected(self, tiny):
        _, clf, ana = tiny
        with pytest.raises(ValueError, match="at least one"):
            small_explainer(clf, ana).fit([])

    def test_works_without_environment_dims(self, tiny):
        graphs, clf, ana = tiny
        stripped = EnvironmentAnalyzer.__new__(EnvironmentAnalyzer)
        stripped.__dict__.update(ana.__dict__)
        stripped.dim_env_ = ()
        exp = small_explainer(clf, stripped, epochs=1, num_samples=1,
                              batch_size=20).fit(graphs)
        assert len(exp.log_) == 1


class TestExplain:
    def test_valid_and_deterministic(self, world):
        train, _, _, exp = world
        for g in train[:5]:
            a = exp.explain(g)
            b = exp.explain(g)
            validate_explanation(g, a)
            np.testing.assert_array_equal(a.edge_mask, b.edge_mask)
            assert a.log_prob == b.log_prob
            assert a.log_prob <= 0.0

    def test_edge_count_formula(self, world):
        train, _, _, exp = world
        for g in train[:5]:
            e = exp.explain(g)
            expected = min(g.m, max(math.ceil(exp.density * g.m), exp.min_edges))
            assert e.num_edges == expected

    def test_unseen_graph(self, world):
        _, _, _, exp = world
        fresh = make_graphs(num=30, seed=99)[0]
        e = exp.explain(fresh)
        validate_explanation(fresh, e)

    def test_predict_maps_explain(self, world):
        train, _, _, exp = world
        explanations = exp.predict(train[:3])
        assert len(explanations) == 3
        for g, e in zip(train[:3], explanations):
            np.testing.assert_array_equal(e.edge_mask, exp.explain(g).edge_mask)

    def test_unfitted_rejected(self, world):
        _, clf, ana, _ = world
        with pytest.raises(NotFittedError):
            small_explainer(clf, ana).explain(make_graphs(num=30, seed=5)[0])


class TestPersistence:
    def test_roundtrip(self, world, tmp_path):
        train, clf, _, exp = world
        exp.save(tmp_path / "ckpt")
        for name in ("manifest.json", "params.json", "envmodel.json"):
            assert (tmp_path / "ckpt" / name).exists()
        back = SubgraphExplainer.load(tmp_path / "ckpt", classifier=clf)
        for g in train[:4]:
            a, b = exp.explain(g), back.explain(g)
            np.testing.assert_array_equal(a.edge_mask, b.edge_mask)
            np.testing.assert_array_equal(a.node_mask, b.node_mask)
            assert a.log_prob == b.log_prob

    def test_hyperparams_survive(self, world, tmp_path):
        _, clf, _, exp = world
        exp.save(tmp_path / "ckpt")
        back = SubgraphExplainer.load(tmp_path / "ckpt", classifier=clf)
        assert back.density == exp.density
        assert back.num_samples == exp.num_samples
        assert back.seed == exp.seed

    def test_wrong_kind_rejected(self, world, tmp_path):
        _, clf, _, _ = world
        path = tmp_path / "bad"
        path.mkdir()
        (path / "manifest.json").write_text('{"kind": "something-else"}')
        with pytest.raises(ValueError, match="explainer checkpoint"):
            SubgraphExplainer.load(path, classifier=clf)

    def test_unfitted_save_rejected(self, world, tmp_path):
        _, clf, ana, _ = world
        with pytest.raises(NotFittedError):
            small_explainer(clf, ana).save(tmp_path / "nope")


class PredictOnlyProxy:
    """Exposes exactly the classifier surface the explainer may touch."""

    def __init__(self, clf):
        self._predict_one = clf.predict_one
        self.classes_ = clf.classes_
        self.hidden_dim = clf.hidden_dim

    def predict_one(self, g, reference_label=None):
        return self._predict_one(g, reference_label=reference_label)


class TestClassifierIsolation:
    def test_fit_and_explain_through_predict_surface_only(self, tiny):
        graphs, clf, ana = tiny
        proxy = PredictOnlyProxy(clf)
        exp = small_explainer(proxy, ana, epochs=1, num_samples=1,
                              batch_size=20).fit(graphs)
        e = exp.explain(graphs[0])
        validate_explanation(graphs[0], e)
