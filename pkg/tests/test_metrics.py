"""Explanation metrics: closed-form oracles, baseline budgets, report I/O."""

import csv
import json
import math
from types import SimpleNamespace

import numpy as np
import pytest

from envexplain.classifier import GraphClassifier
from envexplain.datagen import GenConfig, generate, split
from envexplain.graphs import (
    Explanation,
    Graph,
    MotifTruth,
    complement_graph,
    induced_subgraph,
    validate_explanation,
)
from envexplain.metrics import (
    ROW_FIELDS,
    SUMMARY_FIELDS,
    GraphMetrics,
    MetricsReport,
    density,
    evaluate,
    fidelity,
    gef,
    random_edge_explanation,
    top_degree_explanation,
    write_reports,
)


def path_graph(n, label=0):
    edges = np.array([[i, i + 1] for i in range(n - 1)], dtype=np.int64)
    return Graph(n=n, edges=edges, x=np.zeros((n, 4)),
                 node_types=np.zeros(n, dtype=np.int64), label=label)


def star_graph(n):
    edges = np.array([[0, i] for i in range(1, n)], dtype=np.int64)
    return Graph(n=n, edges=edges, x=np.zeros((n, 4)),
                 node_types=np.zeros(n, dtype=np.int64), label=0)


def mask_explanation(g, edge_indices):
    edge_mask = np.zeros(g.m, dtype=bool)
    edge_mask[list(edge_indices)] = True
    node_mask = np.zeros(g.n, dtype=bool)
    picked = g.edges[edge_mask]
    if picked.size:
        node_mask[picked[:, 0]] = True
        node_mask[picked[:, 1]] = True
    return Explanation(node_mask=node_mask, edge_mask=edge_mask, log_prob=0.0)


class EdgeCountModel:
    """Label 1 iff the graph has at least ``threshold`` edges; one-hot probs."""

    def __init__(self, threshold):
        self.threshold = threshold
        self.classes_ = np.array([0, 1])

    def predict_one(self, g):
        label = int(g.m >= self.threshold)
        probs = np.zeros(2)
        probs[label] = 1.0
        return SimpleNamespace(label=label, class_probs=probs)


class ProbByNodesModel:
    """Fixed probability table keyed by node count."""

    def __init__(self, table):
        self.table = table

    def predict_one(self, g):
        probs = np.asarray(self.table[g.n], dtype=float)
        return SimpleNamespace(label=int(probs.argmax()), class_probs=probs)


class PrefixExplainer:
    """Keeps the first quarter of the edges; enough structure for evaluate()."""

    def explain(self, g):
        k = min(g.m, max(math.ceil(0.25 * g.m), 2))
        return mask_explanation(g, range(k))


class TestFidelity:
    def test_hand_oracle_edge_count(self):
        # base m=5 -> label 1; kept m=1 -> 0 (flip); complement m=4 -> 1 (no flip)
        g = path_graph(6, label=1)
        e = mask_explanation(g, [0])
        fid_plus, fid_minus = fidelity(EdgeCountModel(threshold=3), g, e)
        assert fid_plus == 0
        assert fid_minus == 1

    def test_hand_oracle_both_flip(self):
        # base m=6 -> label 1; kept m=3 and complement m=3 both fall below 4
        g = path_graph(7, label=1)
        e = mask_explanation(g, [0, 2, 4])
        fid_plus, fid_minus = fidelity(EdgeCountModel(threshold=4), g, e)
        assert fid_plus == 1
        assert fid_minus == 1

    def test_full_explanation_keeps_label(self):
        g = path_graph(6)
        e = mask_explanation(g, range(g.m))
        _, fid_minus = fidelity(EdgeCountModel(threshold=3), g, e)
        assert fid_minus == 0

    def test_matches_direct_calls(self):
        model = EdgeCountModel(threshold=4)
        g = path_graph(8, label=1)
        e = mask_explanation(g, [1, 2])
        base = model.predict_one(g).label
        kept = model.predict_one(induced_subgraph(g, e)).label
        rest = model.predict_one(complement_graph(g, e)).label
        assert fidelity(model, g, e) == (int(rest != base), int(kept != base))


class TestGef:
    def test_worked_example(self):
        # KL((1,0) || (.5,.5)) = ln 2, so 1 - exp(-ln 2) = 0.5
        g = path_graph(4)
        e = mask_explanation(g, [0])
        model = ProbByNodesModel({4: (1.0, 0.0), 2: (0.5, 0.5)})
        assert gef(model, g, e) == pytest.approx(0.5, abs=1e-9)

    def test_identical_distributions_zero(self):
        g = path_graph(4)
        e = mask_explanation(g, [0])
        model = ProbByNodesModel({4: (0.3, 0.7), 2: (0.3, 0.7)})
        assert gef(model, g, e) == pytest.approx(0.0, abs=1e-12)

    def test_bounded_even_with_zero_prob(self):
        g = path_graph(4)
        e = mask_explanation(g, [0])
        model = ProbByNodesModel({4: (1.0, 0.0), 2: (0.0, 1.0)})
        value = gef(model, g, e)
        assert 0.0 <= value < 1.0

    def test_zero_prob_in_base_ignored(self):
        g = path_graph(4)
        e = mask_explanation(g, [0])
        model = ProbByNodesModel({4: (0.0, 1.0), 2: (0.5, 0.5)})
        assert gef(model, g, e) == pytest.approx(1.0 - math.exp(-math.log(2.0)), abs=1e-12)


class TestDensity:
    def test_fractions(self):
        g = path_graph(5)
        e = mask_explanation(g, [0, 1])
        rho_v, rho_e = density(g, e)
        assert rho_v == pytest.approx(3 / 5)
        assert rho_e == pytest.approx(2 / 4)

    def test_empty_graph_zero(self):
        g = Graph(n=3, edges=np.zeros((0, 2), dtype=np.int64), x=np.zeros((3, 4)),
                  node_types=np.zeros(3, dtype=np.int64), label=0)
        e = Explanation(node_mask=np.zeros(3, dtype=bool),
                        edge_mask=np.zeros(0, dtype=bool), log_prob=0.0)
        assert density(g, e) == (0.0, 0.0)


class TestBaselines:
    def test_random_budget_and_closure(self):
        rng = np.random.default_rng(0)
        g = path_graph(12)
        for k in (0, 1, 4, 11, 50):
            e = random_edge_explanation(g, k, rng)
            validate_explanation(g, e)
            assert e.num_edges == min(k, g.m)

    def test_random_seeded_deterministic(self):
        g = path_graph(12)
        a = random_edge_explanation(g, 4, np.random.default_rng(7))
        b = random_edge_explanation(g, 4, np.random.default_rng(7))
        assert np.array_equal(a.edge_mask, b.edge_mask)

    def test_top_degree_prefers_hub(self):
        g = star_graph(6)
        extra = np.vstack([g.edges, [[1, 2]]])
        g = Graph(n=6, edges=extra, x=np.zeros((6, 4)),
                  node_types=np.zeros(6, dtype=np.int64), label=0)
        e = top_degree_explanation(g, 2)
        validate_explanation(g, e)
        # hub edges to nodes 1 and 2 score highest (5+2); ties break low index
        assert set(np.flatnonzero(e.edge_mask)) == {0, 1}

    def test_top_degree_tie_breaks_low_index(self):
        g = path_graph(7)
        e = top_degree_explanation(g, 2)
        # interior edges all tie at 2+2; indices 1 and 2 win
        assert set(np.flatnonzero(e.edge_mask)) == {1, 2}

    def test_endpoint_masks_only(self):
        g = path_graph(10)
        e = top_degree_explanation(g, 3)
        picked = g.edges[e.edge_mask]
        expected = np.zeros(g.n, dtype=bool)
        expected[picked.ravel()] = True
        assert np.array_equal(e.node_mask, expected)


@pytest.fixture(scope="module")
def world():
    dataset = split(generate(GenConfig(num_graphs=60, base_families=("path", "tree"),
                                       seed=3)), "none")
    train = dataset.split("train")
    test = dataset.split("test")
    model = GraphClassifier(hidden_dim=8, num_layers=2, epochs=2, seed=0)
    model.fit(train)
    return SimpleNamespace(train=train, test=test, model=model,
                           explainer=PrefixExplainer())


class TestEvaluate:
    def test_methods_present(self, world):
        reports = evaluate(world.explainer, world.test, world.model, seed=0,
                           time_calls=5)
        assert set(reports) == {"explainer", "random-edges", "top-degree-edges"}
        for r in reports.values():
            assert r.num_graphs == len(world.test)
            assert len(r.rows) == len(world.test)

    def test_empty_split_rejected(self, world):
        with pytest.raises(ValueError, match="empty"):
            evaluate(world.explainer, [], world.model)

    def test_baseline_budgets_match(self, world):
        reports = evaluate(world.explainer, world.test, world.model, seed=0,
                           time_calls=1)
        target = reports["explainer"].rho_e
        assert abs(reports["random-edges"].rho_e - target) <= 0.02
        assert abs(reports["top-degree-edges"].rho_e - target) <= 0.02
        for name in ("random-edges", "top-degree-edges"):
            for row, ref in zip(reports[name].rows, reports["explainer"].rows):
                assert row.num_edges == ref.num_edges

    def test_baseline_closure(self, world):
        reports = evaluate(world.explainer, world.test, world.model, seed=0,
                           time_calls=1)
        for name in ("random-edges", "top-degree-edges"):
            for g, row in zip(world.test, reports[name].rows):
                assert row.num_nodes <= g.n
                assert row.num_edges <= g.m

    def test_means_match_rows(self, world):
        reports = evaluate(world.explainer, world.test, world.model, seed=0,
                           time_calls=1)
        for r in reports.values():
            for name in ("fid_plus", "fid_minus", "gef", "rho_v", "rho_e"):
                rows = [getattr(row, name) for row in r.rows]
                assert getattr(r, name) == pytest.approx(np.mean(rows), abs=1e-12)
            gt = [row.gt_recall for row in r.rows if not math.isnan(row.gt_recall)]
            assert r.gt_recall == pytest.approx(np.mean(gt), abs=1e-12)

    def test_deterministic_except_timing(self, world):
        a = evaluate(world.explainer, world.test, world.model, seed=0, time_calls=1)
        b = evaluate(world.explainer, world.test, world.model, seed=0, time_calls=1)
        for name in a:
            assert a[name].rows == b[name].rows
            for field in SUMMARY_FIELDS:
                if field in ("method", "t_100"):
                    continue
                va, vb = getattr(a[name], field), getattr(b[name], field)
                assert va == vb or (math.isnan(va) and math.isnan(vb))

    def test_timing_positive(self, world):
        reports = evaluate(world.explainer, world.test, world.model, seed=0,
                           time_calls=3)
        for r in reports.values():
            assert r.t_100 > 0.0

    def test_gt_agreement_bounds(self, world):
        reports = evaluate(world.explainer, world.test, world.model, seed=0,
                           time_calls=1)
        for r in reports.values():
            assert 0.0 <= r.gt_precision <= 1.0
            assert 0.0 <= r.gt_recall <= 1.0


class TestGtAgreement:
    def _with_gt(self, gt_edges):
        g = path_graph(6)
        gt_edge = np.zeros(g.m, dtype=bool)
        gt_edge[list(gt_edges)] = True
        gt_node = np.zeros(g.n, dtype=bool)
        picked = g.edges[gt_edge]
        gt_node[picked.ravel()] = True
        return Graph(n=g.n, edges=g.edges, x=g.x, node_types=g.node_types,
                     label=0, gt_motif=MotifTruth(node_mask=gt_node, edge_mask=gt_edge))

    def test_exact_match(self):
        g = self._with_gt([1, 2])
        reports = evaluate(
            SimpleNamespace(explain=lambda gr: mask_explanation(gr, [1, 2])),
            [g], EdgeCountModel(threshold=1), time_calls=1)
        assert reports["explainer"].gt_precision == 1.0
        assert reports["explainer"].gt_recall == 1.0

    def test_disjoint(self):
        g = self._with_gt([0, 1])
        reports = evaluate(
            SimpleNamespace(explain=lambda gr: mask_explanation(gr, [3, 4])),
            [g], EdgeCountModel(threshold=1), time_calls=1)
        assert reports["explainer"].gt_precision == 0.0
        assert reports["explainer"].gt_recall == 0.0

    def test_partial(self):
        g = self._with_gt([0, 1, 2, 3])
        reports = evaluate(
            SimpleNamespace(explain=lambda gr: mask_explanation(gr, [0, 4])),
            [g], EdgeCountModel(threshold=1), time_calls=1)
        assert reports["explainer"].gt_precision == pytest.approx(0.5)
        assert reports["explainer"].gt_recall == pytest.approx(0.25)


class TestWriteReports:
    def _reports(self, world):
        return evaluate(world.explainer, world.test[:5], world.model, seed=0,
                        time_calls=1)

    def test_summary_csv(self, world, tmp_path):
        reports = self._reports(world)
        write_reports(reports, tmp_path / "metrics.csv")
        with open(tmp_path / "metrics.csv", newline="") as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == list(SUMMARY_FIELDS)
        assert len(rows) == 1 + len(reports)
        assert [r[0] for r in rows[1:]] == sorted(reports)

    def test_json_mirror(self, world, tmp_path):
        reports = self._reports(world)
        write_reports(reports, tmp_path / "m.csv", json_path=tmp_path / "m.json")
        payload = json.loads((tmp_path / "m.json").read_text())
        assert set(payload) == set(reports)
        for name, r in reports.items():
            assert payload[name]["fid_minus"] == r.fid_minus
            assert payload[name]["num_graphs"] == r.num_graphs

    def test_rows_companion(self, world, tmp_path):
        reports = self._reports(world)
        write_reports(reports, tmp_path / "m.csv", rows_path=tmp_path / "rows.csv")
        with open(tmp_path / "rows.csv", newline="") as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == ["method"] + list(ROW_FIELDS)
        assert len(rows) == 1 + sum(len(r.rows) for r in reports.values())

    def test_row_fields_match_dataclass(self):
        assert ROW_FIELDS == tuple(GraphMetrics.__dataclass_fields__)
        assert set(SUMMARY_FIELDS) <= set(MetricsReport.__dataclass_fields__)
