"""Tests for the end-to-end pipeline, chunk ranking, and renderers."""

import json

import numpy as np
import pytest

from socrat.blackbox import BlackBoxKind, BlackBoxSpec
from socrat.core import (
    ExamplePair,
    PerturbationSet,
    Scheme,
    Side,
    TokenSequence,
    tokenize,
)
from socrat.errors import BlackBoxFailureError, EmptyNeighborhoodError
from socrat.explain import (
    RENDER_FORMATS,
    build_explanation,
    explain,
    explanation_from_doc,
    explanation_to_doc,
    importance_scores,
    predict_edges,
    render,
)
from socrat.partition import Partition, PartitionConfig, partition_exact
from socrat.perturb import PerturberConfig

from conftest import make_graph


def identity_box() -> BlackBoxSpec:
    return BlackBoxSpec(kind=BlackBoxKind.SYNTHETIC_PERMUTER)


def two_by_two() -> tuple:
    """Fixed graph + hand partition used by the ranking and render tests."""
    graph = make_graph(np.array([[1.0, 0.2], [0.0, 0.8]]))
    part = Partition(k=2, u_assign=(0, 1), v_assign=(0, 1), cost=0.2,
                     solver="exact", optimal=True)
    return graph, part


class TestImportance:
    def test_single_chunk_scores_zero(self):
        graph = make_graph(np.array([[0.3, 0.7], [0.1, 0.9]]))
        part = Partition(k=1, u_assign=(0, 0), v_assign=(0, 0), cost=0.0,
                         solver="exact", optimal=True)
        scores = importance_scores(part, graph)
        assert scores.tolist() == [0.0]
        # an uncut chunk must score plain zero, not negative zero
        assert str(scores[0]) == "0.0"

    def test_hand_values(self):
        graph, part = two_by_two()
        scores = importance_scores(part, graph)
        # isolating either chunk cuts theta[0,1] + theta[1,0] = 0.2
        np.testing.assert_allclose(scores, [-0.2, -0.2])

    def test_matches_manual_cut_recount(self, rng):
        theta = rng.random((5, 4))
        graph = make_graph(theta)
        part = Partition(k=3, u_assign=(0, 1, 2, 0, 1), v_assign=(2, 1, 0, 0),
                         cost=0.0, solver="spectral")
        scores = importance_scores(part, graph)
        for t in range(3):
            mass = 0.0
            for i in range(5):
                for j in range(4):
                    if (part.u_assign[i] == t) != (part.v_assign[j] == t):
                        mass += theta[i, j]
            assert scores[t] == pytest.approx(-mass)


class TestBuildExplanation:
    def test_empty_chunks_dropped(self):
        graph = make_graph(np.array([[1.0, 0.0], [0.0, 1.0]]))
        part = Partition(k=4, u_assign=(0, 2), v_assign=(0, 2), cost=0.0,
                         solver="exact", optimal=True)
        e = build_explanation(graph, part, {})
        assert [c.label for c in e.chunks] == [0, 2]

    def test_sorted_by_importance_then_first_input_index(self):
        graph, part = two_by_two()
        e = build_explanation(graph, part, {"note": "x"})
        # importances tie at -0.2, so the chunk holding x0 comes first
        assert [c.importance for c in e.chunks] == [-0.2, -0.2]
        assert e.chunks[0].x_nodes[0].index == 0
        assert e.chunks[1].x_nodes[0].index == 1
        assert e.provenance == {"note": "x"}

    def test_internal_edges_row_major(self):
        graph = make_graph(np.array([[0.5, 0.1, 0.9]]))
        part = Partition(k=1, u_assign=(0,), v_assign=(0, 0, 0), cost=0.0,
                         solver="exact", optimal=True)
        e = build_explanation(graph, part, {})
        assert e.chunks[0].internal_edges == (
            (0, 0, 0.5), (0, 1, 0.1), (0, 2, 0.9))

    def test_one_sided_chunk_keeps_total_order(self):
        # chunk 1 holds only an output token; sorting must not crash
        graph = make_graph(np.array([[0.4, 0.0], [0.6, 0.0]]))
        part = Partition(k=2, u_assign=(0, 0), v_assign=(0, 1), cost=0.0,
                         solver="exact", optimal=True)
        e = build_explanation(graph, part, {})
        assert len(e.chunks) == 2
        lone = [c for c in e.chunks if not c.x_nodes]
        assert len(lone) == 1 and lone[0].y_nodes[0].index == 1
        assert lone[0].internal_edges == ()


class TestPredictEdges:
    def test_argmax_per_output_tie_prefers_smallest_input(self):
        graph = make_graph(np.array([[0.5, 0.9], [0.5, 0.1]]))
        assert predict_edges(graph) == {(0, 0), (0, 1)}

    def test_threshold_is_strict(self):
        graph = make_graph(np.array([[0.5, 0.2], [0.7, 0.5]]))
        assert predict_edges(graph, rule="threshold", threshold=0.5) == {(1, 0)}

    def test_threshold_requires_value(self):
        graph = make_graph(np.array([[1.0]]))
        with pytest.raises(ValueError, match="threshold"):
            predict_edges(graph, rule="threshold")

    def test_unknown_rule(self):
        graph = make_graph(np.array([[1.0]]))
        with pytest.raises(ValueError, match="rule"):
            predict_edges(graph, rule="best_guess")


class TestRender:
    def make_explanation(self):
        graph, part = two_by_two()
        return build_explanation(graph, part, {"solver": "exact", "schema_version": 1})

    def test_json_roundtrip_is_lossless(self):
        e = self.make_explanation()
        text = render(e, "json")
        assert text.endswith("\n")
        back = explanation_from_doc(json.loads(text))
        assert back.chunks == e.chunks
        np.testing.assert_array_equal(back.graph.theta, e.graph.theta)
        np.testing.assert_array_equal(back.graph.theta_hat, e.graph.theta_hat)
        assert back.graph.x_nodes == e.graph.x_nodes
        assert back.partition == e.partition
        assert dict(back.provenance) == dict(e.provenance)

    def test_doc_roundtrip_via_python(self):
        e = self.make_explanation()
        back = explanation_from_doc(explanation_to_doc(e))
        assert back.chunks == e.chunks

    def test_dot_structure(self):
        e = self.make_explanation()
        dot = render(e, "dot")
        assert dot.startswith("digraph explanation {")
        assert 'label="chunk 0 (importance=-0.2)"' in dot
        assert 'label="chunk 1 (importance=-0.2)"' in dot
        # theta[0,1] = 0.2 crosses the cut, theta[0,0] = 1.0 does not
        assert "x0 -> y1 [penwidth=1.3000 style=dashed];" in dot
        assert "x0 -> y0 [penwidth=4.5000];" in dot
        # zero-weight edges are omitted entirely
        assert "x1 -> y0" not in dot

    def test_heatmap_csv_structure(self):
        e = self.make_explanation()
        lines = render(e, "heatmap_csv").splitlines()
        assert lines[0] == "chunk,,0,1"
        assert lines[1] == ",token,y0#1,y1#1"
        assert lines[2] == "0,x0#1,1,0.2"
        assert lines[3] == "1,x1#1,0,0.8"

    def test_heatmap_follows_chunk_order(self):
        # pair x0 with y1 so the output columns land out of index order
        graph = make_graph(np.array([[0.2, 1.0], [0.8, 0.0]]))
        part = Partition(k=2, u_assign=(0, 1), v_assign=(1, 0), cost=0.2,
                         solver="exact", optimal=True)
        e = build_explanation(graph, part, {})
        assert [c.importance for c in e.chunks] == [-0.2, -0.2]
        lines = render(e, "heatmap_csv").splitlines()
        # columns permute with the rows: y1 (chunk 0's output) leads
        assert lines[0] == "chunk,,0,1"
        assert lines[1] == ",token,y1#1,y0#1"
        assert lines[2].startswith("0,x0#1,")

    def test_byte_stable(self):
        e = self.make_explanation()
        for fmt in RENDER_FORMATS:
            assert render(e, fmt) == render(e, fmt)

    def test_unknown_format(self):
        with pytest.raises(ValueError, match="format"):
            render(self.make_explanation(), "svg")


class TestExplainPipeline:
    def pair(self, text="alpha bravo charlie delta") -> ExamplePair:
        x = tokenize(text, Scheme.WHITESPACE, Side.INPUT)
        y = tokenize(text, Scheme.WHITESPACE, Side.OUTPUT)
        return ExamplePair(x, y)

    def test_identity_box_recovers_diagonal(self):
        e = explain(self.pair(), identity_box(),
                    PerturberConfig(n_samples=80, seed=3, dropout_rate=0.3))
        n, m = e.graph.shape
        assert (n, m) == (4, 4)
        assert predict_edges(e.graph) == {(i, i) for i in range(4)}
        assert e.partition.solver == "exact" and e.partition.optimal is True
        prov = e.provenance
        assert prov["perturber"]["strategy"] == "dropout"
        assert prov["solver"] == "exact"
        assert prov["n_dropped"] == 0
        assert prov["blackbox"]["kind"] == "synthetic_permuter"

    def test_chunks_cover_every_token_once(self):
        e = explain(self.pair(), identity_box(),
                    PerturberConfig(n_samples=60, seed=1, dropout_rate=0.3))
        xs = [t.index for c in e.chunks for t in c.x_nodes]
        ys = [t.index for c in e.chunks for t in c.y_nodes]
        assert sorted(xs) == [0, 1, 2, 3]
        assert sorted(ys) == [0, 1, 2, 3]

    def test_precomputed_pset_skips_perturbation_and_query(self):
        pair = self.pair("a b")
        samples = (
            ExamplePair(tokenize("a", Scheme.WHITESPACE, Side.INPUT),
                        tokenize("a", Scheme.WHITESPACE, Side.OUTPUT)),
            ExamplePair(tokenize("b", Scheme.WHITESPACE, Side.INPUT),
                        tokenize("b", Scheme.WHITESPACE, Side.OUTPUT)),
            ExamplePair(tokenize("b a", Scheme.WHITESPACE, Side.INPUT),
                        tokenize("b a", Scheme.WHITESPACE, Side.OUTPUT)),
        )
        pset = PerturbationSet(pair, samples)
        # the box must never be opened: point one at a dead endpoint
        dead = BlackBoxSpec(kind=BlackBoxKind.HTTP,
                            parameters={"url": "http://127.0.0.1:1/predict"})
        e = explain(pair, dead, pset=pset)
        assert e.provenance["perturber"]["strategy"] == "precomputed"
        assert e.provenance["n_samples"] == 3

    def test_solver_auto_switches_to_local_search(self):
        e = explain(self.pair(), identity_box(),
                    PerturberConfig(n_samples=60, seed=0, dropout_rate=0.3),
                    exact_threshold=7)
        assert e.partition.solver == "local_search"
        assert e.partition.optimal is None

    def test_explicit_spectral_solver(self):
        e = explain(self.pair(), identity_box(),
                    PerturberConfig(n_samples=60, seed=0, dropout_rate=0.3),
                    solver="spectral")
        assert e.partition.solver == "spectral"

    def test_partition_config_passthrough(self):
        cfg = PartitionConfig(k=3, gamma=0.0)
        e = explain(self.pair(), identity_box(),
                    PerturberConfig(n_samples=60, seed=0, dropout_rate=0.3),
                    partition_cfg=cfg)
        assert e.partition.k == 3
        assert e.provenance["partition"]["gamma"] == 0.0

    def test_unreachable_box_aborts(self):
        dead = BlackBoxSpec(kind=BlackBoxKind.HTTP,
                            parameters={"url": "http://127.0.0.1:1/predict"},
                            timeout=0.5)
        with pytest.raises(BlackBoxFailureError, match="answered only 0"):
            explain(self.pair("a b"), dead,
                    PerturberConfig(n_samples=5, dropout_rate=0.3))

    def test_empty_edit_neighborhood_propagates(self):
        pair = ExamplePair(tokenize("cat", Scheme.CHARACTER, Side.INPUT),
                           tokenize("K AE T", Scheme.WHITESPACE, Side.OUTPUT))
        with pytest.raises(EmptyNeighborhoodError):
            explain(pair, identity_box(), strategy="edit",
                    vocabulary=["zzzzzzzzzz"], scheme=Scheme.CHARACTER)

    def test_strategy_validation(self):
        with pytest.raises(ValueError, match="endpoint"):
            explain(self.pair(), identity_box(), strategy="external")
        with pytest.raises(ValueError, match="vocabulary"):
            explain(self.pair(), identity_box(), strategy="edit")
        with pytest.raises(ValueError, match="strategy"):
            explain(self.pair(), identity_box(), strategy="mutation")

    def test_unknown_solver(self):
        with pytest.raises(ValueError, match="solver"):
            explain(self.pair(), identity_box(),
                    PerturberConfig(n_samples=30, dropout_rate=0.3),
                    solver="annealing")

    def test_importance_consistent_with_partition(self):
        e = explain(self.pair(), identity_box(),
                    PerturberConfig(n_samples=80, seed=3, dropout_rate=0.3))
        scores = importance_scores(e.partition, e.graph)
        by_label = {c.label: c.importance for c in e.chunks}
        for label, imp in by_label.items():
            assert imp == pytest.approx(scores[label])

    def test_explain_then_render_roundtrip(self):
        e = explain(self.pair("a b c"), identity_box(),
                    PerturberConfig(n_samples=50, seed=7, dropout_rate=0.3))
        back = explanation_from_doc(json.loads(render(e, "json")))
        assert back.chunks == e.chunks
        assert back.partition == e.partition
