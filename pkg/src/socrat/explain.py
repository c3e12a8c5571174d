"""End-to-end explanation pipeline and rendering.

explain() runs the whole loop: perturb the input, query the black box,
fit the per-token regressions, partition the dependency graph, and rank
the resulting chunks. A chunk's importance is the negative dependency
mass its separation cuts, so chunk lists read best-first: the chunk whose
isolation severs the least mass ranks first.
"""
from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass
from typing import Any, Mapping, Sequence

import numpy as np

from .blackbox import BlackBoxSpec, open_black_box
from .causal import CausalConfig, DependencyGraph, build_dependency_graph
from .core import ExamplePair, PerturbationSet, Scheme, Side, Token, TokenSequence, tokenize
from .errors import BlackBoxFailureError
from .partition import Partition, PartitionConfig, partition_exact, partition_local_search
from .perturb import (
    ExternalPerturberEndpoint,
    PerturberConfig,
    fetch_external_perturbations,
    sample_edit_neighborhood,
    sample_token_perturbations,
)

__all__ = [
    "ExplanationChunk",
    "Explanation",
    "importance_scores",
    "build_explanation",
    "explain",
    "predict_edges",
    "render",
]

RENDER_FORMATS = ("json", "dot", "heatmap_csv")


@dataclass(frozen=True)
class ExplanationChunk:
    """One ranked chunk: paired input and output tokens plus bookkeeping.

    internal_edges lists every (input index, output index, theta) pair
    inside the chunk, row-major.
    """

    label: int
    x_nodes: tuple[Token, ...]
    y_nodes: tuple[Token, ...]
    importance: float
    internal_edges: tuple[tuple[int, int, float], ...]


@dataclass(frozen=True, eq=False)
class Explanation:
    chunks: tuple[ExplanationChunk, ...]
    graph: DependencyGraph
    partition: Partition
    provenance: Mapping[str, Any]


def importance_scores(partition: Partition, graph: DependencyGraph) -> np.ndarray:
    """Per-chunk importance: minus the theta mass cut by isolating it.

    An edge counts against chunk t when exactly one endpoint lies in t.
    Higher is better; a chunk disconnected from the rest scores 0.
    """
    u = np.asarray(partition.u_assign)
    v = np.asarray(partition.v_assign)
    theta = graph.theta
    out = np.zeros(partition.k, dtype=np.float64)
    for t in range(partition.k):
        one_end = (u[:, None] == t) != (v[None, :] == t)
        # + 0.0 turns the -0.0 of an uncut chunk into a plain zero
        out[t] = -float(theta[one_end].sum()) + 0.0
    return out


def build_explanation(graph: DependencyGraph, part: Partition,
                      provenance: Mapping[str, Any]) -> Explanation:
    """Assemble ranked chunks from a solved partition.

    Empty chunks (no node on either side) are dropped. Order: importance
    descending, then smallest member input index, then smallest member
    output index, which stays total even when a chunk misses one side.
    """
    scores = importance_scores(part, graph)
    u = np.asarray(part.u_assign)
    v = np.asarray(part.v_assign)
    chunks = []
    for t in range(part.k):
        xi = np.flatnonzero(u == t)
        yj = np.flatnonzero(v == t)
        if xi.size == 0 and yj.size == 0:
            continue
        edges = tuple(
            (int(i), int(j), float(graph.theta[i, j])) for i in xi for j in yj)
        chunks.append(ExplanationChunk(
            label=t,
            x_nodes=tuple(graph.x_nodes[i] for i in xi),
            y_nodes=tuple(graph.y_nodes[j] for j in yj),
            importance=float(scores[t]),
            internal_edges=edges,
        ))
    chunks.sort(key=lambda c: (
        -c.importance,
        c.x_nodes[0].index if c.x_nodes else len(graph.x_nodes),
        c.y_nodes[0].index if c.y_nodes else len(graph.y_nodes),
    ))
    return Explanation(chunks=tuple(chunks), graph=graph, partition=part,
                       provenance=dict(provenance))


def _perturb_inputs(pair: ExamplePair, strategy: str, cfg: PerturberConfig,
                    vocabulary: Sequence[str] | None,
                    replacement_pool: Sequence[str] | None,
                    endpoint: ExternalPerturberEndpoint | None,
                    scheme: Scheme) -> tuple[str, list[TokenSequence]]:
    if strategy == "auto":
        if endpoint is not None:
            strategy = "external"
        elif vocabulary is not None:
            strategy = "edit"
        else:
            strategy = "dropout"
    if strategy == "external":
        if endpoint is None:
            raise ValueError("external strategy needs an endpoint")
        return strategy, fetch_external_perturbations(pair.x, endpoint, cfg)
    if strategy == "edit":
        if vocabulary is None:
            raise ValueError("edit strategy needs a vocabulary")
        word = "".join(pair.x.surfaces)
        neighbors = sample_edit_neighborhood(word, vocabulary, cfg)
        return strategy, [tokenize(w, scheme, Side.INPUT) for w in neighbors]
    if strategy == "dropout":
        return strategy, sample_token_perturbations(pair.x, cfg, replacement_pool)
    raise ValueError(f"unknown perturbation strategy {strategy!r}")


def _query_with_retry(blackbox: BlackBoxSpec, inputs: list[TokenSequence],
                      min_success: float) -> tuple[list[tuple[TokenSequence, TokenSequence]], int]:
    """Query the box, falling back to per-input retries on a batch failure.

    Returns the surviving (input, output) pairs and the number dropped.
    Raises when fewer than min_success of the inputs get an answer.
    """
    with open_black_box(blackbox) as box:
        try:
            outs = box.query_batch(inputs)
            survivors = list(zip(inputs, outs))
            dropped = 0
        except BlackBoxFailureError:
            survivors = []
            dropped = 0
            for x in inputs:
                try:
                    survivors.append((x, box.query_batch([x])[0]))
                except BlackBoxFailureError:
                    dropped += 1
    if len(survivors) < min_success * len(inputs):
        raise BlackBoxFailureError(
            f"black box answered only {len(survivors)} of {len(inputs)} perturbed queries")
    return survivors, dropped


def explain(pair: ExamplePair,
            blackbox: BlackBoxSpec,
            perturber: PerturberConfig | None = None,
            causal_cfg: CausalConfig | None = None,
            partition_cfg: PartitionConfig | None = None,
            *,
            strategy: str = "auto",
            vocabulary: Sequence[str] | None = None,
            replacement_pool: Sequence[str] | None = None,
            endpoint: ExternalPerturberEndpoint | None = None,
            pset: PerturbationSet | None = None,
            scheme: Scheme = Scheme.WHITESPACE,
            solver: str = "auto",
            exact_threshold: int = 16,
            restarts: int = 20,
            min_success: float = 0.5,
            ) -> Explanation:
    """Explain one example pair against a black box.

    The perturbation strategy defaults to: external when an endpoint is
    given, else edit-distance when a vocabulary is given, else token
    dropout. A precomputed pset (e.g. loaded from a perturbation file)
    bypasses both perturbation and querying and is used as-is. Solver
    "auto" runs the exact partitioner when the graph has at most
    exact_threshold nodes and seeded local search otherwise.

    Failed queries are dropped after a per-input retry; the run aborts
    with BlackBoxFailureError when fewer than min_success of them answer.
    """
    perturber = perturber or PerturberConfig()
    causal_cfg = causal_cfg or CausalConfig()
    dropped = 0
    if pset is None:
        strategy, xs = _perturb_inputs(pair, strategy, perturber, vocabulary,
                                       replacement_pool, endpoint, scheme)
        survivors, dropped = _query_with_retry(blackbox, xs, min_success)
        pset = PerturbationSet(pair, tuple(ExamplePair(x, y) for x, y in survivors))
    else:
        strategy = "precomputed"
    graph = build_dependency_graph(pset, causal_cfg)
    n, m = graph.shape
    if partition_cfg is None:
        partition_cfg = PartitionConfig.defaults_for(n, m)
    else:
        partition_cfg = partition_cfg.resolved(n, m)
    if solver == "auto":
        solver = "exact" if n + m <= exact_threshold else "local_search"
    if solver == "exact":
        part = partition_exact(graph, partition_cfg)
    elif solver == "local_search":
        part = partition_local_search(graph, partition_cfg,
                                      restarts=restarts, seed=perturber.seed)
    elif solver == "spectral":
        from .partition import cocluster_spectral
        part = cocluster_spectral(graph, partition_cfg.k,
                                  gamma=partition_cfg.gamma, seed=perturber.seed)
    else:
        raise ValueError(f"unknown solver {solver!r}")
    provenance = {
        "schema_version": 1,
        "blackbox": blackbox.describe(),
        "perturber": {**asdict(perturber), "strategy": strategy},
        "causal": {
            "prior_alpha": causal_cfg.prior.alpha,
            "prior_beta": causal_cfg.prior.beta,
            "interval_scale": causal_cfg.interval_scale,
            "tol": causal_cfg.tol,
            "max_iter": causal_cfg.max_iter,
        },
        "partition": asdict(partition_cfg),
        "solver": solver,
        "scheme": scheme.value,
        "n_samples": pset.n_samples,
        "n_dropped": dropped,
    }
    return build_explanation(graph, part, provenance)


def predict_edges(graph: DependencyGraph, rule: str = "argmax_per_output",
                  threshold: float | None = None) -> frozenset[tuple[int, int]]:
    """Binary edge predictions from the dependency weights.

    argmax_per_output: one edge per output token, its strongest input
    (smallest index on ties). threshold: every edge with theta strictly
    above the given level.
    """
    if rule == "argmax_per_output":
        if graph.theta.shape[0] == 0:
            return frozenset()
        picks = graph.theta.argmax(axis=0)
        return frozenset((int(picks[j]), j) for j in range(graph.theta.shape[1]))
    if rule == "threshold":
        if threshold is None:
            raise ValueError("threshold rule needs a threshold value")
        idx = np.argwhere(graph.theta > threshold)
        return frozenset((int(i), int(j)) for i, j in idx)
    raise ValueError(f"unknown prediction rule {rule!r}")


# ---------------------------------------------------------------------------
# rendering
# ---------------------------------------------------------------------------

def _token_doc(t: Token) -> dict:
    return {"surface": t.surface, "index": t.index, "occurrence_rank": t.occurrence_rank}


def explanation_to_doc(e: Explanation) -> dict:
    return {
        "schema_version": 1,
        "chunks": [
            {
                "label": c.label,
                "x_nodes": [_token_doc(t) for t in c.x_nodes],
                "y_nodes": [_token_doc(t) for t in c.y_nodes],
                "importance": c.importance,
                "internal_edges": [[i, j, th] for i, j, th in c.internal_edges],
            }
            for c in e.chunks
        ],
        "graph": json.loads(e.graph.to_json()),
        "partition": json.loads(e.partition.to_json()),
        "provenance": dict(e.provenance),
    }


def explanation_from_doc(doc: dict) -> Explanation:
    graph = DependencyGraph.from_json(json.dumps(doc["graph"]))
    part = Partition.from_json(json.dumps(doc["partition"]))
    chunks = tuple(
        ExplanationChunk(
            label=c["label"],
            x_nodes=tuple(Token(t["surface"], t["index"], t["occurrence_rank"])
                          for t in c["x_nodes"]),
            y_nodes=tuple(Token(t["surface"], t["index"], t["occurrence_rank"])
                          for t in c["y_nodes"]),
            importance=c["importance"],
            internal_edges=tuple((int(i), int(j), float(th))
                                 for i, j, th in c["internal_edges"]),
        )
        for c in doc["chunks"]
    )
    return Explanation(chunks=chunks, graph=graph, partition=part,
                       provenance=doc["provenance"])


def _dot_escape(s: str) -> str:
    return s.replace("\\", "\\\\").replace('"', '\\"')


def _render_dot(e: Explanation) -> str:
    lines = ["digraph explanation {", "  rankdir=LR;", "  node [shape=box];"]
    for pos, c in enumerate(e.chunks):
        lines.append(f"  subgraph cluster_{pos} {{")
        lines.append(f'    label="chunk {c.label} (importance={c.importance:.6g})";')
        for t in c.x_nodes:
            lines.append(f'    x{t.index} [label="{_dot_escape(t.label())}"];')
        for t in c.y_nodes:
            lines.append(f'    y{t.index} [label="{_dot_escape(t.label())}"];')
        lines.append("  }")
    u = e.partition.u_assign
    v = e.partition.v_assign
    theta = e.graph.theta
    for i in range(theta.shape[0]):
        for j in range(theta.shape[1]):
            w = theta[i, j]
            if w <= 0.0:
                continue
            style = ' style=dashed' if u[i] != v[j] else ""
            lines.append(
                f'  x{i} -> y{j} [penwidth={0.5 + 4.0 * w:.4f}{style}];')
    lines.append("}")
    return "\n".join(lines) + "\n"


def _render_heatmap_csv(e: Explanation) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    x_order = [(c.label, t.index) for c in e.chunks for t in c.x_nodes]
    y_order = [(c.label, t.index) for c in e.chunks for t in c.y_nodes]
    w.writerow(["chunk", ""] + [str(lab) for lab, _ in y_order])
    w.writerow(["", "token"] + [e.graph.y_nodes[j].label() for _, j in y_order])
    for lab, i in x_order:
        row = [str(lab), e.graph.x_nodes[i].label()]
        row += [f"{e.graph.theta[i, j]:.10g}" for _, j in y_order]
        w.writerow(row)
    return buf.getvalue()


def render(e: Explanation, fmt: str = "json") -> str:
    """Serialize an explanation: json (lossless), dot, or heatmap_csv.

    The heatmap CSV permutes rows and columns into chunk order; its first
    header row carries each column's chunk label and the first cell of
    every data row carries the row's. All three formats are byte-stable
    for a fixed explanation.
    """
    if fmt == "json":
        return json.dumps(explanation_to_doc(e), sort_keys=True, indent=2) + "\n"
    if fmt == "dot":
        return _render_dot(e)
    if fmt == "heatmap_csv":
        return _render_heatmap_csv(e)
    raise ValueError(f"unknown render format {fmt!r}; choose from {RENDER_FORMATS}")
