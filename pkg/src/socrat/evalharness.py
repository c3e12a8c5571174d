"""Evaluation against gold alignments, plus two canned experiments.

The grapheme-to-phoneme experiment measures how well argmax edge
predictions recover hand-aligned letter-to-phoneme links as the sample
budget grows. The bias experiment probes whether a spurious input word
(the trigger) carries dependency mass into a register-marked output
token, with an unbiased control run expected to show a zero-centered
contrast.
"""
from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .blackbox import BlackBoxKind, BlackBoxSpec, G2PDictionary, open_black_box
from .causal import CausalConfig, build_dependency_graph
from .core import ExamplePair, PerturbationSet, Scheme, Side, TokenSequence, derive_seed, tokenize
from .errors import EmptyNeighborhoodError, FormatError
from .explain import predict_edges
from .perturb import PerturberConfig, sample_edit_neighborhood, sample_token_perturbations

__all__ = [
    "GoldAlignment",
    "alignment_error_rate",
    "edge_f1",
    "parse_gold_alignments",
    "ExperimentRecord",
    "ExperimentReport",
    "run_g2p_experiment",
    "BiasRecord",
    "run_bias_experiment",
    "bias_summary",
]

Edge = tuple[int, int]


@dataclass(frozen=True)
class GoldAlignment:
    """Sure links S and possible links P (S is always a subset of P)."""

    sure: frozenset[Edge]
    possible: frozenset[Edge]

    def __post_init__(self) -> None:
        if not self.sure <= self.possible:
            raise ValueError("sure links must be a subset of possible links")


def alignment_error_rate(predicted: Iterable[Edge], gold: GoldAlignment) -> float:
    """AER = 1 - (|A&S| + |A&P|) / (|A| + |S|).

    Zero exactly when S <= A <= P. The degenerate |A| + |S| = 0 case is
    pinned to 1.0; it cannot arise against a gold entry with sure links.
    """
    A = frozenset(predicted)
    denom = len(A) + len(gold.sure)
    if denom == 0:
        return 1.0
    hit = len(A & gold.sure) + len(A & gold.possible)
    return 1.0 - hit / denom


def edge_f1(predicted: Iterable[Edge], sure: Iterable[Edge]) -> float:
    """Harmonic precision/recall of predicted edges against sure links.

    Empty-side conventions: precision is 1 with no predictions, recall is
    1 with no sure links, and F1 is 0 when both components vanish.
    """
    A = frozenset(predicted)
    S = frozenset(sure)
    precision = len(A & S) / len(A) if A else 1.0
    recall = len(A & S) / len(S) if S else 1.0
    if precision + recall == 0.0:
        return 0.0
    return 2.0 * precision * recall / (precision + recall)


def parse_gold_alignments(path: str) -> dict[str, GoldAlignment]:
    """Read 'word ||| links' lines; 'i-j' is a sure link, 'i?j' possible.

    Possible-only links extend P beyond S. Blank lines and '#' comments
    are skipped; anything else malformed raises FormatError with its line
    number.
    """
    out: dict[str, GoldAlignment] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split("|||")
            if len(parts) != 2:
                raise FormatError("expected 'word ||| links'", path=path, line=lineno)
            word = parts[0].strip()
            if not word:
                raise FormatError("empty word field", path=path, line=lineno)
            if word in out:
                raise FormatError(f"duplicate gold entry for {word!r}", path=path, line=lineno)
            sure: set[Edge] = set()
            poss: set[Edge] = set()
            for link in parts[1].split():
                sep = "-" if "-" in link else ("?" if "?" in link else None)
                if sep is None:
                    raise FormatError(f"bad link {link!r}", path=path, line=lineno)
                try:
                    i, j = (int(t) for t in link.split(sep))
                except ValueError as exc:
                    raise FormatError(f"bad link {link!r}", path=path, line=lineno) from exc
                if i < 0 or j < 0:
                    raise FormatError(f"negative index in {link!r}", path=path, line=lineno)
                poss.add((i, j))
                if sep == "-":
                    sure.add((i, j))
            if not sure:
                raise FormatError("gold entry needs at least one sure link",
                                  path=path, line=lineno)
            out[word] = GoldAlignment(sure=frozenset(sure), possible=frozenset(poss))
    if not out:
        raise FormatError("gold file has no entries", path=path)
    return out


# ---------------------------------------------------------------------------
# grapheme-to-phoneme recovery experiment
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ExperimentRecord:
    n: int
    seed: int
    word: str
    aer: float
    f1: float
    wall_ms: float


@dataclass(frozen=True)
class ExperimentReport:
    records: tuple[ExperimentRecord, ...]
    skipped: tuple[str, ...]
    provenance: Mapping[str, object] = field(default_factory=dict)

    def aggregates(self) -> list[tuple[int, float, float, float, float, int]]:
        """(n, aer mean, aer std, f1 mean, f1 std, count) per budget,
        population std, ascending n."""
        out = []
        for n in sorted({r.n for r in self.records}):
            rows = [r for r in self.records if r.n == n]
            aers = np.array([r.aer for r in rows])
            f1s = np.array([r.f1 for r in rows])
            out.append((n, float(aers.mean()), float(aers.std()),
                        float(f1s.mean()), float(f1s.std()), len(rows)))
        return out

    def to_csv(self, include_timings: bool = False) -> str:
        """Deterministic report; wall_ms is zeroed unless asked for,
        keeping byte-identical reruns the default."""
        lines = ["# socrat-eval v1"]
        lines.append("# provenance: " + json.dumps(dict(self.provenance), sort_keys=True))
        lines.append("n,seed,word,aer,f1,wall_ms")
        for r in sorted(self.records, key=lambda r: (r.n, r.seed, r.word)):
            ms = f"{r.wall_ms:.10g}" if include_timings else "0"
            lines.append(f"{r.n},{r.seed},{r.word},{r.aer:.10g},{r.f1:.10g},{ms}")
        lines.append("# aggregates")
        lines.append("n,aer_mean,aer_std,f1_mean,f1_std,count")
        for n, am, asd, fm, fsd, cnt in self.aggregates():
            lines.append(f"{n},{am:.10g},{asd:.10g},{fm:.10g},{fsd:.10g},{cnt}")
        if self.skipped:
            lines.append("# skipped: " + " ".join(sorted(self.skipped)))
        return "\n".join(lines) + "\n"


def run_g2p_experiment(dictionary: G2PDictionary,
                       gold: Mapping[str, GoldAlignment],
                       n_grid: Sequence[int],
                       seeds: Sequence[int],
                       perturber: PerturberConfig | None = None,
                       causal_cfg: CausalConfig | None = None,
                       ) -> ExperimentReport:
    """Letter-to-phoneme recovery across sample budgets.

    For every gold word, budget n and seed: draw n edit-distance
    neighbors from the dictionary's own vocabulary, query the dictionary
    box on them, fit the graph, predict argmax edges, and score AER/F1
    against gold. Gold words missing from the dictionary (or with an
    empty neighborhood) are reported in skipped rather than failing the
    run. Per-run seeds fan out from each base seed, word, and n.
    """
    if not n_grid:
        raise ValueError("n_grid must be non-empty")
    if not seeds:
        raise ValueError("seeds must be non-empty")
    base_cfg = perturber or PerturberConfig()
    causal_cfg = causal_cfg or CausalConfig()
    vocab = dictionary.words()
    spec = BlackBoxSpec(kind=BlackBoxKind.DICT_G2P, parameters={"dictionary": dictionary})
    records: list[ExperimentRecord] = []
    skipped: set[str] = set()
    with open_black_box(spec) as box:
        for word in sorted(gold):
            phones = dictionary.lookup(word)
            if phones is None:
                skipped.add(word)
                continue
            pair = ExamplePair(
                tokenize(word, Scheme.CHARACTER, Side.INPUT),
                TokenSequence.from_surfaces(phones, Side.OUTPUT))
            for n in n_grid:
                for seed in seeds:
                    t0 = time.perf_counter()
                    cfg = PerturberConfig(
                        n_samples=n,
                        seed=derive_seed(seed, f"g2p:{word}:{n}"),
                        scaling=base_cfg.scaling,
                        max_edit_distance=base_cfg.max_edit_distance,
                        dropout_rate=base_cfg.dropout_rate)
                    try:
                        neighbors = sample_edit_neighborhood(word, vocab, cfg)
                    except EmptyNeighborhoodError:
                        # deterministic per word: no budget or seed can
                        # repopulate an empty pool
                        skipped.add(word)
                        break
                    xs = [tokenize(w, Scheme.CHARACTER, Side.INPUT) for w in neighbors]
                    ys = box.query_batch(xs)
                    pset = PerturbationSet(
                        pair, tuple(ExamplePair(x, y) for x, y in zip(xs, ys)))
                    graph = build_dependency_graph(pset, causal_cfg)
                    pred = predict_edges(graph, "argmax_per_output")
                    g = gold[word]
                    records.append(ExperimentRecord(
                        n=n, seed=seed, word=word,
                        aer=alignment_error_rate(pred, g),
                        f1=edge_f1(pred, g.sure),
                        wall_ms=(time.perf_counter() - t0) * 1000.0))
                if word in skipped:
                    break
    provenance = {
        "experiment": "g2p",
        "n_grid": list(n_grid),
        "seeds": list(seeds),
        "gold_words": len(gold),
        "perturber": {
            "max_edit_distance": base_cfg.max_edit_distance,
            "scaling": base_cfg.scaling,
        },
        "causal": {
            "prior_alpha": causal_cfg.prior.alpha,
            "prior_beta": causal_cfg.prior.beta,
            "interval_scale": causal_cfg.interval_scale,
        },
    }
    return ExperimentReport(records=tuple(records), skipped=tuple(sorted(skipped)),
                            provenance=provenance)


# ---------------------------------------------------------------------------
# register-bias experiment
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class BiasRecord:
    """One matched-pair probe of trigger -> register dependency.

    strength_with is the raw (signed, unnormalized) coefficient from the
    trigger's input token to the register site in the with-trigger
    sentence; strength_without is 0 by definition, since no coefficient
    exists for an absent input token. rank_with ranks the trigger among
    all input tokens for that output column (1 = strongest). applicable
    is False when the with-sentence's output shows no register site.
    """

    seed: int
    pair_index: int
    applicable: bool
    strength_with: float
    strength_without: float
    contrast: float
    rank_with: int
    with_shows_on: bool
    without_shows_on: bool


def run_bias_experiment(blackbox: BlackBoxSpec,
                        trigger: str,
                        register_on: str,
                        register_off: str,
                        sentences: Sequence[tuple[str, str]],
                        perturber: PerturberConfig | None = None,
                        causal_cfg: CausalConfig | None = None,
                        seeds: Sequence[int] = (0,),
                        ) -> list[BiasRecord]:
    """Probe each matched sentence pair under every seed.

    sentences holds (with_trigger, without_trigger) texts; the first must
    contain the trigger word, the second must not. The with-sentence is
    dropout-perturbed and refit per seed; the register site is the first
    output token showing register_on or register_off.
    """
    base_cfg = perturber or PerturberConfig()
    causal_cfg = causal_cfg or CausalConfig()
    records: list[BiasRecord] = []
    with open_black_box(blackbox) as box:
        for idx, (with_text, without_text) in enumerate(sentences):
            x_with = tokenize(with_text, Scheme.WHITESPACE, Side.INPUT)
            x_without = tokenize(without_text, Scheme.WHITESPACE, Side.INPUT)
            if trigger not in x_with.surfaces:
                raise ValueError(f"sentence pair {idx}: trigger {trigger!r} missing "
                                 "from the with-sentence")
            if trigger in x_without.surfaces:
                raise ValueError(f"sentence pair {idx}: trigger {trigger!r} present "
                                 "in the without-sentence")
            y_with, y_without = box.query_batch([x_with, x_without])
            site = next((j for j, t in enumerate(y_with.tokens)
                         if t.surface in (register_on, register_off)), None)
            with_on = any(t.surface == register_on for t in y_with.tokens)
            without_on = any(t.surface == register_on for t in y_without.tokens)
            trig_row = next(i for i, t in enumerate(x_with.tokens)
                            if t.surface == trigger)
            for seed in seeds:
                if site is None:
                    records.append(BiasRecord(
                        seed=seed, pair_index=idx, applicable=False,
                        strength_with=0.0, strength_without=0.0, contrast=0.0,
                        rank_with=0, with_shows_on=with_on,
                        without_shows_on=without_on))
                    continue
                cfg = PerturberConfig(
                    n_samples=base_cfg.n_samples,
                    seed=derive_seed(seed, f"bias:{idx}"),
                    scaling=base_cfg.scaling,
                    max_edit_distance=base_cfg.max_edit_distance,
                    dropout_rate=base_cfg.dropout_rate)
                xs = sample_token_perturbations(x_with, cfg)
                ys = box.query_batch(xs)
                pset = PerturbationSet(
                    ExamplePair(x_with, y_with),
                    tuple(ExamplePair(x, y) for x, y in zip(xs, ys)))
                graph = build_dependency_graph(pset, causal_cfg)
                col = graph.raw_theta[:, site]
                strength = float(col[trig_row])
                rank = 1 + int((col > strength).sum())
                records.append(BiasRecord(
                    seed=seed, pair_index=idx, applicable=True,
                    strength_with=strength, strength_without=0.0,
                    contrast=strength - 0.0, rank_with=rank,
                    with_shows_on=with_on, without_shows_on=without_on))
    return records


def bias_summary(records: Sequence[BiasRecord]) -> dict[str, float]:
    """Mean contrast, its standard error, and the rank-1 fraction over
    the applicable records."""
    usable = [r for r in records if r.applicable]
    if not usable:
        return {"count": 0.0, "mean_contrast": math.nan, "se_contrast": math.nan,
                "rank_first_fraction": math.nan}
    contrasts = np.array([r.contrast for r in usable])
    n = len(usable)
    se = float(contrasts.std(ddof=1) / math.sqrt(n)) if n > 1 else math.inf
    return {
        "count": float(n),
        "mean_contrast": float(contrasts.mean()),
        "se_contrast": se,
        "rank_first_fraction": float(np.mean([r.rank_with == 1 for r in usable])),
    }
