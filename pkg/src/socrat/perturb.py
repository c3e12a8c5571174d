"""Input perturbation: edit-distance neighborhoods, token dropout, and an
external perturbation service, plus the JSONL perturbation-set file format.

All sampling is seeded through numpy Generators; the same config on the
same inputs reproduces the same samples byte for byte.
"""
from __future__ import annotations

import json
import threading
import urllib.error
import urllib.request
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from . import kernels
from .core import ExamplePair, PerturbationSet, Side, TokenSequence
from .errors import (
    EmptyNeighborhoodError,
    ExternalPerturberUnavailableError,
    FormatError,
    MissingOriginalError,
    ProtocolError,
)

__all__ = [
    "PerturberConfig",
    "ExternalPerturberEndpoint",
    "sample_edit_neighborhood",
    "sample_token_perturbations",
    "fetch_external_perturbations",
    "save_perturbation_file",
    "load_perturbation_file",
]


@dataclass(frozen=True)
class PerturberConfig:
    """Knobs shared by every perturbation strategy.

    n_samples is the number of perturbed inputs requested (the original
    pair is carried separately). scaling is forwarded verbatim to external
    perturbers that support a perturbation-strength parameter.
    """

    n_samples: int = 100
    seed: int = 0
    scaling: float = 1.0
    max_edit_distance: int = 2
    dropout_rate: float = 0.2

    def __post_init__(self) -> None:
        if self.n_samples < 1:
            raise ValueError("n_samples must be >= 1")
        if self.max_edit_distance < 1:
            raise ValueError("max_edit_distance must be >= 1")
        if not (0.0 < self.dropout_rate < 1.0):
            raise ValueError("dropout_rate must lie strictly between 0 and 1")
        if not (self.scaling > 0.0):
            raise ValueError("scaling must be > 0")
        if self.seed < 0:
            raise ValueError("seed must be >= 0")


@dataclass(frozen=True)
class ExternalPerturberEndpoint:
    url: str
    timeout: float = 10.0

    def __post_init__(self) -> None:
        if not self.url:
            raise ValueError("endpoint url must be non-empty")
        if not (self.timeout > 0.0):
            raise ValueError("timeout must be > 0")


def sample_edit_neighborhood(word: str, vocabulary: Iterable[str],
                             cfg: PerturberConfig) -> list[str]:
    """Up to n_samples distinct vocabulary words within the edit budget.

    The candidate pool is every vocabulary word w with
    0 < levenshtein(word, w) <= max_edit_distance (the word itself is
    excluded). If the pool is no larger than n_samples the whole pool is
    returned in sorted order; otherwise a seeded uniform draw without
    replacement decides.
    """
    if not word:
        raise ValueError("word must be non-empty")
    vocab = sorted(set(vocabulary))
    if not vocab:
        raise ValueError("vocabulary must be non-empty")
    codes, offsets = kernels.encode_vocabulary(vocab)
    dists = kernels.edit_distance_scan(codes, offsets, kernels.encode_word(word),
                                       cfg.max_edit_distance)
    pool = [w for w, d in zip(vocab, dists) if 0 < d <= cfg.max_edit_distance]
    if not pool:
        raise EmptyNeighborhoodError(
            f"no vocabulary word within edit distance {cfg.max_edit_distance} of {word!r}")
    if len(pool) <= cfg.n_samples:
        return pool
    rng = np.random.default_rng(cfg.seed)
    picked = rng.choice(len(pool), size=cfg.n_samples, replace=False)
    return [pool[i] for i in picked]


def sample_token_perturbations(x: TokenSequence, cfg: PerturberConfig,
                               replacement_pool: Sequence[str] | None = None,
                               ) -> list[TokenSequence]:
    """n_samples dropout variants of x.

    Each position independently perturbs with probability dropout_rate;
    a perturbed position is deleted or replaced with equal probability,
    replacements drawn uniformly from the pool (default: the distinct
    surfaces of x itself; an empty pool degrades to deletion only).
    A draw that deletes every token is rejected and resampled, with the
    unmodified input as a last resort after 1000 rejections.
    """
    if x.is_absent:
        raise ValueError("cannot perturb an empty sequence")
    if replacement_pool is None:
        pool = sorted(set(x.surfaces))
    else:
        pool = sorted(set(replacement_pool))
    rng = np.random.default_rng(cfg.seed)
    out: list[TokenSequence] = []
    for _ in range(cfg.n_samples):
        chosen: list[str] | None = None
        for _attempt in range(1000):
            kept: list[str] = []
            for tok in x.tokens:
                if rng.random() < cfg.dropout_rate:
                    if pool and rng.random() < 0.5:
                        kept.append(pool[int(rng.integers(0, len(pool)))])
                    # else: deleted
                else:
                    kept.append(tok.surface)
            if kept:
                chosen = kept
                break
        if chosen is None:
            chosen = list(x.surfaces)
        out.append(TokenSequence.from_surfaces(chosen, Side.INPUT))
    return out


# one request in flight per endpoint URL, process-wide
_endpoint_locks: dict[str, threading.Lock] = {}
_endpoint_locks_guard = threading.Lock()


def _lock_for(url: str) -> threading.Lock:
    with _endpoint_locks_guard:
        return _endpoint_locks.setdefault(url, threading.Lock())


def fetch_external_perturbations(x: TokenSequence, endpoint: ExternalPerturberEndpoint,
                                 cfg: PerturberConfig) -> list[TokenSequence]:
    """Ask an external service for perturbations of x.

    POSTs {"input", "n", "scaling", "seed"} and expects {"samples":
    [str, ...]} with exactly n entries, each a non-empty whitespace-
    tokenizable line. Transport problems raise
    ExternalPerturberUnavailableError; a malformed answer raises
    ProtocolError. At most one request per endpoint is in flight.
    """
    payload = json.dumps({
        "input": x.text(),
        "n": cfg.n_samples,
        "scaling": cfg.scaling,
        "seed": cfg.seed,
    }).encode("utf-8")
    req = urllib.request.Request(endpoint.url, data=payload,
                                 headers={"Content-Type": "application/json"},
                                 method="POST")
    with _lock_for(endpoint.url):
        try:
            with urllib.request.urlopen(req, timeout=endpoint.timeout) as resp:
                body = resp.read()
        except (urllib.error.URLError, TimeoutError, ConnectionError, OSError) as exc:
            raise ExternalPerturberUnavailableError(
                f"perturbation service at {endpoint.url} unreachable: {exc}") from exc
    try:
        doc = json.loads(body.decode("utf-8"))
        samples = doc["samples"]
    except (ValueError, KeyError, TypeError) as exc:
        raise ProtocolError(f"malformed perturbation response from {endpoint.url}: {exc}") from exc
    if not isinstance(samples, list) or len(samples) != cfg.n_samples:
        raise ProtocolError(
            f"expected {cfg.n_samples} samples from {endpoint.url}, "
            f"got {len(samples) if isinstance(samples, list) else type(samples).__name__}")
    out = []
    for i, line in enumerate(samples):
        if not isinstance(line, str) or not line.split():
            raise ProtocolError(f"sample {i} from {endpoint.url} is not a non-empty string")
        out.append(TokenSequence.from_surfaces(line.split(), Side.INPUT))
    return out


def _pair_record(pair: ExamplePair, kind: str) -> str:
    return json.dumps({"kind": kind, "x": pair.x.text(), "y": pair.y.text()},
                      sort_keys=True, ensure_ascii=False)


def save_perturbation_file(pset: PerturbationSet, path: str) -> None:
    """Write a perturbation set as JSONL, original record first."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(_pair_record(pset.original, "original") + "\n")
        for pair in pset.samples:
            fh.write(_pair_record(pair, "sample") + "\n")


def _parse_pair(doc: dict, path: str, lineno: int) -> ExamplePair:
    x_text = doc.get("x")
    y_text = doc.get("y")
    if not isinstance(x_text, str) or not isinstance(y_text, str):
        raise FormatError("record needs string fields 'x' and 'y'", path=path, line=lineno)
    x_parts = x_text.split()
    if not x_parts:
        raise FormatError("record has an empty input", path=path, line=lineno)
    x = TokenSequence.from_surfaces(x_parts, Side.INPUT)
    y_parts = y_text.split()
    y = (TokenSequence.from_surfaces(y_parts, Side.OUTPUT)
         if y_parts else TokenSequence.absent(Side.OUTPUT))
    return ExamplePair(x, y)


def load_perturbation_file(path: str) -> PerturbationSet:
    """Read a JSONL perturbation set written by save_perturbation_file.

    Empty 'y' fields load as the absent-output marker. Exactly one record
    must carry kind "original"; a missing one raises MissingOriginalError,
    any other malformation raises FormatError with the line number.
    """
    original: ExamplePair | None = None
    samples: list[ExamplePair] = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                doc = json.loads(line)
            except ValueError as exc:
                raise FormatError(f"invalid JSON: {exc}", path=path, line=lineno) from exc
            if not isinstance(doc, dict):
                raise FormatError("record is not an object", path=path, line=lineno)
            kind = doc.get("kind")
            if kind == "original":
                if original is not None:
                    raise FormatError("second 'original' record", path=path, line=lineno)
                pair = _parse_pair(doc, path, lineno)
                if pair.y.is_absent:
                    raise FormatError("the original pair needs a non-empty output",
                                      path=path, line=lineno)
                original = pair
            elif kind == "sample":
                samples.append(_parse_pair(doc, path, lineno))
            else:
                raise FormatError(f"unknown record kind {kind!r}", path=path, line=lineno)
    if original is None:
        raise MissingOriginalError("no record with kind 'original'", path=path)
    if not samples:
        raise FormatError("perturbation file has no samples", path=path)
    return PerturbationSet(original, tuple(samples))
