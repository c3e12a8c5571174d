"""Tokens, token sequences, example pairs, perturbation sets.

Tokens are occurrence-indexed: the k-th time a surface form appears in a
sequence it gets occurrence_rank k (1-based). Two tokens with the same
surface are therefore distinct nodes everywhere downstream, which is what
lets repeated words carry separate dependency coefficients.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Iterator

from .errors import EmptySequenceError

__all__ = [
    "Side",
    "Scheme",
    "Token",
    "TokenSequence",
    "ExamplePair",
    "PerturbationSet",
    "tokenize",
    "derive_seed",
]


def derive_seed(master: int, label: str) -> int:
    """Deterministic per-stage seed fan-out from one master seed.

    Hashing keeps stage streams independent: nearby masters or labels
    share no structure. Stable across platforms and processes.
    """
    digest = hashlib.sha256(f"{master}:{label}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big")


class Side(str, Enum):
    INPUT = "input"
    OUTPUT = "output"


class Scheme(str, Enum):
    """Tokenization scheme: split on whitespace, or one token per character."""

    WHITESPACE = "whitespace"
    CHARACTER = "character"


@dataclass(frozen=True, slots=True)
class Token:
    """One occurrence of a surface form at a fixed position.

    index is the 0-based position in the sequence; occurrence_rank is the
    1-based count of this surface among positions <= index.
    """

    surface: str
    index: int
    occurrence_rank: int

    def __post_init__(self) -> None:
        if not self.surface:
            raise ValueError("token surface must be non-empty")
        if self.index < 0:
            raise ValueError("token index must be >= 0")
        if self.occurrence_rank < 1:
            raise ValueError("occurrence_rank is 1-based and must be >= 1")

    def label(self) -> str:
        """Human-readable node label, e.g. 'tu#2' for the second 'tu'."""
        return f"{self.surface}#{self.occurrence_rank}"


@dataclass(frozen=True, slots=True)
class TokenSequence:
    """An ordered tuple of tokens tied to one side (input or output).

    An empty sequence is the absent-output marker: it stands for a black
    box that returned nothing for a perturbed input. Build one with
    :meth:`absent`. Input-side sequences are never allowed to be empty by
    the types that aggregate them.
    """

    tokens: tuple[Token, ...]
    side: Side

    def __post_init__(self) -> None:
        seen: dict[str, int] = {}
        for pos, tok in enumerate(self.tokens):
            if tok.index != pos:
                raise ValueError(f"token index {tok.index} at position {pos}: must be contiguous from 0")
            seen[tok.surface] = seen.get(tok.surface, 0) + 1
            if tok.occurrence_rank != seen[tok.surface]:
                raise ValueError(
                    f"token {tok.surface!r} at position {pos} has occurrence_rank "
                    f"{tok.occurrence_rank}, expected {seen[tok.surface]}"
                )

    @classmethod
    def from_surfaces(cls, surfaces: Iterable[str], side: Side) -> "TokenSequence":
        counts: dict[str, int] = {}
        toks = []
        for i, s in enumerate(surfaces):
            counts[s] = counts.get(s, 0) + 1
            toks.append(Token(s, i, counts[s]))
        return cls(tuple(toks), side)

    @classmethod
    def absent(cls, side: Side = Side.OUTPUT) -> "TokenSequence":
        """The absent-output marker: an empty sequence."""
        return cls((), side)

    @property
    def is_absent(self) -> bool:
        return not self.tokens

    @property
    def surfaces(self) -> tuple[str, ...]:
        return tuple(t.surface for t in self.tokens)

    def text(self) -> str:
        return " ".join(self.surfaces)

    def __len__(self) -> int:
        return len(self.tokens)

    def __iter__(self) -> Iterator[Token]:
        return iter(self.tokens)


def tokenize(line: str, scheme: Scheme = Scheme.WHITESPACE, side: Side = Side.INPUT) -> TokenSequence:
    """Split a line into an occurrence-indexed TokenSequence.

    Whitespace scheme splits on runs of whitespace; character scheme yields
    one token per character. Raises EmptySequenceError when nothing remains
    after splitting.
    """
    if scheme is Scheme.WHITESPACE:
        parts = line.split()
    elif scheme is Scheme.CHARACTER:
        parts = list(line)
    else:  # pragma: no cover - enum is closed
        raise ValueError(f"unknown scheme {scheme!r}")
    if not parts:
        raise EmptySequenceError(f"no tokens in {line!r} under scheme {scheme.value}")
    return TokenSequence.from_surfaces(parts, side)


@dataclass(frozen=True, slots=True)
class ExamplePair:
    """One (input, output) pair.

    x must be a non-empty input-side sequence. y is output-side and may be
    the absent marker when the pair records a black-box non-answer for a
    perturbed input; aggregates that need a real observed output (the
    original pair of a PerturbationSet) enforce non-emptiness themselves.
    """

    x: TokenSequence
    y: TokenSequence

    def __post_init__(self) -> None:
        if self.x.side is not Side.INPUT:
            raise ValueError("x must be an input-side sequence")
        if self.y.side is not Side.OUTPUT:
            raise ValueError("y must be an output-side sequence")
        if self.x.is_absent:
            raise ValueError("x must be non-empty")


@dataclass(frozen=True, slots=True)
class PerturbationSet:
    """The original pair plus N >= 1 perturbed pairs.

    The original pair is always a member of the effective sample set: row 0
    of any design built from this set is the original (an all-ones feature
    row). Duplicates among samples are allowed.
    """

    original: ExamplePair
    samples: tuple[ExamplePair, ...]
    includes_original: bool = field(default=True)

    def __post_init__(self) -> None:
        if not self.includes_original:
            raise ValueError("the original pair must be part of the effective sample set")
        if self.original.y.is_absent:
            raise ValueError("the original pair needs an observed, non-empty output")
        if len(self.samples) < 1:
            raise ValueError("need at least one perturbed sample")

    @property
    def n_samples(self) -> int:
        return len(self.samples)

    def effective_pairs(self) -> tuple[ExamplePair, ...]:
        """Original first, then the perturbed samples."""
        return (self.original, *self.samples)
