"""Shared helpers: deterministic graph builders and bundled fixture paths."""

from __future__ import annotations

import importlib.resources

import numpy as np
import pytest

from socrat.causal import DependencyGraph
from socrat.core import Side, Token, TokenSequence


def fixture_path(name: str) -> str:
    return str(importlib.resources.files("socrat").joinpath("fixtures", name))


def token_seq(surfaces: list[str], side: Side) -> TokenSequence:
    return TokenSequence.from_surfaces(surfaces, side)


def make_graph(theta: np.ndarray, theta_hat: np.ndarray | None = None,
               ) -> DependencyGraph:
    """Wrap raw coefficient arrays in a graph with placeholder tokens."""
    theta = np.asarray(theta, dtype=np.float64)
    n, m = theta.shape
    if theta_hat is None:
        theta_hat = np.zeros_like(theta)
    xs = tuple(Token(f"x{i}", i, 1) for i in range(n))
    ys = tuple(Token(f"y{j}", j, 1) for j in range(m))
    return DependencyGraph(x_nodes=xs, y_nodes=ys, theta=theta,
                           theta_hat=np.asarray(theta_hat, dtype=np.float64),
                           converged=(True,) * m)


def random_graph(rng: np.random.Generator, n: int, m: int,
                 hat_scale: float = 0.5) -> DependencyGraph:
    theta = rng.random((n, m))
    theta_hat = rng.random((n, m)) * hat_scale
    return make_graph(theta, theta_hat)


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(12345)
