"""Per-token causal dependency inference.

For each output token y_j, a Bayesian logistic regression models the
probability that y_j survives into the output of a perturbed input, as a
function of which input tokens survived into that input:

    P(y_j present | x~) = sigmoid(theta_j . phi(x~))

phi is the binary presence encoding (by occurrence rank) over the original
input's tokens. The prior is Gaussian, mean alpha * 1 and precision
beta * I; the posterior is summarized by its Laplace approximation at the
MAP (found by damped Newton), whose inverse-Hessian diagonal gives the
per-coefficient uncertainty. Stacking the m fits column-wise yields the
dependency graph: theta[i, j] is how much output token j depends on input
token i, and theta_hat[i, j] is the half-width of its uncertainty
interval.
"""
from __future__ import annotations

import json
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import kernels
from .core import PerturbationSet, Side, Token, TokenSequence

__all__ = [
    "RegressionPrior",
    "CausalConfig",
    "PosteriorSummary",
    "DependencyGraph",
    "encode_features",
    "build_feature_matrix",
    "encode_labels",
    "log_posterior",
    "log_posterior_grad",
    "log_posterior_hessian",
    "fit_token_model",
    "build_dependency_graph",
]


@dataclass(frozen=True)
class RegressionPrior:
    """Gaussian prior: mean alpha on every coefficient, precision beta."""

    alpha: float = 0.0
    beta: float = 1.0

    def __post_init__(self) -> None:
        if not (self.beta > 0.0) or not np.isfinite(self.beta):
            raise ValueError("prior precision beta must be positive and finite")
        if not np.isfinite(self.alpha):
            raise ValueError("prior mean alpha must be finite")


@dataclass(frozen=True)
class CausalConfig:
    prior: RegressionPrior = field(default_factory=RegressionPrior)
    interval_scale: float = 1.0
    tol: float = 1e-8
    max_iter: int = 100
    workers: int = 1

    def __post_init__(self) -> None:
        if not (self.interval_scale > 0.0):
            raise ValueError("interval_scale must be > 0")
        if not (self.tol > 0.0):
            raise ValueError("tol must be > 0")
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")


@dataclass(frozen=True)
class PosteriorSummary:
    """Laplace summary of one per-token fit."""

    mean: np.ndarray
    stddev: np.ndarray
    grad_inf: float
    iterations: int
    converged: bool


def encode_features(x: TokenSequence, x_tilde: TokenSequence) -> np.ndarray:
    """Binary presence of each original token in a perturbed input.

    Token (surface s, rank r) counts as present when x_tilde contains at
    least r occurrences of s. Encoding x against itself is all ones.
    """
    counts = Counter(x_tilde.surfaces)
    out = np.zeros(len(x), dtype=np.float64)
    for i, tok in enumerate(x.tokens):
        if counts[tok.surface] >= tok.occurrence_rank:
            out[i] = 1.0
    return out


def build_feature_matrix(pset: PerturbationSet) -> np.ndarray:
    """Stack feature rows for the effective pairs, original first (all ones)."""
    pairs = pset.effective_pairs()
    X = np.empty((len(pairs), len(pset.original.x)), dtype=np.float64)
    for s, pair in enumerate(pairs):
        X[s] = encode_features(pset.original.x, pair.x)
    return X


def encode_labels(y: TokenSequence, outputs: Sequence[TokenSequence]) -> np.ndarray:
    """Label matrix: rows per output sequence, columns per original y token.

    Presence uses the same occurrence-rank rule as the features; an absent
    output contributes an all-zero row.
    """
    Y = np.zeros((len(outputs), len(y)), dtype=np.float64)
    for s, y_tilde in enumerate(outputs):
        if y_tilde.is_absent:
            continue
        counts = Counter(y_tilde.surfaces)
        for j, tok in enumerate(y.tokens):
            if counts[tok.surface] >= tok.occurrence_rank:
                Y[s, j] = 1.0
    return Y


# Reference formulas for the penalized log-likelihood and its derivatives.
# The fitting kernels implement exactly this objective; tests check the
# kernels' output against these.

def log_posterior(theta: np.ndarray, X: np.ndarray, y: np.ndarray,
                  prior: RegressionPrior) -> float:
    z = X @ theta
    softplus = np.maximum(z, 0.0) + np.log1p(np.exp(-np.abs(z)))
    d = theta - prior.alpha
    return float(y @ z - softplus.sum() - 0.5 * prior.beta * (d @ d))


def log_posterior_grad(theta: np.ndarray, X: np.ndarray, y: np.ndarray,
                       prior: RegressionPrior) -> np.ndarray:
    z = X @ theta
    p = np.where(z >= 0, 1.0 / (1.0 + np.exp(-np.abs(z))),
                 np.exp(-np.abs(z)) / (1.0 + np.exp(-np.abs(z))))
    return X.T @ (y - p) - prior.beta * (theta - prior.alpha)


def log_posterior_hessian(theta: np.ndarray, X: np.ndarray, y: np.ndarray,
                          prior: RegressionPrior) -> np.ndarray:
    """Negative Hessian of the log posterior (positive definite)."""
    z = X @ theta
    p = np.where(z >= 0, 1.0 / (1.0 + np.exp(-np.abs(z))),
                 np.exp(-np.abs(z)) / (1.0 + np.exp(-np.abs(z))))
    w = p * (1.0 - p)
    H = (X * w[:, None]).T @ X
    H[np.diag_indices(X.shape[1])] += prior.beta
    return H


def fit_token_model(features: np.ndarray, labels: np.ndarray,
                    prior: RegressionPrior, tol: float = 1e-8,
                    max_iter: int = 100) -> PosteriorSummary:
    """Laplace posterior for one output token.

    features: (S, D) binary design, labels: (S,) in {0, 1}. With an
    all-zero feature column the corresponding coefficient stays at the
    prior (mean alpha, stddev 1/sqrt(beta) when nothing else loads on it).
    """
    features = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64)
    if features.ndim != 2 or features.shape[0] < 1:
        raise ValueError("features must be a non-empty 2-d design")
    if labels.shape != (features.shape[0],):
        raise ValueError("labels must align with the design rows")
    mean, cov_diag, grad_inf, iters, conv = kernels.newton_map(
        features, labels, prior.alpha, prior.beta, tol, max_iter)
    return PosteriorSummary(mean=mean, stddev=np.sqrt(cov_diag),
                            grad_inf=float(grad_inf), iterations=int(iters),
                            converged=bool(conv))


@dataclass(frozen=True)
class DependencyGraph:
    """Dense bipartite dependency weights between input and output tokens.

    theta is clipped to be non-negative and normalized so its global max
    is 1 (when any positive mass exists); theta_hat carries the matching
    scaled uncertainty half-widths. raw_theta keeps the unclipped,
    unnormalized posterior means for analyses that need signed
    coefficients; it is not serialized.
    """

    x_nodes: tuple[Token, ...]
    y_nodes: tuple[Token, ...]
    theta: np.ndarray
    theta_hat: np.ndarray
    converged: tuple[bool, ...]
    raw_theta: np.ndarray | None = None

    def __post_init__(self) -> None:
        n, m = len(self.x_nodes), len(self.y_nodes)
        if self.theta.shape != (n, m) or self.theta_hat.shape != (n, m):
            raise ValueError(f"theta/theta_hat must be {(n, m)}")
        if len(self.converged) != m:
            raise ValueError("need one convergence flag per output token")
        if not np.isfinite(self.theta).all() or not np.isfinite(self.theta_hat).all():
            raise ValueError("theta and theta_hat must be finite")
        if (self.theta_hat < 0).any():
            raise ValueError("theta_hat must be non-negative")
        self.theta.flags.writeable = False
        self.theta_hat.flags.writeable = False

    @property
    def shape(self) -> tuple[int, int]:
        return self.theta.shape

    def to_json(self) -> str:
        doc = {
            "schema_version": 1,
            "x_nodes": [_token_doc(t) for t in self.x_nodes],
            "y_nodes": [_token_doc(t) for t in self.y_nodes],
            "theta": self.theta.tolist(),
            "theta_hat": self.theta_hat.tolist(),
            "converged": list(self.converged),
        }
        return json.dumps(doc, sort_keys=True, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "DependencyGraph":
        doc = json.loads(text)
        return cls(
            x_nodes=tuple(_token_from_doc(d) for d in doc["x_nodes"]),
            y_nodes=tuple(_token_from_doc(d) for d in doc["y_nodes"]),
            theta=np.array(doc["theta"], dtype=np.float64).reshape(
                len(doc["x_nodes"]), len(doc["y_nodes"])),
            theta_hat=np.array(doc["theta_hat"], dtype=np.float64).reshape(
                len(doc["x_nodes"]), len(doc["y_nodes"])),
            converged=tuple(bool(c) for c in doc["converged"]),
        )


def _token_doc(t: Token) -> dict:
    return {"surface": t.surface, "index": t.index, "occurrence_rank": t.occurrence_rank}


def _token_from_doc(d: dict) -> Token:
    return Token(d["surface"], d["index"], d["occurrence_rank"])


def build_dependency_graph(pset: PerturbationSet,
                           cfg: CausalConfig | None = None) -> DependencyGraph:
    """Fit every output token's regression and assemble the graph.

    Negative posterior means are clipped to zero, then theta is divided by
    its global maximum (a no-op when the maximum is 0) and theta_hat gets
    interval_scale times the posterior stddev divided by the same factor.
    Fits are independent across output tokens; cfg.workers > 1 runs them
    in a thread pool (the Newton kernels release the GIL).
    """
    cfg = cfg or CausalConfig()
    x = pset.original.x
    y = pset.original.y
    X = build_feature_matrix(pset)
    Y = encode_labels(y, [p.y for p in pset.effective_pairs()])
    n, m = len(x), len(y)

    def fit(j: int) -> PosteriorSummary:
        return fit_token_model(X, Y[:, j], cfg.prior, cfg.tol, cfg.max_iter)

    if cfg.workers > 1 and m > 1:
        with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
            fits = list(pool.map(fit, range(m)))
    else:
        fits = [fit(j) for j in range(m)]

    raw = np.empty((n, m), dtype=np.float64)
    sig = np.empty((n, m), dtype=np.float64)
    for j, summary in enumerate(fits):
        raw[:, j] = summary.mean
        sig[:, j] = summary.stddev
    clipped = np.maximum(raw, 0.0)
    divisor = float(clipped.max()) if clipped.size else 0.0
    if divisor > 0.0:
        theta = clipped / divisor
        theta_hat = cfg.interval_scale * sig / divisor
    else:
        theta = clipped
        theta_hat = cfg.interval_scale * sig
    return DependencyGraph(
        x_nodes=x.tokens,
        y_nodes=y.tokens,
        theta=theta,
        theta_hat=theta_hat,
        converged=tuple(f.converged for f in fits),
        raw_theta=raw,
    )
