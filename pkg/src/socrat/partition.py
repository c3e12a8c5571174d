"""Robust bipartite partitioning of a dependency graph into chunks.

A partition assigns every input node and every output node one of K
shared labels; chunk k is the pair (inputs labeled k, outputs labeled k),
and an edge is cut when its endpoints carry different labels. Subset
sizes are box-constrained per side. The objective charged to a partition
is

    cost = sum_{cut edges} theta_ij  +  R_Gamma(cut)

where the second term is the worst extra mass an adversary with budget
Gamma can add by inflating cut edges within their uncertainty intervals:
it may pick at most Gamma cut edges (fractionally for the remainder) from
J = {theta_hat > 0} and collect their half-widths. That inner maximum has
a closed form, the sum of the largest floor(Gamma) cut half-widths plus
the fractional remainder of the next one, and a dual whose optimum equals
it exactly: choose a level p0, pay Gamma * p0 plus every cut half-width's
excess over p0.

Three solvers share this objective: an exact branch-and-bound over label
assignments, seeded first-improvement local search, and spectral
co-clustering of the degree-normalized theta (which ignores the
cardinality bounds and serves as a fast approximation).
"""
from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, replace
from typing import Mapping

import numpy as np

from . import kernels
from .causal import DependencyGraph
from .errors import InfeasibleBoundsError, InvalidKError

__all__ = [
    "PartitionConfig",
    "DualCertificate",
    "Partition",
    "robust_term",
    "robust_term_dual",
    "robust_cut_cost",
    "partition_exact",
    "partition_local_search",
    "cocluster_spectral",
]


@dataclass(frozen=True)
class PartitionConfig:
    """Solve-time parameters: subset count, size bounds, budget, stopping.

    c_u_max / c_v_max of None mean "ceil(side / k) + 1", materialized by
    resolved() once the graph's dimensions are known. abs_gap_tol is an
    absolute optimality-gap tolerance for the exact solver; time_limit is
    a wall-clock cap after which the incumbent is returned non-optimal.
    """

    k: int
    c_u_min: int = 1
    c_u_max: int | None = None
    c_v_min: int = 1
    c_v_max: int | None = None
    gamma: float = 1.0
    abs_gap_tol: float = 1e-4
    time_limit: float = 120.0

    def __post_init__(self) -> None:
        if self.k < 1:
            raise InvalidKError(f"k must be >= 1, got {self.k}")
        if self.c_u_min < 1 or self.c_v_min < 1:
            raise ValueError("cardinality minimums must be >= 1")
        if self.c_u_max is not None and self.c_u_max < self.c_u_min:
            raise ValueError("c_u_max must be >= c_u_min")
        if self.c_v_max is not None and self.c_v_max < self.c_v_min:
            raise ValueError("c_v_max must be >= c_v_min")
        if not (self.gamma >= 0.0) or not math.isfinite(self.gamma):
            raise ValueError("gamma must be finite and >= 0")
        if self.abs_gap_tol < 0.0:
            raise ValueError("abs_gap_tol must be >= 0")
        if not (self.time_limit > 0.0):
            raise ValueError("time_limit must be > 0")

    @classmethod
    def defaults_for(cls, n_inputs: int, n_outputs: int, k: int | None = None,
                     gamma: float = 1.0) -> "PartitionConfig":
        """The stock configuration for a graph of the given dimensions."""
        if k is None:
            k = max(2, math.ceil(min(n_inputs, n_outputs) / 3))
        return cls(k=k, gamma=gamma).resolved(n_inputs, n_outputs)

    def resolved(self, n_inputs: int, n_outputs: int) -> "PartitionConfig":
        """Materialize side-dependent defaults for a concrete graph."""
        out = self
        if out.c_u_max is None:
            out = replace(out, c_u_max=math.ceil(n_inputs / out.k) + 1)
        if out.c_v_max is None:
            out = replace(out, c_v_max=math.ceil(n_outputs / out.k) + 1)
        return out


def _check_feasible(cfg: PartitionConfig, n: int, m: int) -> None:
    if cfg.k * cfg.c_u_min > n or cfg.k * cfg.c_u_max < n:
        raise InfeasibleBoundsError(
            f"no split of {n} input nodes into {cfg.k} subsets of size "
            f"[{cfg.c_u_min}, {cfg.c_u_max}]")
    if cfg.k * cfg.c_v_min > m or cfg.k * cfg.c_v_max < m:
        raise InfeasibleBoundsError(
            f"no split of {m} output nodes into {cfg.k} subsets of size "
            f"[{cfg.c_v_min}, {cfg.c_v_max}]")


@dataclass(frozen=True)
class DualCertificate:
    """Optimal dual of the adversary's budget LP at a fixed partition.

    Feasibility: p0 >= 0, every p entry >= 0, and p0 + p[(i, j)] covers
    the cut half-width of each edge in J (entries absent from p are 0,
    which suffices for uncut edges). Its value Gamma * p0 + sum(p) equals
    the primal robust term; both are checked by validate().
    """

    p0: float
    p: Mapping[tuple[int, int], float]

    def value(self, gamma: float) -> float:
        return gamma * self.p0 + sum(self.p.values())

    def validate(self, cross: np.ndarray, theta_hat: np.ndarray, gamma: float,
                 atol: float = 1e-9) -> None:
        if self.p0 < 0.0:
            raise AssertionError(f"p0 = {self.p0} < 0")
        for (i, j), pij in self.p.items():
            if pij < 0.0:
                raise AssertionError(f"p[{i},{j}] = {pij} < 0")
        active = np.argwhere((cross != 0) & (theta_hat > 0.0))
        for i, j in active:
            need = theta_hat[i, j]
            have = self.p0 + self.p.get((int(i), int(j)), 0.0)
            if have < need - atol:
                raise AssertionError(f"constraint violated at ({i},{j}): {have} < {need}")
        primal = robust_term(cross, theta_hat, gamma)
        if abs(self.value(gamma) - primal) > atol:
            raise AssertionError(
                f"dual value {self.value(gamma)} != primal {primal}")


def robust_term(cross: np.ndarray, theta_hat: np.ndarray, gamma: float) -> float:
    """Worst-case extra cut mass under the budget: greedy closed form."""
    if gamma < 0.0:
        raise ValueError("gamma must be >= 0")
    vals = theta_hat[(cross != 0) & (theta_hat > 0.0)]
    c = vals.size
    if gamma == 0.0 or c == 0:
        return 0.0
    srt = np.sort(vals)[::-1]
    k = min(int(math.floor(gamma)), c)
    total = float(srt[:k].sum())
    frac = gamma - math.floor(gamma)
    if frac > 0.0 and k < c:
        total += frac * float(srt[k])
    return total


def robust_term_dual(cross: np.ndarray, theta_hat: np.ndarray,
                     gamma: float) -> tuple[float, DualCertificate]:
    """The same maximum via its LP dual, with the certifying variables.

    With active cut half-widths sorted v_1 >= ... >= v_c and
    k = floor(gamma): if gamma >= c the dual level p0 is 0 and every
    active edge is paid in full; otherwise p0 = v_{k+1} and each edge
    pays its excess max(0, v_e - p0).
    """
    if gamma < 0.0:
        raise ValueError("gamma must be >= 0")
    idx = np.argwhere((cross != 0) & (theta_hat > 0.0))
    entries = sorted(
        ((float(theta_hat[i, j]), int(i), int(j)) for i, j in idx),
        key=lambda t: (-t[0], t[1], t[2]))
    c = len(entries)
    if gamma == 0.0:
        # the level alone must cover every active edge; it costs nothing
        p0 = entries[0][0] if entries else 0.0
        return 0.0, DualCertificate(p0=p0, p={})
    if gamma >= c:
        p = {(i, j): v for v, i, j in entries}
        cert = DualCertificate(p0=0.0, p=p)
        return cert.value(gamma), cert
    k = int(math.floor(gamma))
    p0 = entries[k][0]  # the (k+1)-th largest active value
    p = {}
    for v, i, j in entries:
        excess = v - p0
        if excess > 0.0:
            p[(i, j)] = excess
    cert = DualCertificate(p0=p0, p=p)
    return cert.value(gamma), cert


def robust_cut_cost(cross: np.ndarray, theta: np.ndarray, theta_hat: np.ndarray,
                    gamma: float) -> float:
    """Deterministic cut mass plus the adversarial budget term."""
    det = float(theta[cross != 0].sum())
    return det + robust_term(cross, theta_hat, gamma)


@dataclass(frozen=True)
class Partition:
    """A solved chunk assignment with its audited cost.

    u_assign / v_assign map node positions to subset labels 0..k-1.
    optimal is True/False for the exact solver (False after a time-limit
    abort) and None for heuristics, which make no optimality claim.
    """

    k: int
    u_assign: tuple[int, ...]
    v_assign: tuple[int, ...]
    cost: float
    solver: str
    optimal: bool | None = None
    certificate: DualCertificate | None = None
    nodes_explored: int | None = None

    def __post_init__(self) -> None:
        if self.k < 1:
            raise InvalidKError(f"k must be >= 1, got {self.k}")
        for lab in (*self.u_assign, *self.v_assign):
            if not (0 <= lab < self.k):
                raise ValueError(f"label {lab} outside 0..{self.k - 1}")
        if self.solver not in ("exact", "local_search", "spectral"):
            raise ValueError(f"unknown solver tag {self.solver!r}")

    def cross(self) -> np.ndarray:
        """Cut indicator: cross[i, j] = 1 iff the labels differ."""
        u = np.asarray(self.u_assign)
        v = np.asarray(self.v_assign)
        return (u[:, None] != v[None, :]).astype(np.uint8)

    def to_json(self, provenance: Mapping[str, object] | None = None) -> str:
        cert = None
        if self.certificate is not None:
            cert = {
                "p0": self.certificate.p0,
                "p": [[i, j, val] for (i, j), val in sorted(self.certificate.p.items())],
            }
        doc = {
            "schema_version": 1,
            "k": self.k,
            "u_assign": list(self.u_assign),
            "v_assign": list(self.v_assign),
            "cost": self.cost,
            "solver": self.solver,
            "optimal": self.optimal,
            "certificate": cert,
            "nodes_explored": self.nodes_explored,
        }
        if provenance is not None:
            doc["provenance"] = dict(provenance)
        return json.dumps(doc, sort_keys=True, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "Partition":
        doc = json.loads(text)
        cert = None
        if doc.get("certificate") is not None:
            cert = DualCertificate(
                p0=doc["certificate"]["p0"],
                p={(int(i), int(j)): float(v) for i, j, v in doc["certificate"]["p"]})
        return cls(
            k=doc["k"],
            u_assign=tuple(doc["u_assign"]),
            v_assign=tuple(doc["v_assign"]),
            cost=doc["cost"],
            solver=doc["solver"],
            optimal=doc.get("optimal"),
            certificate=cert,
            nodes_explored=doc.get("nodes_explored"),
        )


def _finish(theta, theta_hat, k, u, v, solver, gamma, optimal=None, nodes=None) -> Partition:
    u = tuple(int(a) for a in u)
    v = tuple(int(a) for a in v)
    cross = (np.asarray(u)[:, None] != np.asarray(v)[None, :]).astype(np.uint8)
    cost = robust_cut_cost(cross, theta, theta_hat, gamma)
    _, cert = robust_term_dual(cross, theta_hat, gamma)
    return Partition(k=k, u_assign=u, v_assign=v, cost=cost, solver=solver,
                     optimal=optimal, certificate=cert, nodes_explored=nodes)


def _round_robin(count: int, k: int) -> np.ndarray:
    return np.arange(count, dtype=np.int64) % k


def _leaf_robust(cut_hats: list[float], gamma: float) -> float:
    if gamma == 0.0 or not cut_hats:
        return 0.0
    srt = sorted(cut_hats, reverse=True)
    c = len(srt)
    k = min(int(math.floor(gamma)), c)
    total = 0.0
    for t in range(k):
        total += srt[t]
    frac = gamma - math.floor(gamma)
    if frac > 0.0 and k < c:
        total += frac * srt[k]
    return total


def partition_exact(graph: DependencyGraph, cfg: PartitionConfig) -> Partition:
    """Branch-and-bound over label assignments; optimal within abs_gap_tol.

    Nodes enter the search in order of decreasing incident theta mass so
    heavy edges are decided early. Prefixes are pruned when the side
    cardinalities cannot be completed, and by bound: the theta already cut
    plus the negative slack of undecided edges can only grow toward the
    true cost (the adversarial term is non-negative), so a prefix whose
    bound reaches the incumbent minus the gap tolerance is dead. Labels
    are interchangeable, so a node may only open one label beyond those
    already in use (first-appearance symmetry breaking). On cost ties the
    first incumbent in this deterministic order is kept.

    Hitting the wall-clock limit returns the incumbent with
    optimal=False; normal termination means optimal within abs_gap_tol.
    """
    theta = np.asarray(graph.theta, dtype=np.float64)
    theta_hat = np.asarray(graph.theta_hat, dtype=np.float64)
    n, m = theta.shape
    cfg = cfg.resolved(n, m)
    _check_feasible(cfg, n, m)
    k, gamma, gap = cfg.k, cfg.gamma, cfg.abs_gap_tol

    mass_u = np.abs(theta).sum(axis=1)
    mass_v = np.abs(theta).sum(axis=0)
    order = sorted(
        [(0, i) for i in range(n)] + [(1, j) for j in range(m)],
        key=lambda t: (-(mass_u[t[1]] if t[0] == 0 else mass_v[t[1]]), t[0], t[1]))

    neg_edge = np.minimum(theta, 0.0)
    root_bound = float(neg_edge.sum())

    u = np.full(n, -1, dtype=np.int64)
    v = np.full(m, -1, dtype=np.int64)
    cu = np.zeros(k, dtype=np.int64)
    cv = np.zeros(k, dtype=np.int64)

    # round-robin by search order is always feasible once _check_feasible
    # passes, and gives the bound something to prune against immediately
    u0 = np.empty(n, dtype=np.int64)
    v0 = np.empty(m, dtype=np.int64)
    seen_u = seen_v = 0
    for side, idx in order:
        if side == 0:
            u0[idx] = seen_u % k
            seen_u += 1
        else:
            v0[idx] = seen_v % k
            seen_v += 1
    cross0 = (u0[:, None] != v0[None, :]).astype(np.uint8)
    best_cost = robust_cut_cost(cross0, theta, theta_hat, gamma)
    best_u, best_v = u0.copy(), v0.copy()

    deadline = time.monotonic() + cfg.time_limit
    state = {"nodes": 0, "timed_out": False,
             "done": best_cost <= root_bound + gap}
    total = len(order)
    cut_hats: list[float] = []

    def rec(pos: int, used: int, decided: float, neg_undecided: float) -> None:
        nonlocal best_cost, best_u, best_v
        if state["timed_out"] or state["done"]:
            return
        state["nodes"] += 1
        if state["nodes"] % 256 == 0 and time.monotonic() > deadline:
            state["timed_out"] = True
            return
        if pos == total:
            cost = decided + _leaf_robust(cut_hats, gamma)
            if cost < best_cost:
                best_cost = cost
                best_u, best_v = u.copy(), v.copy()
                if best_cost <= root_bound + gap:
                    state["done"] = True
            return
        side, idx = order[pos]
        if side == 0:
            counts, cmin, cmax, row = cu, cfg.c_u_min, cfg.c_u_max, True
            side_total, assigned = n, int(cu.sum())
        else:
            counts, cmin, cmax, row = cv, cfg.c_v_min, cfg.c_v_max, False
            side_total, assigned = m, int(cv.sum())
        rem_after = side_total - assigned - 1
        for lab in range(min(used + 1, k)):
            if counts[lab] + 1 > cmax:
                continue
            counts[lab] += 1
            deficit = int(np.maximum(cmin - counts, 0).sum())
            if deficit > rem_after or rem_after > int((cmax - counts).sum()):
                counts[lab] -= 1
                continue
            # decide the edges to the already-assigned opposite side
            delta_dec = 0.0
            delta_neg = 0.0
            pushed = 0
            if row:
                opp = v
                for j in range(m):
                    oj = opp[j]
                    if oj < 0:
                        continue
                    delta_neg += neg_edge[idx, j]
                    if oj != lab:
                        delta_dec += theta[idx, j]
                        h = theta_hat[idx, j]
                        if h > 0.0:
                            cut_hats.append(h)
                            pushed += 1
                u[idx] = lab
            else:
                opp = u
                for i in range(n):
                    oi = opp[i]
                    if oi < 0:
                        continue
                    delta_neg += neg_edge[i, idx]
                    if oi != lab:
                        delta_dec += theta[i, idx]
                        h = theta_hat[i, idx]
                        if h > 0.0:
                            cut_hats.append(h)
                            pushed += 1
                v[idx] = lab
            new_decided = decided + delta_dec
            new_neg = neg_undecided - delta_neg
            if new_decided + new_neg < best_cost - gap:
                rec(pos + 1, max(used, lab + 1), new_decided, new_neg)
            # unwind
            if pushed:
                del cut_hats[-pushed:]
            if row:
                u[idx] = -1
            else:
                v[idx] = -1
            counts[lab] -= 1
            if state["timed_out"] or state["done"]:
                return

    rec(0, 0, 0.0, root_bound)
    return _finish(theta, theta_hat, k, best_u, best_v, "exact", gamma,
                   optimal=not state["timed_out"], nodes=state["nodes"])


def _random_feasible(rng: np.random.Generator, count: int, k: int,
                     cmin: int, cmax: int) -> np.ndarray:
    order = rng.permutation(count)
    labels = np.empty(count, dtype=np.int64)
    counts = np.zeros(k, dtype=np.int64)
    for t in range(k * cmin):
        labels[order[t]] = t % k
        counts[t % k] += 1
    for t in range(k * cmin, count):
        avail = np.flatnonzero(counts < cmax)
        lab = int(avail[int(rng.integers(0, avail.size))])
        labels[order[t]] = lab
        counts[lab] += 1
    return labels


def partition_local_search(graph: DependencyGraph, cfg: PartitionConfig,
                           restarts: int = 20, seed: int = 0) -> Partition:
    """Best of `restarts` seeded first-improvement descents.

    Each restart draws a random feasible assignment, then sweeps
    single-node relabels and cross-side label swaps until no move
    improves. Deterministic for a given seed; ties keep the earliest
    restart's answer.
    """
    if restarts < 1:
        raise ValueError("restarts must be >= 1")
    theta = np.asarray(graph.theta, dtype=np.float64)
    theta_hat = np.asarray(graph.theta_hat, dtype=np.float64)
    n, m = theta.shape
    cfg = cfg.resolved(n, m)
    _check_feasible(cfg, n, m)
    rng = np.random.default_rng(seed)
    best = None
    best_cost = math.inf
    for _ in range(restarts):
        u0 = _random_feasible(rng, n, cfg.k, cfg.c_u_min, cfg.c_u_max)
        v0 = _random_feasible(rng, m, cfg.k, cfg.c_v_min, cfg.c_v_max)
        u, v, _ = kernels.local_search_sweep(
            theta, theta_hat, u0, v0, cfg.k, cfg.c_u_min, cfg.c_u_max,
            cfg.c_v_min, cfg.c_v_max, cfg.gamma)
        cross = (u[:, None] != v[None, :]).astype(np.uint8)
        cost = robust_cut_cost(cross, theta, theta_hat, cfg.gamma)
        if cost < best_cost:
            best_cost = cost
            best = (u, v)
    return _finish(theta, theta_hat, cfg.k, best[0], best[1], "local_search", cfg.gamma)


def _kmeans(points: np.ndarray, k: int, rng: np.random.Generator,
            restarts: int = 10, iters: int = 100) -> np.ndarray:
    """Seeded Lloyd iterations with k-means++ starts; empty clusters get
    the point farthest from its current center."""
    npts = points.shape[0]
    best_labels = None
    best_inertia = math.inf
    for _ in range(restarts):
        centers = np.empty((k, points.shape[1]))
        centers[0] = points[int(rng.integers(0, npts))]
        d2 = ((points - centers[0]) ** 2).sum(axis=1)
        for c in range(1, k):
            total = float(d2.sum())
            if total <= 0.0:
                centers[c] = points[int(rng.integers(0, npts))]
            else:
                r = rng.random() * total
                centers[c] = points[int(np.searchsorted(np.cumsum(d2), r))]
            d2 = np.minimum(d2, ((points - centers[c]) ** 2).sum(axis=1))
        labels = np.zeros(npts, dtype=np.int64)
        for _it in range(iters):
            dist = ((points[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
            new_labels = dist.argmin(axis=1)
            for c in range(k):
                if not (new_labels == c).any():
                    # hand the empty cluster the point farthest from its own
                    # center, but never a cluster's only member
                    cur = dist[np.arange(npts), new_labels].copy()
                    for cc in range(k):
                        members = np.flatnonzero(new_labels == cc)
                        if members.size == 1:
                            cur[members[0]] = -1.0
                    new_labels[int(np.argmax(cur))] = c
            if (new_labels == labels).all() and _it > 0:
                break
            labels = new_labels
            for c in range(k):
                members = points[labels == c]
                if len(members):
                    centers[c] = members.mean(axis=0)
        dist = ((points[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        inertia = float(dist[np.arange(npts), labels].sum())
        if inertia < best_inertia:
            best_inertia = inertia
            best_labels = labels.copy()
    return best_labels


def _top_singular(A: np.ndarray, count: int, rng: np.random.Generator,
                  tol: float = 1e-12, max_iter: int = 2000,
                  ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Leading singular triplets by power iteration with deflation."""
    n, m = A.shape
    work = A.astype(np.float64).copy()
    sigmas = np.zeros(count)
    U = np.zeros((n, count))
    V = np.zeros((m, count))
    for t in range(count):
        v = rng.normal(size=m)
        v /= np.linalg.norm(v)
        sigma = 0.0
        u = np.zeros(n)
        for _ in range(max_iter):
            u_raw = work @ v
            nu = np.linalg.norm(u_raw)
            if nu == 0.0:
                sigma = 0.0
                break
            u = u_raw / nu
            v_raw = work.T @ u
            new_sigma = np.linalg.norm(v_raw)
            if new_sigma == 0.0:
                sigma = 0.0
                break
            v = v_raw / new_sigma
            if abs(new_sigma - sigma) <= tol * max(1.0, new_sigma):
                sigma = new_sigma
                break
            sigma = new_sigma
        sigmas[t] = sigma
        U[:, t] = u
        V[:, t] = v
        if sigma > 0.0:
            work -= sigma * np.outer(u, v)
    return sigmas, U, V


def cocluster_spectral(graph: DependencyGraph, k: int, gamma: float = 0.0,
                       seed: int = 0, kmeans_restarts: int = 10) -> Partition:
    """Spectral co-clustering of the degree-normalized dependency matrix.

    Normalizes theta by sqrt of row/column degrees (unit degree where a
    sum is zero), takes the leading ceil(log2 k) + 1 singular pairs, drops
    the trivial first pair, scales the rest back by the degree roots and
    k-means clusters the joint row/column embedding. Cardinality bounds
    are NOT enforced; the returned cost still charges the robust objective
    with the given gamma.
    """
    theta = np.asarray(graph.theta, dtype=np.float64)
    theta_hat = np.asarray(graph.theta_hat, dtype=np.float64)
    n, m = theta.shape
    if k < 1 or k > min(n, m):
        raise InvalidKError(f"k must be in [1, {min(n, m)}] for a {n}x{m} graph, got {k}")
    if k == 1:
        return _finish(theta, theta_hat, 1, np.zeros(n, int), np.zeros(m, int),
                       "spectral", gamma)
    d1 = theta.sum(axis=1)
    d2 = theta.sum(axis=0)
    s1 = 1.0 / np.sqrt(np.where(d1 > 0.0, d1, 1.0))
    s2 = 1.0 / np.sqrt(np.where(d2 > 0.0, d2, 1.0))
    An = s1[:, None] * theta * s2[None, :]
    ell = min(math.ceil(math.log2(k)) + 1, n, m)
    rng = np.random.default_rng(seed)
    _, U, V = _top_singular(An, ell, rng)
    emb_u = s1[:, None] * U[:, 1:]
    emb_v = s2[:, None] * V[:, 1:]
    labels = _kmeans(np.vstack([emb_u, emb_v]), k, rng, restarts=kmeans_restarts)
    return _finish(theta, theta_hat, k, labels[:n], labels[n:], "spectral", gamma)
