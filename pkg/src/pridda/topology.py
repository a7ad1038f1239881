"""Communication graphs, node sampling and gossip matrices.

Nodes are numbered ``1..n`` in every user-facing structure (edges, files)
and ``0..n-1`` in arrays.
"""

from __future__ import annotations

import functools
import itertools
import math
from dataclasses import dataclass, field
from typing import Callable, FrozenSet, Iterable, Tuple

import networkx as nx
import numpy as np

from .errors import InfeasibleSampling, InvalidArgument

Edge = Tuple[int, int]

STRATEGIES = ("matching", "full")


def _canonical(edge) -> Edge:
    i, j = (int(v) for v in edge)
    return (i, j) if i < j else (j, i)


@dataclass(frozen=True)
class Graph:
    """Undirected simple graph on nodes ``1..node_count``."""

    node_count: int
    edges: FrozenSet[Edge]

    def __post_init__(self):
        if self.node_count < 1:
            raise InvalidArgument("node_count must be positive")
        canon = frozenset(_canonical(e) for e in self.edges)
        for i, j in canon:
            if i == j:
                raise InvalidArgument(f"self-loop at node {i}")
            if not (1 <= i <= self.node_count and 1 <= j <= self.node_count):
                raise InvalidArgument(f"edge {(i, j)} references a missing node")
        object.__setattr__(self, "edges", canon)

    @property
    def is_complete(self) -> bool:
        n = self.node_count
        return len(self.edges) == n * (n - 1) // 2

    @functools.cached_property
    def edge_list(self) -> Tuple[Edge, ...]:
        return tuple(sorted(self.edges))

    @functools.cached_property
    def max_matching_size(self) -> int:
        g = nx.Graph()
        g.add_nodes_from(range(1, self.node_count + 1))
        g.add_edges_from(self.edges)
        return len(nx.max_weight_matching(g, maxcardinality=True))


def build_complete_graph(n: int) -> Graph:
    if n < 2:
        raise InvalidArgument(f"a complete graph needs at least 2 nodes, got {n}")
    return Graph(n, frozenset(itertools.combinations(range(1, n + 1), 2)))


def sample_matching(graph: Graph, k: int, rng: np.random.Generator) -> FrozenSet[Edge]:
    """Draw ``k`` node-disjoint edges, uniformly over all size-``k`` matchings.

    On a complete graph the first ``2k`` entries of a random permutation are
    paired up; every matching is hit by the same number of permutations.
    Otherwise a uniform ``k``-subset of edges is drawn until it is a matching.
    """
    if k < 1:
        raise InvalidArgument("k must be a positive integer")
    n = graph.node_count
    if graph.is_complete:
        if 2 * k > n:
            raise InfeasibleSampling(f"K{n} has no matching of size {k}")
        perm = rng.permutation(n)[: 2 * k] + 1
        return frozenset(_canonical(perm[2 * r : 2 * r + 2]) for r in range(k))

    if graph.max_matching_size < k:
        raise InfeasibleSampling(
            f"graph has no matching of size {k} "
            f"(maximum is {graph.max_matching_size})"
        )
    edges = graph.edge_list
    while True:
        pick = rng.choice(len(edges), size=k, replace=False)
        chosen = [edges[p] for p in pick]
        touched = {v for e in chosen for v in e}
        if len(touched) == 2 * k:
            return frozenset(chosen)


@dataclass(frozen=True)
class GossipMatrix:
    """Mixing matrix of one round together with the active-node mask."""

    entries: np.ndarray
    active: np.ndarray

    @property
    def n(self) -> int:
        return self.entries.shape[0]

    @property
    def active_count(self) -> int:
        return int(self.active.sum())

    def is_doubly_stochastic(self, tol: float = 1e-12) -> bool:
        w = self.entries
        return bool(
            np.all(np.abs(w.sum(axis=1) - 1.0) <= tol)
            and np.all(np.abs(w.sum(axis=0) - 1.0) <= tol)
        )

    def is_symmetric(self, tol: float = 1e-12) -> bool:
        return bool(np.all(np.abs(self.entries - self.entries.T) <= tol))


def metropolis_matrix(graph: Graph, sampled_edges: Iterable[Edge]) -> GossipMatrix:
    """Metropolis weights on the sampled subgraph.

    Degrees are counted inside the sampled subgraph, so nodes untouched by
    the sample keep an identity row.
    """
    n = graph.node_count
    sampled = [_canonical(e) for e in sampled_edges]
    for e in sampled:
        if e not in graph.edges:
            raise InvalidArgument(f"edge {e} is not in the graph")
    sampled = sorted(set(sampled))

    degree = np.zeros(n, dtype=int)
    for i, j in sampled:
        degree[i - 1] += 1
        degree[j - 1] += 1

    w = np.zeros((n, n))
    for i, j in sampled:
        weight = 1.0 / (1 + max(degree[i - 1], degree[j - 1]))
        w[i - 1, j - 1] = weight
        w[j - 1, i - 1] = weight
    w[np.diag_indices(n)] = 1.0 - w.sum(axis=1)
    return GossipMatrix(entries=w, active=degree > 0)


@dataclass(frozen=True)
class GossipSampler:
    """Draws one gossip matrix per call.

    ``matching`` activates a uniform random matching of ``k`` edges;
    ``full`` activates every edge of the graph (all nodes active, so the
    sampling ratio is 1).
    """

    graph: Graph
    strategy: str = "matching"
    k: int = 1
    _full: GossipMatrix = field(init=False, repr=False, compare=False, default=None)

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise InvalidArgument(f"unknown sampling strategy {self.strategy!r}")
        if self.strategy == "matching":
            if self.k < 1:
                raise InvalidArgument("k must be a positive integer")
            if 2 * self.k > self.graph.node_count:
                raise InfeasibleSampling(
                    f"{2 * self.k} active nodes requested on {self.graph.node_count} nodes"
                )
        else:
            object.__setattr__(self, "_full", metropolis_matrix(self.graph, self.graph.edges))

    @property
    def n(self) -> int:
        return self.graph.node_count

    @property
    def active_count(self) -> int:
        if self.strategy == "full":
            return self._full.active_count
        return 2 * self.k

    @property
    def iota(self) -> float:
        return self.active_count / self.n

    def sample_edges(self, rng: np.random.Generator) -> FrozenSet[Edge]:
        if self.strategy == "full":
            return self.graph.edges
        return sample_matching(self.graph, self.k, rng)

    def __call__(self, rng: np.random.Generator) -> GossipMatrix:
        if self.strategy == "full":
            return self._full
        return metropolis_matrix(self.graph, self.sample_edges(rng))

    def analytic_beta(self):
        """Closed-form mixing parameter where one is known, else ``None``.

        Matching matrices are orthogonal projections (``W^T W = W``), and on
        ``K_n`` each matched edge is marginally uniform, which gives
        ``E[W] = I - k (nI - 11^T) / (n (n-1))``.
        """
        if not self.graph.is_complete:
            return None
        n = self.n
        if self.strategy == "full":
            return 0.0
        return math.sqrt(max(0.0, 1.0 - self.k / (n - 1)))


@dataclass(frozen=True)
class BetaEstimate:
    value: float
    trials: int
    standard_error: float


def spectral_radius(matrix: np.ndarray, tol: float = 1e-10, max_iter: int = 10_000) -> float:
    """Largest-magnitude eigenvalue of a symmetric matrix by power iteration."""
    n = matrix.shape[0]
    v = np.sqrt(np.arange(1, n + 1, dtype=float))
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(max_iter):
        w = matrix @ v
        norm = np.linalg.norm(w)
        if norm == 0.0:
            return 0.0
        new_lam = abs(float(v @ w))
        v = w / norm
        if abs(new_lam - lam) <= tol * max(abs(new_lam), np.finfo(float).tiny):
            return new_lam
        lam = new_lam
    return lam


def _beta_from_mean(mean_wtw: np.ndarray) -> float:
    n = mean_wtw.shape[0]
    rho = spectral_radius(mean_wtw - np.full((n, n), 1.0 / n))
    return float(np.clip(math.sqrt(max(rho, 0.0)), 0.0, 1.0))


def estimate_beta(
    sampler: Callable[[np.random.Generator], GossipMatrix],
    n: int,
    trials: int,
    rng: np.random.Generator,
    batches: int = 10,
) -> BetaEstimate:
    """Monte-Carlo estimate of the mixing parameter.

    The standard error comes from batch means over ``batches`` equal chunks
    of the trials; it is zero when fewer than two chunks are available.
    """
    if trials < 1:
        raise InvalidArgument("trials must be positive")
    n_batches = max(1, min(batches, trials // 2))
    edges = np.linspace(0, trials, n_batches + 1).astype(int)
    total = np.zeros((n, n))
    batch_values = []
    for b in range(n_batches):
        acc = np.zeros((n, n))
        for _ in range(edges[b], edges[b + 1]):
            w = sampler(rng).entries
            acc += w.T @ w
        total += acc
        if n_batches > 1:
            batch_values.append(_beta_from_mean(acc / (edges[b + 1] - edges[b])))
    value = _beta_from_mean(total / trials)
    se = float(np.std(batch_values, ddof=1) / math.sqrt(n_batches)) if n_batches > 1 else 0.0
    return BetaEstimate(value=value, trials=trials, standard_error=se)
