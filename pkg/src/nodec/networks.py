"""Undirected graph generators and the graph Laplacian."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ParameterError

TOPOLOGIES = ("complete", "erdos_renyi", "lattice", "watts_strogatz")
_MAX_RESAMPLES = 10_000


@dataclass(frozen=True, eq=False)
class Graph:
    n: int
    edges: tuple[tuple[int, int], ...]  # sorted pairs (i < j), sorted list
    adjacency: np.ndarray

    @classmethod
    def from_edges(cls, n: int, edges) -> "Graph":
        canon = sorted({(min(i, j), max(i, j)) for i, j in edges})
        adj = np.zeros((n, n))
        for i, j in canon:
            if i == j:
                raise ParameterError("self-loops are not allowed")
            adj[i, j] = adj[j, i] = 1.0
        adj.setflags(write=False)
        return cls(n, tuple(canon), adj)

    @property
    def edge_array(self) -> np.ndarray:
        return np.array(self.edges, dtype=int).reshape(-1, 2)

    def degrees(self) -> np.ndarray:
        return self.adjacency.sum(axis=1)


def is_connected(g: Graph) -> bool:
    seen = np.zeros(g.n, dtype=bool)
    seen[0] = True
    frontier = np.array([0])
    adj = g.adjacency > 0
    while frontier.size:
        nxt = adj[frontier].any(axis=0) & ~seen
        seen |= nxt
        frontier = np.flatnonzero(nxt)
    return bool(seen.all())


def _check_n(n: int) -> None:
    if int(n) != n or n < 2:
        raise ParameterError(f"need n >= 2, got {n}")


def _check_p(p: float) -> None:
    if not 0.0 <= p <= 1.0:
        raise ParameterError(f"probability must lie in [0, 1], got {p}")


def complete(n: int) -> Graph:
    _check_n(n)
    return Graph.from_edges(n, ((i, j) for i in range(n) for j in range(i + 1, n)))


def square_lattice(rows: int, cols: int) -> Graph:
    """Non-periodic ``rows x cols`` grid with 4-neighbourhoods; node id ``r*cols + c``."""
    if rows < 1 or cols < 1 or rows * cols < 2:
        raise ParameterError("lattice needs at least two nodes")
    edges = []
    for r in range(rows):
        for c in range(cols):
            i = r * cols + c
            if c + 1 < cols:
                edges.append((i, i + 1))
            if r + 1 < rows:
                edges.append((i, i + cols))
    return Graph.from_edges(rows * cols, edges)


def _resample_until_connected(build, seed: int) -> Graph:
    # each attempt gets its own derived stream so results depend only on (params, seed)
    for attempt in range(_MAX_RESAMPLES):
        g = build(np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(attempt,))))
        if is_connected(g):
            return g
    raise ParameterError("could not sample a connected graph; parameters too sparse")


def erdos_renyi(n: int, p: float, seed: int) -> Graph:
    """G(n, p), resampled with derived seeds until connected."""
    _check_n(n)
    _check_p(p)

    def build(rng):
        iu, ju = np.triu_indices(n, k=1)
        keep = rng.random(iu.size) < p
        return Graph.from_edges(n, zip(iu[keep].tolist(), ju[keep].tolist()))

    return _resample_until_connected(build, seed)


def watts_strogatz(n: int, k: int, p: float, seed: int) -> Graph:
    """Ring lattice with ``k // 2`` neighbours per side, each edge rewired with probability ``p``.

    Rewiring keeps the first endpoint and moves the second to a uniformly
    chosen node, skipping self-loops and existing edges.
    """
    _check_n(n)
    _check_p(p)
    if not 1 <= k < n:
        raise ParameterError(f"need 1 <= k < n, got k={k}, n={n}")
    half = k // 2
    if half < 1:
        raise ParameterError("k must be at least 2")

    def build(rng):
        adj = np.zeros((n, n), dtype=bool)
        ring = [(i, (i + d) % n) for d in range(1, half + 1) for i in range(n)]
        for i, j in ring:
            adj[i, j] = adj[j, i] = True
        for i, j in ring:
            if rng.random() >= p:
                continue
            candidates = np.flatnonzero(~adj[i])
            candidates = candidates[candidates != i]
            if candidates.size == 0:
                continue
            new = int(rng.choice(candidates))
            adj[i, j] = adj[j, i] = False
            adj[i, new] = adj[new, i] = True
        iu, ju = np.nonzero(np.triu(adj, 1))
        return Graph.from_edges(n, zip(iu.tolist(), ju.tolist()))

    return _resample_until_connected(build, seed)


def laplacian(g: Graph) -> np.ndarray:
    return np.diag(g.degrees()) - g.adjacency


def make_graph(topology: str, n: int, seed: int, *, er_p: float = 0.3, ws_k: int = 5,
               ws_p: float = 0.3) -> Graph:
    """Build one of the experiment topologies. ``lattice`` needs ``n`` to be a perfect square."""
    if topology == "complete":
        return complete(n)
    if topology == "erdos_renyi":
        return erdos_renyi(n, er_p, seed)
    if topology == "lattice":
        side = int(round(np.sqrt(n)))
        if side * side != n:
            raise ParameterError(f"lattice size {n} is not a perfect square")
        return square_lattice(side, side)
    if topology == "watts_strogatz":
        return watts_strogatz(n, ws_k, ws_p, seed)
    raise ParameterError(f"unknown topology {topology!r}; choose from {TOPOLOGIES}")


def write_edge_list(g: Graph, path) -> Path:
    path = Path(path)
    path.write_text("".join(f"{i} {j}\n" for i, j in g.edges))
    return path


def read_edge_list(path, n: int) -> Graph:
    edges = [tuple(map(int, line.split())) for line in Path(path).read_text().splitlines() if line.strip()]
    return Graph.from_edges(n, edges)
