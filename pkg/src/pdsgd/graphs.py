"""Undirected communication graphs, Laplacians, spectra, and mixing weights.

Graphs are immutable: ``n`` agents labelled ``0..n-1`` and a frozen set of
unordered edges. All algebraic objects (Laplacian, Metropolis weights) are
built with unit edge weights.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "Graph",
    "LaplacianSpectrum",
    "MixingMatrix",
    "build_named",
    "random_connected",
    "laplacian",
    "spectrum",
    "metropolis_weights",
    "read_edge_list",
    "write_edge_list",
]

#: relative tolerance (times rho) below which a Laplacian eigenvalue counts as zero
EIG_ZERO_RTOL = 1e-9

# the 10-node topology used throughout the experiments (0-indexed edges)
_FIG1_EDGES = frozenset(
    {(0, 1), (1, 2), (1, 3), (2, 3), (2, 6), (3, 4), (3, 5), (4, 5), (6, 7), (7, 8), (8, 9)}
)


def _normalize_edge(i: int, j: int) -> tuple[int, int]:
    return (i, j) if i < j else (j, i)


@dataclass(frozen=True)
class Graph:
    """An undirected graph on ``n`` agents with 0-indexed unordered edges."""

    n: int
    edges: frozenset[tuple[int, int]]

    def __post_init__(self) -> None:
        if self.n < 1:
            raise ValueError(f"agent count must be >= 1, got {self.n}")
        for (i, j) in self.edges:
            if i == j:
                raise ValueError(f"self-loop ({i},{j}) not allowed")
            if not (0 <= i < j < self.n):
                raise ValueError(f"edge ({i},{j}) out of range or not normalized for n={self.n}")

    @property
    def degrees(self) -> np.ndarray:
        d = np.zeros(self.n, dtype=np.int64)
        for (i, j) in self.edges:
            d[i] += 1
            d[j] += 1
        return d

    def neighbors(self, i: int) -> list[int]:
        out = [j for (a, j) in self.edges if a == i]
        out += [a for (a, j) in self.edges if j == i]
        return sorted(out)

    def is_connected(self) -> bool:
        """Breadth-first search connectivity check on the edge set."""
        if self.n == 1:
            return True
        adj: list[list[int]] = [[] for _ in range(self.n)]
        for (i, j) in self.edges:
            adj[i].append(j)
            adj[j].append(i)
        seen = np.zeros(self.n, dtype=bool)
        queue: deque[int] = deque([0])
        seen[0] = True
        while queue:
            u = queue.popleft()
            for w in adj[u]:
                if not seen[w]:
                    seen[w] = True
                    queue.append(w)
        return bool(seen.all())


def _make_graph(n: int, edges) -> Graph:
    return Graph(n, frozenset(_normalize_edge(i, j) for (i, j) in edges))


def build_named(topology: str, n: int) -> Graph:
    """Construct a named topology.

    Parameters
    ----------
    topology : {"path", "ring", "star", "complete", "fig1"}
        ``fig1`` is the fixed 10-node experiment graph; the others are
        parametric families for sweeps.
    n : int
        Agent count; ``fig1`` requires ``n = 10``, ``ring`` requires
        ``n >= 3``, ``star`` requires ``n >= 2``.
    """
    if n < 1:
        raise ValueError(f"agent count must be >= 1, got {n}")
    if topology == "path":
        return _make_graph(n, ((i, i + 1) for i in range(n - 1)))
    if topology == "ring":
        if n < 3:
            raise ValueError(f"ring requires n >= 3, got {n}")
        return _make_graph(n, [(i, (i + 1) % n) for i in range(n)])
    if topology == "star":
        if n < 2:
            raise ValueError(f"star requires n >= 2, got {n}")
        return _make_graph(n, ((0, i) for i in range(1, n)))
    if topology == "complete":
        return _make_graph(n, ((i, j) for i in range(n) for j in range(i + 1, n)))
    if topology == "fig1":
        if n != 10:
            raise ValueError(f"fig1 is a fixed 10-node graph, got n={n}")
        return Graph(10, _FIG1_EDGES)
    raise ValueError(f"unknown topology {topology!r}")


def random_connected(n: int, extra_edge_prob: float, seed: int) -> Graph:
    """Seeded random connected graph: a uniform spanning tree plus extras.

    A uniformly random labelled tree is drawn by decoding a random Prüfer
    sequence; every remaining pair is then added independently with
    probability ``extra_edge_prob``.
    """
    if n < 1:
        raise ValueError(f"agent count must be >= 1, got {n}")
    if not (0.0 <= extra_edge_prob <= 1.0):
        raise ValueError(f"extra_edge_prob must be in [0,1], got {extra_edge_prob}")
    rng = np.random.default_rng((seed, 0x9E3779B9))
    edges: set[tuple[int, int]] = set()
    if n >= 2:
        if n == 2:
            edges.add((0, 1))
        else:
            prufer = rng.integers(0, n, size=n - 2)
            degree = np.ones(n, dtype=np.int64)
            for v in prufer:
                degree[v] += 1
            for v in prufer:
                leaf = int(np.flatnonzero(degree == 1)[0])
                edges.add(_normalize_edge(leaf, int(v)))
                degree[leaf] -= 1
                degree[v] -= 1
            u, w = np.flatnonzero(degree == 1)
            edges.add(_normalize_edge(int(u), int(w)))
        if extra_edge_prob > 0.0:
            for i in range(n):
                for j in range(i + 1, n):
                    if (i, j) not in edges and rng.random() < extra_edge_prob:
                        edges.add((i, j))
    return Graph(n, frozenset(edges))


def laplacian(g: Graph) -> np.ndarray:
    """Unit-weight graph Laplacian ``L = D - A`` as a float array.

    Entries are exact small integers, so row sums are exactly zero in
    floating point.
    """
    L = np.zeros((g.n, g.n))
    for (i, j) in g.edges:
        L[i, j] = -1.0
        L[j, i] = -1.0
        L[i, i] += 1.0
        L[j, j] += 1.0
    return L


@dataclass(frozen=True)
class LaplacianSpectrum:
    """Eigenvalue summary of a graph Laplacian.

    ``rho`` is the spectral radius, ``rho2`` the smallest eigenvalue above
    the zero tolerance (``None`` when the graph is disconnected), and
    ``rho_l2 = rho**2`` the spectral radius of ``L @ L``.
    """

    eigenvalues: np.ndarray = field(repr=False)
    rho: float
    rho2: float | None
    rho_l2: float

    @property
    def connected(self) -> bool:
        return self.rho2 is not None

    def require_rho2(self) -> float:
        """``rho2`` for algorithm use; raises on disconnected graphs."""
        if self.rho2 is None:
            raise ValueError("graph is disconnected: no positive Laplacian spectral gap")
        return self.rho2


def spectrum(g: Graph) -> LaplacianSpectrum:
    """Symmetric eigensolve of the Laplacian with a scale-relative zero cut.

    The second-smallest eigenvalue decides connectivity: it is ``rho2``
    when above the zero tolerance and the graph is connected, else ``rho2``
    is ``None`` (every eigenvalue beyond the first zero is then a
    per-component quantity, not a consensus gap).
    """
    eigs = np.linalg.eigvalsh(laplacian(g))
    rho = float(eigs[-1])
    tol = EIG_ZERO_RTOL * max(rho, 1.0)
    rho2 = float(eigs[1]) if g.n > 1 and eigs[1] > tol else None
    eigs = eigs.copy()
    eigs.setflags(write=False)
    return LaplacianSpectrum(eigenvalues=eigs, rho=rho, rho2=rho2, rho_l2=rho * rho)


@dataclass(frozen=True)
class MixingMatrix:
    """Symmetric doubly stochastic weight matrix aligned with a graph."""

    w: np.ndarray = field(repr=False)

    def __post_init__(self) -> None:
        w = self.w
        if w.ndim != 2 or w.shape[0] != w.shape[1]:
            raise ValueError("mixing matrix must be square")
        if not np.allclose(w, w.T, atol=1e-12, rtol=0.0):
            raise ValueError("mixing matrix must be symmetric")
        ones = np.ones(w.shape[0])
        if not np.allclose(w @ ones, ones, atol=1e-12, rtol=0.0):
            raise ValueError("mixing matrix rows must sum to 1")
        if w.min() < -1e-15:
            raise ValueError("mixing matrix entries must be nonnegative")
        w.setflags(write=False)


def metropolis_weights(g: Graph) -> MixingMatrix:
    """Metropolis weights: ``w_ij = 1/(1 + max(d_i, d_j))`` on edges.

    Diagonal entries absorb the remainder so each row sums to one. Requires
    a connected graph.
    """
    if not g.is_connected():
        raise ValueError("metropolis weights require a connected graph")
    d = g.degrees
    w = np.zeros((g.n, g.n))
    for (i, j) in g.edges:
        w_ij = 1.0 / (1.0 + max(d[i], d[j]))
        w[i, j] = w_ij
        w[j, i] = w_ij
    for i in range(g.n):
        w[i, i] = 1.0 - (w[i].sum() - w[i, i])
    return MixingMatrix(w)


def read_edge_list(path) -> Graph:
    """Read a graph from text lines of ``"i j"`` pairs (0-indexed).

    The agent count is inferred as ``max index + 1``. Blank lines and lines
    starting with ``#`` are skipped.
    """
    edges: set[tuple[int, int]] = set()
    nmax = -1
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            stripped = line.strip()
            if not stripped or stripped.startswith("#"):
                continue
            parts = stripped.split()
            if len(parts) != 2:
                raise ValueError(f"{path}:{lineno}: expected 'i j', got {stripped!r}")
            i, j = int(parts[0]), int(parts[1])
            if i == j:
                raise ValueError(f"{path}:{lineno}: self-loop {i}")
            edges.add(_normalize_edge(i, j))
            nmax = max(nmax, i, j)
    if nmax < 0:
        raise ValueError(f"{path}: no edges found")
    return Graph(nmax + 1, frozenset(edges))


def write_edge_list(g: Graph, path) -> None:
    """Write the edge set as ``"i j"`` lines, sorted, 0-indexed."""
    with open(path, "w", encoding="utf-8") as fh:
        for (i, j) in sorted(g.edges):
            fh.write(f"{i} {j}\n")
