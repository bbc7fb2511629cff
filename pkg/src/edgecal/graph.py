"""Undirected simple graphs in CSR layout, edge splits and negative sampling."""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from typing import Iterable, Iterator, NamedTuple

import numpy as np
import scipy.sparse as sp

from .errors import ContractError


def _rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def canonical_edges(edges, n: int | None = None) -> np.ndarray:
    """Return unique ``(min, max)`` pairs sorted lexicographically, self-loops dropped."""
    arr = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    if n is not None and arr.size and (arr.min() < 0 or arr.max() >= n):
        raise ContractError(f"edge endpoint out of range for {n} nodes")
    arr = np.sort(arr, axis=1)
    arr = arr[arr[:, 0] != arr[:, 1]]
    if not len(arr):
        return np.zeros((0, 2), dtype=np.int64)
    return np.unique(arr, axis=0)


class Graph:
    """Immutable undirected graph; adjacency lists sorted, no self-loops or duplicates."""

    __slots__ = ("n", "indptr", "indices", "degrees", "_edges")

    def __init__(self, n: int, indptr: np.ndarray, indices: np.ndarray):
        self.n = int(n)
        self.indptr = np.asarray(indptr, dtype=np.int64)
        self.indices = np.asarray(indices, dtype=np.int64)
        self.degrees = np.diff(self.indptr)
        for a in (self.indptr, self.indices, self.degrees):
            a.setflags(write=False)
        self._edges = None

    @classmethod
    def from_edges(cls, n: int, edges) -> Graph:
        und = canonical_edges(edges, n)
        both = np.concatenate([und, und[:, ::-1]]) if len(und) else und
        order = np.lexsort((both[:, 1], both[:, 0])) if len(both) else np.zeros(0, dtype=np.int64)
        both = both[order]
        counts = np.bincount(both[:, 0], minlength=n) if len(both) else np.zeros(n, dtype=np.int64)
        indptr = np.concatenate([[0], np.cumsum(counts)])
        return cls(n, indptr, both[:, 1] if len(both) else np.zeros(0, dtype=np.int64))

    @property
    def num_edges(self) -> int:
        return len(self.indices) // 2

    def neighbors(self, u: int) -> np.ndarray:
        return self.indices[self.indptr[u] : self.indptr[u + 1]]

    def has_edge(self, u: int, v: int) -> bool:
        nb = self.neighbors(u)
        i = np.searchsorted(nb, v)
        return bool(i < len(nb) and nb[i] == v)

    def edges(self) -> np.ndarray:
        """Each undirected edge once as ``(u, v)`` with ``u < v``."""
        if self._edges is None:
            src = np.repeat(np.arange(self.n), self.degrees)
            keep = src < self.indices
            e = np.stack([src[keep], self.indices[keep]], axis=1)
            e.setflags(write=False)
            self._edges = e
        return self._edges

    def edge_keys(self) -> np.ndarray:
        e = self.edges()
        return e[:, 0] * self.n + e[:, 1]

    def adjacency(self) -> sp.csr_matrix:
        data = np.ones(len(self.indices))
        return sp.csr_matrix((data, self.indices, self.indptr), shape=(self.n, self.n))

    def with_edges(self, edges) -> Graph:
        return Graph.from_edges(self.n, edges)

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, Graph)
            and self.n == other.n
            and np.array_equal(self.indptr, other.indptr)
            and np.array_equal(self.indices, other.indices)
        )

    def __hash__(self):
        return hash((self.n, self.indices.tobytes()))

    def __repr__(self) -> str:
        return f"Graph(n={self.n}, edges={self.num_edges})"


def normalized_adjacency(g: Graph) -> sp.csr_matrix:
    """(D+I)^-1/2 (A+I) (D+I)^-1/2 as a sparse matrix."""
    scale = 1.0 / np.sqrt(g.degrees + 1.0)
    a_hat = g.adjacency() + sp.identity(g.n, format="csr")
    a_hat = sp.csr_matrix(a_hat)
    a_hat.sort_indices()
    rows = np.repeat(np.arange(g.n), np.diff(a_hat.indptr))
    a_hat.data = scale[rows] * scale[a_hat.indices]
    return a_hat


def mean_adjacency(g: Graph) -> sp.csr_matrix:
    """Row-normalized adjacency D^-1 A; isolated nodes get an all-zero row."""
    inv = np.zeros(g.n)
    nz = g.degrees > 0
    inv[nz] = 1.0 / g.degrees[nz]
    a = g.adjacency()
    rows = np.repeat(np.arange(g.n), g.degrees)
    a.data = inv[rows]
    return a


@dataclass(frozen=True)
class EdgeSplit:
    train_pos: np.ndarray
    val_pos: np.ndarray
    test_pos: np.ndarray
    val_neg: np.ndarray
    test_neg: np.ndarray


class CalibrationTriple(NamedTuple):
    u: int
    v: int
    y: int


@dataclass(frozen=True)
class LabeledEdges:
    """Edges with 0/1 labels, stored column-wise."""

    edges: np.ndarray
    labels: np.ndarray

    def __len__(self) -> int:
        return len(self.labels)

    def __iter__(self) -> Iterator[CalibrationTriple]:
        for (u, v), y in zip(self.edges.tolist(), self.labels.tolist()):
            yield CalibrationTriple(u, v, int(y))

    @classmethod
    def from_pos_neg(cls, pos, neg) -> LabeledEdges:
        pos = np.asarray(pos, dtype=np.int64).reshape(-1, 2)
        neg = np.asarray(neg, dtype=np.int64).reshape(-1, 2)
        labels = np.concatenate([np.ones(len(pos)), np.zeros(len(neg))])
        return cls(np.concatenate([pos, neg]), labels)


def split_edges(g: Graph, fractions=(0.8, 0.1, 0.1), seed=0) -> EdgeSplit:
    """Shuffle the edges and cut them into train/val/test; draw matching val/test negatives."""
    if len(fractions) != 3 or not np.isclose(np.sum(fractions), 1.0) or min(fractions) < 0:
        raise ContractError(f"fractions must be three non-negative numbers summing to 1, got {fractions}")
    m = g.num_edges
    if m < 10:
        raise ContractError(f"need at least 10 edges to split, graph has {m}")
    rng = _rng(seed)
    edges = g.edges()[rng.permutation(m)]
    n_val = int(round(fractions[1] * m))
    n_test = int(round(fractions[2] * m))
    n_train = m - n_val - n_test
    neg = sample_negative_edges(g, n_val + n_test, rng)
    return EdgeSplit(
        train_pos=edges[:n_train],
        val_pos=edges[n_train : n_train + n_val],
        test_pos=edges[n_train + n_val :],
        val_neg=neg[:n_val],
        test_neg=neg[n_val:],
    )


def sample_negative_edges(g: Graph, k: int, seed=0, exclude=None) -> np.ndarray:
    """Draw ``k`` distinct node pairs uniformly among pairs that are neither edges nor excluded."""
    rng = _rng(seed)
    n = g.n
    banned = set(g.edge_keys().tolist())
    if exclude is not None and len(exclude):
        ex = canonical_edges(exclude, n)
        banned.update((ex[:, 0] * n + ex[:, 1]).tolist())
    available = n * (n - 1) // 2 - len(banned)
    if k < 0 or k > available:
        raise ContractError(f"cannot draw {k} negative pairs, only {available} available")
    if k == 0:
        return np.zeros((0, 2), dtype=np.int64)
    if k > available // 2:
        iu, iv = np.triu_indices(n, 1)
        keys = iu * n + iv
        mask = ~np.isin(keys, np.fromiter(banned, dtype=np.int64, count=len(banned)))
        pool = np.stack([iu[mask], iv[mask]], axis=1)
        return pool[rng.choice(len(pool), size=k, replace=False)]
    chosen: list[int] = []
    seen = set()
    while len(chosen) < k:
        batch = max(2 * (k - len(chosen)), 16)
        a = rng.integers(0, n, size=batch)
        b = rng.integers(0, n, size=batch)
        for x, y in zip(a.tolist(), b.tolist()):
            if x == y:
                continue
            key = x * n + y if x < y else y * n + x
            if key in banned or key in seen:
                continue
            seen.add(key)
            chosen.append(key)
            if len(chosen) == k:
                break
    keys = np.asarray(chosen, dtype=np.int64)
    return np.stack([keys // n, keys % n], axis=1)


def toggle_edge(g: Graph, u: int, v: int) -> Graph:
    """Add (u, v) if absent, remove it if present. ``g`` is left untouched."""
    if u == v:
        raise ContractError(f"cannot toggle a self-loop ({u}, {v})")
    a, b = (u, v) if u < v else (v, u)
    edges = g.edges()
    if g.has_edge(a, b):
        keep = ~((edges[:, 0] == a) & (edges[:, 1] == b))
        return Graph.from_edges(g.n, edges[keep])
    return Graph.from_edges(g.n, np.concatenate([edges, [[a, b]]]))


def toggled_neighbors(g: Graph, u: int, v: int, w: int) -> np.ndarray:
    """Sorted neighbors of ``w`` in ``toggle_edge(g, u, v)`` without building that graph."""
    nb = g.neighbors(w)
    if w != u and w != v:
        return nb
    other = v if w == u else u
    i = np.searchsorted(nb, other)
    if i < len(nb) and nb[i] == other:
        return np.delete(nb, i)
    return np.insert(nb, i, other)


def hop_distances(g: Graph, sources: Iterable[int], depth: int, toggle: tuple[int, int] | None = None) -> dict[int, int]:
    """BFS distance (capped at ``depth``) from the nearest source; optionally on the toggled graph."""
    dist = {}
    queue = deque()
    for s in sources:
        if s not in dist:
            dist[s] = 0
            queue.append(s)
    while queue:
        w = queue.popleft()
        d = dist[w]
        if d == depth:
            continue
        nb = toggled_neighbors(g, toggle[0], toggle[1], w) if toggle else g.neighbors(w)
        for x in nb.tolist():
            if x not in dist:
                dist[x] = d + 1
                queue.append(x)
    return dist


def receptive_field(g: Graph, u: int, v: int, layers: int) -> set[int]:
    """Nodes within ``layers`` hops of u or v once (u, v) is toggled."""
    if layers < 1:
        raise ContractError(f"layer count must be >= 1, got {layers}")
    if u == v:
        raise ContractError(f"cannot toggle a self-loop ({u}, {v})")
    return set(hop_distances(g, (u, v), layers, toggle=(u, v)))
