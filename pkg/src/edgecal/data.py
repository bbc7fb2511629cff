"""Synthetic graphs and on-disk datasets.

Edge files are UTF-8 text with one ``u<TAB>v`` pair per line (any
whitespace is accepted, extra columns such as weights are ignored), 0-based
ids and ``#`` comments. Feature files are header-less CSV, row ``r`` holding
the features of node ``r``.
"""
from __future__ import annotations

from pathlib import Path

import numpy as np

from .errors import ContractError, DataError
from .graph import Graph


def fallback_features(g: Graph) -> np.ndarray:
    """Degree plus a constant column, for graphs shipped without features."""
    return np.stack([g.degrees.astype(np.float64), np.ones(g.n)], axis=1)


def generate_sbm(
    blocks: int = 2,
    nodes_per_block: int = 200,
    p_in: float = 0.1,
    p_out: float = 0.01,
    feature_dim: int = 16,
    seed=0,
    noise: float = 1.0,
) -> tuple[Graph, np.ndarray]:
    """Stochastic block model with block-indicator-plus-Gaussian-noise features."""
    if not (0.0 <= p_out < p_in <= 1.0):
        raise ContractError(f"need 0 <= p_out < p_in <= 1, got p_in={p_in}, p_out={p_out}")
    if blocks < 1 or nodes_per_block < 1:
        raise ContractError("need at least one block with at least one node")
    if feature_dim < blocks:
        raise ContractError(f"feature_dim ({feature_dim}) must be >= number of blocks ({blocks})")
    rng = np.random.default_rng(seed)
    n = blocks * nodes_per_block
    membership = np.repeat(np.arange(blocks), nodes_per_block)
    iu, iv = np.triu_indices(n, 1)
    prob = np.where(membership[iu] == membership[iv], p_in, p_out)
    keep = rng.random(len(iu)) < prob
    g = Graph.from_edges(n, np.stack([iu[keep], iv[keep]], axis=1))
    x = noise * rng.standard_normal((n, feature_dim))
    x[np.arange(n), membership] += 1.0
    return g, x


def read_edge_list(path) -> tuple[np.ndarray, int]:
    """Parse an edge file; returns the raw pairs and the largest node id."""
    pairs = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            fields = line.split()
            if len(fields) < 2:
                raise DataError(f"{path}:{lineno}: expected two node ids, got {line!r}")
            try:
                u, v = int(fields[0]), int(fields[1])
            except ValueError:
                raise DataError(f"{path}:{lineno}: node ids must be integers, got {line!r}") from None
            if u < 0 or v < 0:
                raise DataError(f"{path}:{lineno}: node ids must be non-negative")
            pairs.append((u, v))
    arr = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    return arr, int(arr.max()) if len(arr) else -1


def read_features(path) -> np.ndarray:
    try:
        x = np.loadtxt(path, delimiter=",", dtype=np.float64, ndmin=2)
    except ValueError as exc:
        raise DataError(f"{path}: {exc}") from None
    if not np.all(np.isfinite(x)):
        raise DataError(f"{path}: non-finite feature value")
    return x


def load_dataset(edge_file, feature_file=None) -> tuple[Graph, np.ndarray]:
    """Load a graph, symmetrized and de-duplicated with self-loops dropped."""
    pairs, max_id = read_edge_list(edge_file)
    if feature_file is not None:
        x = read_features(feature_file)
        if max_id >= len(x):
            raise ContractError(f"edge file references node {max_id} but {Path(feature_file).name} has {len(x)} rows")
        return Graph.from_edges(len(x), pairs), x
    g = Graph.from_edges(max_id + 1, pairs)
    return g, fallback_features(g)


def write_edge_list(path, g: Graph) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"# {g.n} nodes, {g.num_edges} edges\n")
        for u, v in g.edges().tolist():
            fh.write(f"{u}\t{v}\n")


def write_features(path, x: np.ndarray) -> None:
    np.savetxt(path, x, delimiter=",", fmt="%.17g")
