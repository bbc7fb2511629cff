"""Message-passing encoders (GCN, GIN, SAGE-mean) and the MLP edge scorer."""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
import scipy.sparse as sp

from . import tensor as T
from .errors import ContractError, DimensionError
from .graph import Graph, mean_adjacency, normalized_adjacency
from .tensor import Tape, Tensor

VARIANTS = ("gcn", "gin", "sage")
PSI_CHOICES = ("hadamard", "sum", "concat", "dot")


@dataclass(frozen=True)
class EncoderConfig:
    variant: str = "gcn"
    in_dim: int = 16
    layers: int = 2
    hidden: int = 32
    out: int = 16
    activation: str = "relu"

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ContractError(f"unknown encoder variant {self.variant!r}")
        if self.layers not in (1, 2, 3):
            raise ContractError(f"layer count must be 1, 2 or 3, got {self.layers}")
        if min(self.in_dim, self.hidden, self.out) <= 0:
            raise ContractError("dimensions must be positive")
        if self.activation != "relu":
            raise ContractError(f"only relu activation is supported, got {self.activation!r}")

    def dims(self) -> list[int]:
        return [self.in_dim] + [self.hidden] * (self.layers - 1) + [self.out]

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class ScorerConfig:
    psi: str = "hadamard"
    in_dim: int = 16
    hidden: int = 16

    def __post_init__(self):
        if self.psi not in PSI_CHOICES:
            raise ContractError(f"unknown edge composition {self.psi!r}")

    @property
    def mlp_in(self) -> int:
        return 2 * self.in_dim if self.psi == "concat" else self.in_dim

    def to_dict(self) -> dict:
        return asdict(self)


def xavier(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


def init_encoder(config: EncoderConfig, seed=0) -> dict[str, np.ndarray]:
    rng = np.random.default_rng(seed)
    dims = config.dims()
    params = {}
    for l in range(config.layers):
        d_in, d_out = dims[l], dims[l + 1]
        if config.variant == "gcn":
            params[f"W{l}"] = xavier(rng, d_in, d_out)
        elif config.variant == "sage":
            params[f"W{l}"] = xavier(rng, 2 * d_in, d_out)
        else:
            params[f"eps{l}"] = np.zeros((1, 1))
            params[f"W{l}a"] = xavier(rng, d_in, config.hidden)
            params[f"b{l}a"] = np.zeros((1, config.hidden))
            params[f"W{l}b"] = xavier(rng, config.hidden, d_out)
            params[f"b{l}b"] = np.zeros((1, d_out))
    return params


def init_scorer(config: ScorerConfig, seed=0) -> dict[str, np.ndarray]:
    if config.psi == "dot":
        return {}
    rng = np.random.default_rng(seed)
    return {
        "S1": xavier(rng, config.mlp_in, config.hidden),
        "c1": np.zeros((1, config.hidden)),
        "S2": xavier(rng, config.hidden, 1),
        "c2": np.zeros((1, 1)),
    }


def propagation_matrix(variant: str, g: Graph) -> sp.csr_matrix:
    """The sparse neighbourhood operator each variant aggregates with."""
    if variant == "gcn":
        return normalized_adjacency(g)
    if variant == "gin":
        return g.adjacency()
    return mean_adjacency(g)


def layer_forward(config: EncoderConfig, params, l: int, h_src, op: sp.spmatrix, self_rows=None) -> Tensor:
    """One message-passing layer.

    ``h_src`` holds previous-layer rows for the source nodes (columns of
    ``op``); ``self_rows`` picks out the target nodes' own rows in ``h_src``
    (``None`` when targets and sources coincide).
    """
    h_self = h_src if self_rows is None else T.take_rows(h_src, self_rows)
    if config.variant == "gcn":
        out = T.spmm(op, h_src @ params[f"W{l}"])
    elif config.variant == "gin":
        pre = h_self * (1.0 + params[f"eps{l}"]) + T.spmm(op, h_src)
        out = T.relu(pre @ params[f"W{l}a"] + params[f"b{l}a"]) @ params[f"W{l}b"] + params[f"b{l}b"]
    else:
        out = T.concat([h_self, T.spmm(op, h_src)], axis=1) @ params[f"W{l}"]
    return out if l == config.layers - 1 else T.relu(out)


def encode(config: EncoderConfig, params, g: Graph, x, op: sp.spmatrix | None = None, all_layers: bool = False):
    """Node embeddings of ``g``; returns a Tensor (tape-attached if params are).

    With ``all_layers`` the list of every layer's output is returned instead.
    """
    x = T.as_tensor(x)
    if x.rows != g.n:
        raise DimensionError(f"feature matrix has {x.rows} rows but graph has {g.n} nodes")
    if x.cols != config.in_dim:
        raise DimensionError(f"feature matrix has {x.cols} columns, encoder expects {config.in_dim}")
    op = propagation_matrix(config.variant, g) if op is None else op
    h = x
    layers = [h]
    for l in range(config.layers):
        h = layer_forward(config, params, l, h, op)
        layers.append(h)
    return layers if all_layers else h


def edge_embedding(h_u, h_v, psi: str = "hadamard") -> Tensor:
    """Order-invariant combination of endpoint embeddings (row-wise for batches)."""
    h_u, h_v = T.as_tensor(h_u), T.as_tensor(h_v)
    if h_u.shape != h_v.shape:
        raise DimensionError(f"endpoint embeddings differ in shape: {h_u.shape} vs {h_v.shape}")
    if psi == "hadamard":
        return h_u * h_v
    if psi == "sum":
        return h_u + h_v
    if psi == "concat":
        return T.concat([T.minimum(h_u, h_v), T.maximum(h_u, h_v)], axis=1)
    if psi == "dot":
        return T.sum(h_u * h_v, axis=1)
    raise ContractError(f"unknown edge composition {psi!r}")


def score_edge(config: ScorerConfig, params, h_uv) -> Tensor:
    """Logits (one per row) for edge embeddings."""
    h_uv = T.as_tensor(h_uv)
    if config.psi == "dot":
        if h_uv.cols != 1:
            raise DimensionError(f"dot scorer takes a precomputed inner product, got {h_uv.cols} columns")
        return h_uv
    if h_uv.cols != config.mlp_in:
        raise DimensionError(f"scorer expects {config.mlp_in}-dim edge embeddings, got {h_uv.cols}")
    hidden = T.relu(h_uv @ params["S1"] + params["c1"])
    return hidden @ params["S2"] + params["c2"]


def edge_logits(config: ScorerConfig, params, h, edges) -> Tensor:
    edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    h = T.as_tensor(h)
    h_uv = edge_embedding(T.take_rows(h, edges[:, 0]), T.take_rows(h, edges[:, 1]), config.psi)
    return score_edge(config, params, h_uv)


@dataclass
class LinkPredictor:
    """Encoder and scorer configs with their parameters."""

    encoder: EncoderConfig
    scorer: ScorerConfig
    params: dict[str, np.ndarray]

    @classmethod
    def initialize(cls, encoder: EncoderConfig, scorer: ScorerConfig, seed=0) -> LinkPredictor:
        if scorer.in_dim != encoder.out:
            raise ContractError(f"scorer input dim {scorer.in_dim} != encoder output dim {encoder.out}")
        rng = np.random.default_rng(seed)
        enc_seed, sc_seed = rng.integers(0, 2**63, size=2)
        params = {f"enc.{k}": v for k, v in init_encoder(encoder, enc_seed).items()}
        params.update({f"sc.{k}": v for k, v in init_scorer(scorer, sc_seed).items()})
        return cls(encoder, scorer, params)

    def split_params(self, params=None):
        params = self.params if params is None else params
        enc = {k[4:]: v for k, v in params.items() if k.startswith("enc.")}
        sc = {k[3:]: v for k, v in params.items() if k.startswith("sc.")}
        return enc, sc

    def embed(self, g: Graph, x, all_layers: bool = False):
        enc, _ = self.split_params()
        out = encode(self.encoder, enc, g, x, all_layers=all_layers)
        return [t.data for t in out] if all_layers else out.data

    def logits(self, h: np.ndarray, edges) -> np.ndarray:
        _, sc = self.split_params()
        return edge_logits(self.scorer, sc, h, edges).data[:, 0]

    def edge_embeddings(self, h: np.ndarray, edges) -> np.ndarray:
        edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
        return edge_embedding(h[edges[:, 0]], h[edges[:, 1]], self.scorer.psi).data

    def forward(self, tape: Tape, g: Graph, x, edges, op=None) -> Tensor:
        """Tape-attached logits for ``edges``; every parameter becomes a leaf."""
        leaves = tape.watch_all(self.params)
        enc = {k[4:]: v for k, v in leaves.items() if k.startswith("enc.")}
        sc = {k[3:]: v for k, v in leaves.items() if k.startswith("sc.")}
        h = encode(self.encoder, enc, g, x, op=op)
        return edge_logits(self.scorer, sc, h, edges)


def save_model(path, model: LinkPredictor) -> None:
    from . import checkpoint

    checkpoint.save(path, "link_predictor", {"encoder": model.encoder.to_dict(), "scorer": model.scorer.to_dict()}, model.params)


def load_model(path) -> LinkPredictor:
    from . import checkpoint

    config, params, _ = checkpoint.load(path, "link_predictor")
    return LinkPredictor(EncoderConfig(**config["encoder"]), ScorerConfig(**config["scorer"]), params)
