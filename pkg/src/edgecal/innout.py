"""Per-edge temperatures from counterfactual embedding discrepancies (IN-N-OUT).

For an edge (u, v) the encoder is re-run on the graph with (u, v) toggled
(added when absent, removed when present). The discrepancy between the
edge embeddings with and without the edge feeds one of two small MLPs,
picked by the sign of the frozen logit, whose softplus output is the
edge's temperature.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.sparse as sp

from . import checkpoint
from . import tensor as T
from .encoders import LinkPredictor, edge_embedding, layer_forward
from .errors import ContractError, DimensionError, TrainingError
from .graph import EdgeSplit, Graph, LabeledEdges, hop_distances, sample_negative_edges, toggled_neighbors
from .metrics import DEFAULT_BINS, LossBreakdown, calibration_loss, ece
from .tensor import Tape, Tensor, _sigmoid
from .training import ScoredEdges

log = logging.getLogger(__name__)

GAMMA_CHOICES = ("euclidean", "difference")
DEFAULT_LAMBDAS = (0.1, 0.5, 1.0, 2.0, 5.0)
HEAD_BIAS = float(np.log(np.expm1(1.0)))  # softplus(HEAD_BIAS) == 1


class CounterfactualEncoder:
    """Embeddings of a fixed graph plus cheap re-evaluation with one edge toggled.

    Only rows inside the toggled edge's receptive field are recomputed;
    everything else is read from the cached per-layer embeddings.
    """

    def __init__(self, model: LinkPredictor, g: Graph, x):
        self.model = model
        self.g = g
        self.config = model.encoder
        self.params, _ = model.split_params()
        self.layers = model.embed(g, np.asarray(x, dtype=np.float64), all_layers=True)

    @property
    def embeddings(self) -> np.ndarray:
        return self.layers[-1]

    def _local_operator(self, u: int, v: int, targets: np.ndarray):
        g = self.g
        nbrs = [toggled_neighbors(g, u, v, w) for w in targets.tolist()]
        sources = np.unique(np.concatenate([targets, *nbrs]))
        delta = -1 if g.has_edge(u, v) else 1
        deg = g.degrees[sources].astype(np.float64)
        deg[(sources == u) | (sources == v)] += delta
        variant = self.config.variant
        if variant == "gcn":
            scale = 1.0 / np.sqrt(deg + 1.0)
        cols, vals, indptr = [], [], [0]
        for w, nb in zip(targets.tolist(), nbrs):
            if variant == "gcn":
                nb = np.insert(nb, np.searchsorted(nb, w), w)
                pos = np.searchsorted(sources, nb)
                val = scale[np.searchsorted(sources, w)] * scale[pos]
            elif variant == "gin":
                pos = np.searchsorted(sources, nb)
                val = np.ones(len(nb))
            else:
                pos = np.searchsorted(sources, nb)
                val = np.full(len(nb), 1.0 / len(nb)) if len(nb) else np.zeros(0)
            cols.append(pos)
            vals.append(val)
            indptr.append(indptr[-1] + len(pos))
        op = sp.csr_matrix(
            (np.concatenate(vals), np.concatenate(cols), np.asarray(indptr)), shape=(len(targets), len(sources))
        )
        return op, sources, np.searchsorted(sources, targets)

    def _toggled_rows(self, u: int, v: int, full: bool) -> tuple[np.ndarray, np.ndarray]:
        if u == v:
            raise ContractError(f"cannot toggle a self-loop ({u}, {v})")
        n_layers = self.config.layers
        dist = hop_distances(self.g, (u, v), n_layers, toggle=(u, v))
        nodes = np.fromiter(dist.keys(), dtype=np.int64, count=len(dist))
        depth = np.fromiter(dist.values(), dtype=np.int64, count=len(dist))
        order = np.argsort(nodes)
        nodes, depth = nodes[order], depth[order]
        done_nodes = np.zeros(0, dtype=np.int64)
        done_rows = None
        for l in range(1, n_layers + 1):
            radius = l if full else min(l, n_layers - l)
            targets = nodes[depth <= radius]
            op, sources, self_rows = self._local_operator(u, v, targets)
            prev = self.layers[l - 1][sources]
            if len(done_nodes):
                hit = np.isin(sources, done_nodes)
                prev[hit] = done_rows[np.searchsorted(done_nodes, sources[hit])]
            done_rows = layer_forward(self.config, self.params, l - 1, Tensor(prev), op, self_rows).data
            done_nodes = targets
        return done_nodes, done_rows

    def toggled_embeddings(self, u: int, v: int) -> np.ndarray:
        """Final-layer embeddings of the whole graph with (u, v) toggled."""
        nodes, rows = self._toggled_rows(u, v, full=True)
        out = self.embeddings.copy()
        out[nodes] = rows
        return out

    def endpoint_embeddings(self, u: int, v: int) -> tuple[np.ndarray, np.ndarray]:
        """Toggled-graph embeddings of u and v only."""
        nodes, rows = self._toggled_rows(u, v, full=False)
        return rows[np.searchsorted(nodes, u)], rows[np.searchsorted(nodes, v)]

    def edge_pair(self, u: int, v: int) -> tuple[np.ndarray, np.ndarray]:
        """``(h_uv, h_uv_plus)``: edge embedding on the graph as given and with (u, v) toggled."""
        psi = self.model.scorer.psi
        h = self.embeddings
        hu, hv = self.endpoint_embeddings(u, v)
        return edge_embedding(h[u], h[v], psi).data[0], edge_embedding(hu, hv, psi).data[0]

    def edge_pairs(self, edges) -> tuple[np.ndarray, np.ndarray]:
        edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
        h = self.model.edge_embeddings(self.embeddings, edges)
        plus_u = np.empty((len(edges), self.embeddings.shape[1]))
        plus_v = np.empty_like(plus_u)
        for i, (u, v) in enumerate(edges.tolist()):
            plus_u[i], plus_v[i] = self.endpoint_embeddings(u, v)
        return h, edge_embedding(plus_u, plus_v, self.model.scorer.psi).data

    def logits(self, edges) -> np.ndarray:
        return self.model.logits(self.embeddings, edges)


def gamma(h_uv, h_plus, choice: str = "euclidean") -> np.ndarray:
    """Discrepancy between edge embeddings; one row per edge."""
    a = np.atleast_2d(np.asarray(h_uv, dtype=np.float64))
    b = np.atleast_2d(np.asarray(h_plus, dtype=np.float64))
    if a.shape != b.shape:
        raise DimensionError(f"embedding shapes differ: {a.shape} vs {b.shape}")
    if choice == "euclidean":
        return np.linalg.norm(a - b, axis=1, keepdims=True)
    if choice == "difference":
        return a - b
    raise ContractError(f"unknown discrepancy {choice!r}; expected one of {GAMMA_CHOICES}")


@dataclass
class TemperatureNet:
    """Sign-routed MLPs (or a single MLP) mapping features to positive temperatures.

    Branch ``pos`` handles logits > 0 and ``neg`` the rest; the emb-mlp
    baseline uses one ``all`` branch.
    """

    params: dict[str, np.ndarray]
    branches: tuple[str, ...] = ("pos", "neg")
    shift: np.ndarray | None = None
    scale: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    @property
    def in_dim(self) -> int:
        return self.params[f"{self.branches[0]}.W1"].shape[0]

    def standardize(self, features) -> np.ndarray:
        z = np.atleast_2d(np.asarray(features, dtype=np.float64))
        if z.shape[1] != self.in_dim:
            raise DimensionError(f"temperature net expects {self.in_dim} features, got {z.shape[1]}")
        if self.shift is not None:
            z = (z - self.shift) / self.scale
        return z

    def route(self, logits) -> np.ndarray:
        """Branch index per edge."""
        s = np.asarray(logits, dtype=np.float64).ravel()
        if self.branches == ("all",):
            return np.zeros(len(s), dtype=np.int64)
        return np.where(s > 0, 0, 1)

    def temperatures(self, features, logits) -> np.ndarray:
        z = self.standardize(features)
        if not np.all(np.isfinite(z)):
            raise ContractError("temperature net input must be finite")
        branch = self.route(logits)
        if len(branch) != len(z):
            raise DimensionError(f"{len(z)} feature rows but {len(branch)} logits")
        out = np.empty(len(z))
        for b, name in enumerate(self.branches):
            sel = branch == b
            if sel.any():
                out[sel] = branch_forward(self.params, name, z[sel]).data[:, 0]
        return out

    def save(self, path) -> None:
        config = {"branches": list(self.branches), **self.meta}
        extra = {}
        if self.shift is not None:
            extra = {"shift": self.shift.ravel().tolist(), "scale": self.scale.ravel().tolist()}
        checkpoint.save(path, "temperature_net", config, self.params, extra)

    @classmethod
    def load(cls, path) -> TemperatureNet:
        config, params, extra = checkpoint.load(path, "temperature_net")
        branches = tuple(config.pop("branches"))
        shift = np.asarray(extra["shift"]).reshape(1, -1) if "shift" in extra else None
        scale = np.asarray(extra["scale"]).reshape(1, -1) if "scale" in extra else None
        return cls(params, branches, shift, scale, config)


def branch_forward(params, name: str, z) -> Tensor:
    hidden = T.relu(T.as_tensor(z) @ params[f"{name}.W1"] + params[f"{name}.b1"])
    return T.softplus(hidden @ params[f"{name}.W2"] + params[f"{name}.b2"])


def init_temperature_net(in_dim: int, hidden: int = 16, branched: bool = True, seed=0) -> TemperatureNet:
    """Xavier-initialized branches whose head bias starts every temperature near 1."""
    rng = np.random.default_rng(seed)
    branches = ("pos", "neg") if branched else ("all",)
    params = {}
    for name in branches:
        lim1 = np.sqrt(6.0 / (in_dim + hidden))
        lim2 = np.sqrt(6.0 / (hidden + 1))
        params[f"{name}.W1"] = rng.uniform(-lim1, lim1, size=(in_dim, hidden))
        params[f"{name}.b1"] = np.zeros((1, hidden))
        params[f"{name}.W2"] = rng.uniform(-lim2, lim2, size=(hidden, 1))
        params[f"{name}.b2"] = np.full((1, 1), HEAD_BIAS)
    return TemperatureNet(params, branches)


def temperature(net: TemperatureNet, gamma_value, s_uv: float) -> float:
    """Temperature of one edge: branch by the logit's sign, then the branch MLP."""
    g = np.asarray(gamma_value, dtype=np.float64).reshape(1, -1)
    if not np.all(np.isfinite(g)):
        raise ContractError("discrepancy must be finite")
    return float(net.temperatures(g, [s_uv])[0])


@dataclass(frozen=True)
class InNOutConfig:
    gamma: str = "euclidean"
    lam_grid: tuple[float, ...] = DEFAULT_LAMBDAS
    epochs: int = 5000
    lr: float = 1e-4
    weight_decay: float = 5e-8
    hidden: int = 16
    n_bins: int = DEFAULT_BINS
    seed: int = 0
    standardize: bool = True

    def __post_init__(self):
        if self.gamma not in GAMMA_CHOICES:
            raise ContractError(f"unknown discrepancy {self.gamma!r}")
        if not self.lam_grid:
            raise ContractError("lambda grid is empty")
        if min(self.lam_grid) <= 0:
            raise ContractError("every lambda must be positive")
        if self.epochs < 1:
            raise ContractError(f"epochs must be >= 1, got {self.epochs}")


@dataclass
class FitResult:
    net: TemperatureNet
    lam: float
    val_ece: dict[float, float]
    history: list[LossBreakdown]


def train_temperature_net(
    features: np.ndarray | Callable[[], np.ndarray],
    logits,
    labels,
    config: InNOutConfig,
    lam: float,
    branched: bool = True,
) -> tuple[TemperatureNet, list[LossBreakdown]]:
    """Fit one net with Adam on NLL + confidence penalty + lam * ECE.

    ``features`` may be a callable, re-evaluated every epoch.
    """
    recompute = callable(features)
    feats = np.atleast_2d(features() if recompute else np.asarray(features, dtype=np.float64))
    s = np.asarray(logits, dtype=np.float64).ravel()
    y = np.asarray(labels, dtype=np.float64).ravel()
    if len(feats) != len(s) or len(s) != len(y):
        raise DimensionError(f"{len(feats)} feature rows, {len(s)} logits, {len(y)} labels")
    net = init_temperature_net(feats.shape[1], config.hidden, branched, config.seed)
    if config.standardize:
        net.shift = feats.mean(axis=0, keepdims=True)
        std = feats.std(axis=0, keepdims=True)
        net.scale = np.where(std > 0, std, 1.0)
    route = net.route(s)
    groups = [(name, np.flatnonzero(route == b)) for b, name in enumerate(net.branches)]
    groups = [(name, idx) for name, idx in groups if len(idx)]
    order = np.concatenate([idx for _, idx in groups])
    s_ord, y_ord = s[order], y[order]
    z_groups = [net.standardize(feats[idx]) for _, idx in groups]
    params = net.params
    state = T.AdamState()
    history = []
    for epoch in range(1, config.epochs + 1):
        if recompute and epoch > 1:
            feats = np.atleast_2d(features())
            z_groups = [net.standardize(feats[idx]) for _, idx in groups]
        tape = Tape()
        leaves = tape.watch_all(params)
        temps = T.concat([branch_forward(leaves, name, z) for (name, _), z in zip(groups, z_groups)], axis=0)
        loss, parts = calibration_loss(s_ord, temps, y_ord, lam, config.n_bins)
        if not np.isfinite(parts.total):
            raise TrainingError(f"non-finite calibration loss at epoch {epoch} (lambda={lam})")
        history.append(parts)
        grads = T.backward(loss, tape)
        params = T.adam_step(params, grads, state, config.lr, config.weight_decay)
    net.params = params
    net.meta = {"lambda": lam}
    return net, history


def select_lambda(
    features, logits, labels, val_features, val_logits, val_labels, config: InNOutConfig, branched: bool = True
) -> FitResult:
    """Train one net per lambda in the grid and keep the lowest validation ECE (first on ties)."""
    best = None
    scores = {}
    for lam in config.lam_grid:
        net, history = train_temperature_net(features, logits, labels, config, lam, branched)
        temps = net.temperatures(val_features, val_logits)
        val_ece = ece(_sigmoid(np.asarray(val_logits) / temps), val_labels, config.n_bins)
        scores[lam] = val_ece
        log.info("lambda=%g validation ECE %.4f", lam, val_ece)
        if best is None or val_ece < best[0]:
            best = (val_ece, lam, net, history)
    return FitResult(best[2], best[1], scores, best[3])


def build_calibration_set(g: Graph, split: EdgeSplit, seed=0) -> LabeledEdges:
    """Training positives labeled 1 plus as many fresh non-edges labeled 0."""
    exclude = np.concatenate([split.val_neg, split.test_neg])
    neg = sample_negative_edges(g, len(split.train_pos), seed, exclude=exclude)
    return LabeledEdges.from_pos_neg(split.train_pos, neg)


@dataclass
class InNOutCalibrator:
    net: TemperatureNet
    gamma: str
    lam: float
    val_ece: dict[float, float] = field(default_factory=dict)
    history: list[LossBreakdown] = field(default_factory=list)

    def features(self, cf: CounterfactualEncoder, edges) -> np.ndarray:
        h, h_plus = cf.edge_pairs(edges)
        return gamma(h, h_plus, self.gamma)

    def save(self, path) -> None:
        self.net.meta = {**self.net.meta, "gamma": self.gamma, "lambda": self.lam}
        self.net.save(path)

    @classmethod
    def load(cls, path) -> InNOutCalibrator:
        net = TemperatureNet.load(path)
        return cls(net, net.meta["gamma"], net.meta["lambda"])


def fit(
    cf: CounterfactualEncoder,
    calibration: LabeledEdges,
    validation: LabeledEdges,
    config: InNOutConfig = InNOutConfig(),
    recompute_gamma: bool = False,
) -> InNOutCalibrator:
    """Fit IN-N-OUT on a calibration set with the encoder frozen.

    Discrepancies are computed once up front unless ``recompute_gamma`` is
    set, in which case they are rebuilt every epoch (slow; for checking).
    """
    logits = cf.logits(calibration.edges)

    def features():
        h, h_plus = cf.edge_pairs(calibration.edges)
        return gamma(h, h_plus, config.gamma)

    train_feats = features if recompute_gamma else features()
    val_h, val_plus = cf.edge_pairs(validation.edges)
    result = select_lambda(
        train_feats,
        logits,
        calibration.labels,
        gamma(val_h, val_plus, config.gamma),
        cf.logits(validation.edges),
        validation.labels,
        config,
    )
    return InNOutCalibrator(result.net, config.gamma, result.lam, result.val_ece, result.history)


def calibrate(calibrator: InNOutCalibrator | None, cf: CounterfactualEncoder, edges, labels=None) -> ScoredEdges:
    """Counterfactual embeddings -> discrepancy -> branch temperature -> calibrated probability."""
    if calibrator is None:
        raise ContractError("calibrator has not been fitted")
    edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    logits = cf.logits(edges)
    temps = calibrator.net.temperatures(calibrator.features(cf, edges), logits)
    return ScoredEdges(edges, logits, labels).with_temperature(temps)


__all__ = [
    "CounterfactualEncoder",
    "FitResult",
    "InNOutCalibrator",
    "InNOutConfig",
    "TemperatureNet",
    "build_calibration_set",
    "calibrate",
    "fit",
    "gamma",
    "init_temperature_net",
    "select_lambda",
    "temperature",
    "train_temperature_net",
]
