"""Link-prediction training with negative sampling, plus ranking metrics."""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.stats import rankdata

from . import tensor as T
from .encoders import LinkPredictor, propagation_matrix
from .errors import ContractError, TrainingError
from .graph import EdgeSplit, Graph, LabeledEdges, sample_negative_edges
from .tensor import Tape, _sigmoid

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ScoredEdges:
    """Edges with logits and, optionally, labels and calibrated outputs.

    ``temperature`` is set by temperature-type calibrators, ``calibrated``
    by every calibrator.
    """

    edges: np.ndarray
    logits: np.ndarray
    labels: np.ndarray | None = None
    temperature: np.ndarray | None = None
    calibrated: np.ndarray | None = None

    def __len__(self) -> int:
        return len(self.logits)

    @property
    def prob(self) -> np.ndarray:
        return _sigmoid(self.logits)

    @property
    def confidence(self) -> np.ndarray:
        return self.prob if self.calibrated is None else self.calibrated

    @property
    def score(self) -> np.ndarray:
        """Ranking score on the logit scale."""
        if self.temperature is not None:
            return self.logits / self.temperature
        if self.calibrated is not None:
            with np.errstate(divide="ignore"):
                return np.log(self.calibrated) - np.log1p(-self.calibrated)
        return self.logits

    @property
    def predicted(self) -> np.ndarray:
        return (self.score > 0).astype(np.int64)

    def with_temperature(self, temperature) -> ScoredEdges:
        t = np.broadcast_to(np.asarray(temperature, dtype=np.float64), self.logits.shape).copy()
        if not np.all(t > 0):
            raise ContractError("temperatures must be positive")
        return replace(self, temperature=t, calibrated=_sigmoid(self.logits / t))

    def with_calibrated(self, probs) -> ScoredEdges:
        return replace(self, temperature=None, calibrated=np.asarray(probs, dtype=np.float64))

    def _labels(self) -> np.ndarray:
        if self.labels is None:
            raise ContractError("labels required")
        return self.labels

    def auc(self) -> float:
        return auc(self.score, self._labels())

    def hits(self, k: int = 20) -> float:
        return hits_at_k(self.score, self._labels(), k)

    def accuracy(self) -> float:
        return accuracy(self.score, self._labels())


def auc(scores, labels) -> float:
    """Probability that a random positive outranks a random negative; ties count half."""
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels).astype(bool)
    n_pos = int(y.sum())
    n_neg = len(y) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ContractError("AUC needs both positive and negative examples")
    ranks = rankdata(s, method="average")
    return float((ranks[y].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def hits_at_k(scores, labels, k: int = 20) -> float:
    """Percentage of positives scoring above the k-th highest negative."""
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels).astype(bool)
    neg = np.sort(s[~y])[::-1]
    if len(neg) < k:
        raise ContractError(f"hits@{k} needs at least {k} negatives, got {len(neg)}")
    pos = s[y]
    if len(pos) == 0:
        raise ContractError("hits@k needs at least one positive")
    return 100.0 * float(np.count_nonzero(pos > neg[k - 1])) / len(pos)


def accuracy(scores, labels) -> float:
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels).astype(np.int64)
    if len(s) == 0:
        raise ContractError("accuracy of an empty set is undefined")
    return 100.0 * float(np.count_nonzero((s > 0).astype(np.int64) == y)) / len(s)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 400
    lr: float = 1e-3
    neg_ratio: int = 1
    seed: int = 0
    weight_decay: float = 0.0
    checkpoint: str = "best_val_auc"

    def __post_init__(self):
        if self.checkpoint not in ("best_val_auc", "last"):
            raise ContractError(f"unknown checkpoint rule {self.checkpoint!r}")
        if self.epochs < 1:
            raise ContractError(f"epochs must be >= 1, got {self.epochs}")
        if self.neg_ratio < 1:
            raise ContractError(f"negative ratio must be >= 1, got {self.neg_ratio}")


@dataclass
class TrainResult:
    model: LinkPredictor
    best_epoch: int
    best_val_auc: float
    history: list[dict] = field(default_factory=list)

    def write_log(self, path) -> None:
        with open(path, "w") as fh:
            for rec in self.history:
                fh.write(json.dumps(rec) + "\n")


def message_graph(g: Graph, split: EdgeSplit) -> Graph:
    """The graph used for message passing: training positives only."""
    return Graph.from_edges(g.n, split.train_pos)


def bce_with_logits(logits, labels):
    """Mean binary cross-entropy in the stable softplus(s) - y s form."""
    y = np.asarray(labels, dtype=np.float64).reshape(-1, 1)
    return T.mean(T.softplus(logits) - y * logits)


def score_edges(model: LinkPredictor, h: np.ndarray, labeled: LabeledEdges) -> ScoredEdges:
    return ScoredEdges(labeled.edges, model.logits(h, labeled.edges), labeled.labels)


def train(model: LinkPredictor, g: Graph, x, split: EdgeSplit, config: TrainConfig) -> TrainResult:
    """Full-batch training; returns the parameters with the best validation AUC."""
    rng = np.random.default_rng(config.seed)
    g_train = message_graph(g, split)
    op = propagation_matrix(model.encoder.variant, g_train)
    x = np.asarray(x, dtype=np.float64)
    pos = split.train_pos
    val = LabeledEdges.from_pos_neg(split.val_pos, split.val_neg)
    params = {k: v.copy() for k, v in model.params.items()}
    state = T.AdamState()
    best = (-np.inf, 0, params)
    history = []
    for epoch in range(1, config.epochs + 1):
        neg = sample_negative_edges(g, config.neg_ratio * len(pos), rng)
        edges = np.concatenate([pos, neg])
        labels = np.concatenate([np.ones(len(pos)), np.zeros(len(neg))])
        tape = Tape()
        current = LinkPredictor(model.encoder, model.scorer, params)
        loss = bce_with_logits(current.forward(tape, g_train, x, edges, op=op), labels)
        value = loss.item()
        if not np.isfinite(value):
            raise TrainingError(f"non-finite training loss at epoch {epoch}")
        grads = T.backward(loss, tape)
        params = T.adam_step(params, grads, state, config.lr, config.weight_decay)
        current = LinkPredictor(model.encoder, model.scorer, params)
        h = current.embed(g_train, x)
        val_auc = auc(current.logits(h, val.edges), val.labels)
        history.append({"epoch": epoch, "loss": value, "val_auc": val_auc})
        if val_auc > best[0] or config.checkpoint == "last":
            best = (val_auc, epoch, params)
    log.info("best validation AUC %.4f at epoch %d", best[0], best[1])
    return TrainResult(LinkPredictor(model.encoder, model.scorer, best[2]), best[1], best[0], history)
