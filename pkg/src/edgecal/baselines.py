"""Post-hoc calibrators that see only the logit (or an edge embedding).

Temperature scaling, isotonic regression (pool-adjacent-violators),
equal-width histogram binning, Bayesian binning into quantiles and the
Emb.+MLP ablation, which maps raw edge embeddings to a temperature.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import gammaln, softmax

from .errors import ContractError
from .innout import InNOutConfig, TemperatureNet, select_lambda
from .metrics import DEFAULT_BINS, bin_edges, bin_index
from .tensor import _softplus
from .training import ScoredEdges

VARIANTS = ("temp", "isotonic", "histogram", "bbq", "emb-mlp")
GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


@dataclass
class FittedCalibrator:
    variant: str
    params: dict = field(default_factory=dict)
    net: TemperatureNet | None = None

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ContractError(f"unknown calibrator {self.variant!r}")

    def predict(self, confidences) -> np.ndarray:
        """Calibrated probabilities from raw confidences (binning variants)."""
        c = np.asarray(confidences, dtype=np.float64)
        p = self.params
        if self.variant == "isotonic":
            x, values = np.asarray(p["x"]), np.asarray(p["values"])
            idx = np.clip(np.searchsorted(x, c, side="left"), 0, len(x) - 1)
            return values[idx]
        if self.variant == "histogram":
            return np.asarray(p["values"])[bin_index(c, len(p["values"]))]
        if self.variant == "bbq":
            out = np.zeros_like(c)
            for w, thresholds, values in zip(p["weights"], p["thresholds"], p["values"]):
                out += w * np.asarray(values)[np.searchsorted(np.asarray(thresholds), c, side="right")]
            return out
        raise ContractError(f"{self.variant} calibrator does not map confidences directly")

    def to_dict(self) -> dict:
        doc = {"variant": self.variant, "params": _jsonable(self.params)}
        if self.net is not None:
            doc["net"] = {
                "branches": list(self.net.branches),
                "weights": {k: v.tolist() for k, v in self.net.params.items()},
                "shift": None if self.net.shift is None else self.net.shift.tolist(),
                "scale": None if self.net.scale is None else self.net.scale.tolist(),
                "meta": self.net.meta,
            }
        return doc

    @classmethod
    def from_dict(cls, doc: dict) -> FittedCalibrator:
        net = None
        if doc.get("net"):
            n = doc["net"]
            net = TemperatureNet(
                {k: np.asarray(v, dtype=np.float64) for k, v in n["weights"].items()},
                tuple(n["branches"]),
                None if n["shift"] is None else np.asarray(n["shift"]),
                None if n["scale"] is None else np.asarray(n["scale"]),
                n.get("meta", {}),
            )
        return cls(doc["variant"], doc["params"], net)

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh)

    @classmethod
    def load(cls, path) -> FittedCalibrator:
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def _labels_both(labels) -> np.ndarray:
    y = np.asarray(labels, dtype=np.float64).ravel()
    if y.min() == y.max():
        raise ContractError("calibration needs both classes")
    return y


def temperature_nll(logits, labels, t: float) -> float:
    z = np.asarray(logits, dtype=np.float64) / t
    return float(np.sum(_softplus(z) - np.asarray(labels, dtype=np.float64) * z))


def fit_temperature(logits, labels, lo: float = -4.0, hi: float = 4.0, tol: float = 1e-6) -> float:
    """Global temperature minimizing NLL, by golden-section search over log T."""
    s = np.asarray(logits, dtype=np.float64).ravel()
    y = _labels_both(labels)
    if len(s) != len(y):
        raise ContractError(f"{len(s)} logits but {len(y)} labels")

    def f(log_t):
        return temperature_nll(s, y, math.exp(log_t))

    a, b = lo, hi
    c, d = b - GOLDEN * (b - a), a + GOLDEN * (b - a)
    fc, fd = f(c), f(d)
    while b - a > tol:
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - GOLDEN * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + GOLDEN * (b - a)
            fd = f(d)
    best = (a + b) / 2.0
    return math.exp(best) if f(best) <= f(0.0) else 1.0


def _pava(sums: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """Weighted pool-adjacent-violators; block means are sum / weight."""
    blocks: list[list[float]] = []  # [sum, weight, n_points]
    for s, w in zip(sums.tolist(), weights.tolist()):
        blocks.append([s, w, 1])
        while len(blocks) > 1 and blocks[-2][0] * blocks[-1][1] > blocks[-1][0] * blocks[-2][1]:
            s2, w2, n2 = blocks.pop()
            blocks[-1][0] += s2
            blocks[-1][1] += w2
            blocks[-1][2] += n2
    return np.concatenate([np.full(n, s / w) for s, w, n in blocks])


def fit_isotonic(confidences, labels) -> FittedCalibrator:
    """Non-decreasing step function fitted by PAVA, with ties in confidence pooled first."""
    c = np.asarray(confidences, dtype=np.float64).ravel()
    y = np.asarray(labels, dtype=np.float64).ravel()
    if len(c) < 2 or len(c) != len(y):
        raise ContractError("isotonic fit needs at least 2 aligned samples")
    x, inverse, counts = np.unique(c, return_inverse=True, return_counts=True)
    sums = np.bincount(inverse, weights=y, minlength=len(x))
    values = _pava(sums, counts.astype(np.float64))
    return FittedCalibrator("isotonic", {"x": x, "values": values})


def fit_histogram(confidences, labels, n_bins: int = DEFAULT_BINS) -> FittedCalibrator:
    """Equal-width bins; each bin predicts its empirical positive rate (midpoint when empty)."""
    c = np.asarray(confidences, dtype=np.float64).ravel()
    y = np.asarray(labels, dtype=np.float64).ravel()
    if len(c) < 1 or len(c) != len(y):
        raise ContractError("histogram fit needs at least one aligned sample")
    idx = bin_index(c, n_bins)
    count = np.bincount(idx, minlength=n_bins)
    pos = np.bincount(idx, weights=y, minlength=n_bins)
    edges = bin_edges(n_bins)
    values = (edges[:-1] + edges[1:]) / 2.0
    values[count > 0] = pos[count > 0] / count[count > 0]
    return FittedCalibrator("histogram", {"values": values})


def bbq_bin_counts(m: int, n_models: int = 5) -> list[int]:
    """Geometric grid of bin counts from sqrt(m)/2 to 2 sqrt(m), at least three distinct."""
    lo, hi = max(1.0, math.sqrt(m) / 2.0), min(float(m), 2.0 * math.sqrt(m))
    counts = sorted({int(round(b)) for b in np.geomspace(lo, hi, n_models)})
    k = counts[-1]
    while len(counts) < 3 and k < m:
        k += 1
        counts.append(k)
    return counts


def equal_frequency_model(c: np.ndarray, y: np.ndarray, n_bins: int) -> tuple[np.ndarray, np.ndarray, float]:
    """Thresholds, posterior-mean bin values and log marginal likelihood of one binning."""
    chunks = np.array_split(np.sort(c), n_bins)
    thresholds = np.unique([ch[0] for ch in chunks[1:] if len(ch)])
    idx = np.searchsorted(thresholds, c, side="right")
    n = np.bincount(idx, minlength=len(thresholds) + 1).astype(np.float64)
    pos = np.bincount(idx, weights=y, minlength=len(thresholds) + 1)
    values = (pos + 1.0) / (n + 2.0)
    score = float(np.sum(gammaln(pos + 1.0) + gammaln(n - pos + 1.0) - gammaln(n + 2.0)))
    return thresholds, values, score


def fit_bbq(confidences, labels, bin_counts=None) -> FittedCalibrator:
    """Score-weighted ensemble of equal-frequency binnings with Beta(1, 1) bin priors."""
    c = np.asarray(confidences, dtype=np.float64).ravel()
    y = np.asarray(labels, dtype=np.float64).ravel()
    if len(c) < 10 or len(c) != len(y):
        raise ContractError("BBQ needs at least 10 aligned samples")
    counts = bbq_bin_counts(len(c)) if bin_counts is None else list(bin_counts)
    models = [equal_frequency_model(c, y, b) for b in counts]
    weights = softmax(np.array([m[2] for m in models]))
    return FittedCalibrator(
        "bbq",
        {
            "bin_counts": counts,
            "weights": weights,
            "thresholds": [m[0] for m in models],
            "values": [m[1] for m in models],
            "log_scores": [m[2] for m in models],
        },
    )


def fit_emb_mlp(
    embeddings, logits, labels, config: InNOutConfig = InNOutConfig(), val_embeddings=None, val_logits=None, val_labels=None
) -> FittedCalibrator:
    """One softplus-headed MLP from the raw edge embedding to a temperature.

    Trained exactly like IN-N-OUT; lambda is picked on the validation arrays
    when given, otherwise on the fit set.
    """
    emb = np.atleast_2d(np.asarray(embeddings, dtype=np.float64))
    if len(emb) != len(np.ravel(logits)):
        raise ContractError("embeddings must align with logits")
    if val_embeddings is None:
        val_embeddings, val_logits, val_labels = emb, logits, labels
    result = select_lambda(emb, logits, labels, val_embeddings, val_logits, val_labels, config, branched=False)
    return FittedCalibrator("emb-mlp", {"lambda": result.lam}, result.net)


def apply(calibrator: FittedCalibrator | None, scored: ScoredEdges, embeddings=None) -> ScoredEdges:
    """Fill calibrated probabilities (and temperatures for temperature-type calibrators)."""
    if calibrator is None:
        raise ContractError("calibrator has not been fitted")
    if calibrator.variant == "temp":
        return scored.with_temperature(calibrator.params["T"])
    if calibrator.variant == "emb-mlp":
        if embeddings is None or calibrator.net is None:
            raise ContractError("emb-mlp needs a fitted net and the edge embeddings")
        return scored.with_temperature(calibrator.net.temperatures(embeddings, scored.logits))
    return scored.with_calibrated(calibrator.predict(scored.prob))


def fit(variant: str, scored: ScoredEdges, embeddings=None, config: InNOutConfig = InNOutConfig(), validation=None) -> FittedCalibrator:
    """Fit any baseline on a labeled set of scored edges."""
    y = scored.labels
    if y is None:
        raise ContractError("calibration set must be labeled")
    if variant == "temp":
        return FittedCalibrator("temp", {"T": fit_temperature(scored.logits, y)})
    if variant == "isotonic":
        return fit_isotonic(scored.prob, y)
    if variant == "histogram":
        return fit_histogram(scored.prob, y)
    if variant == "bbq":
        return fit_bbq(scored.prob, y)
    if variant == "emb-mlp":
        if validation is None:
            return fit_emb_mlp(embeddings, scored.logits, y, config)
        val_scored, val_emb = validation
        return fit_emb_mlp(embeddings, scored.logits, y, config, val_emb, val_scored.logits, val_scored.labels)
    raise ContractError(f"unknown calibrator {variant!r}")
