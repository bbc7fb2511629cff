"""Calibration measurements: ECE, reliability diagrams, NLL and the confidence penalty.

Binning is equal-width on [0, 1]: bin ``n`` covers ``[n/N, (n+1)/N)`` and
the last bin is closed at 1.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import tensor as T
from .errors import ContractError
from .tensor import Tensor

DEFAULT_BINS = 15
PROB_CLIP = 1e-12
CSV_HEADER = ["bin_lo", "bin_hi", "mean_conf", "frac_pos", "count"]


def _check(confidences, labels) -> tuple[np.ndarray, np.ndarray]:
    c = np.asarray(confidences, dtype=np.float64).ravel()
    y = np.asarray(labels, dtype=np.float64).ravel()
    if c.shape != y.shape:
        raise ContractError(f"{len(c)} confidences but {len(y)} labels")
    if len(c) == 0:
        raise ContractError("need at least one sample")
    if not np.all(np.isfinite(c)) or c.min() < 0.0 or c.max() > 1.0:
        raise ContractError("confidences must lie in [0, 1]")
    return c, y


def bin_edges(n_bins: int) -> np.ndarray:
    if n_bins < 1:
        raise ContractError(f"bin count must be positive, got {n_bins}")
    return np.linspace(0.0, 1.0, n_bins + 1)


def bin_index(confidences, n_bins: int = DEFAULT_BINS) -> np.ndarray:
    edges = bin_edges(n_bins)
    idx = np.searchsorted(edges, np.asarray(confidences, dtype=np.float64), side="right") - 1
    return np.clip(idx, 0, n_bins - 1)


@dataclass(frozen=True)
class ReliabilityDiagram:
    bin_lo: np.ndarray
    bin_hi: np.ndarray
    mean_conf: np.ndarray
    frac_pos: np.ndarray
    count: np.ndarray

    @property
    def n_bins(self) -> int:
        return len(self.count)

    @property
    def total(self) -> int:
        return int(self.count.sum())

    def ece(self) -> float:
        return float(np.sum(self.count * np.abs(self.frac_pos - self.mean_conf)) / self.total)

    def gap_above(self, threshold: float = 0.5) -> float:
        """Mean of (frac_pos - mean_conf) over occupied bins whose mean confidence exceeds ``threshold``."""
        sel = (self.count > 0) & (self.mean_conf > threshold)
        if not sel.any():
            return float("nan")
        return float(np.mean(self.frac_pos[sel] - self.mean_conf[sel]))

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(CSV_HEADER)
            for row in zip(self.bin_lo, self.bin_hi, self.mean_conf, self.frac_pos, self.count):
                w.writerow([repr(float(row[0])), repr(float(row[1])), repr(float(row[2])), repr(float(row[3])), int(row[4])])

    @classmethod
    def from_csv(cls, path) -> ReliabilityDiagram:
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            if header != CSV_HEADER:
                raise ContractError(f"unexpected reliability CSV header {header}")
            rows = [r for r in reader if r]
        cols = list(zip(*rows))
        return cls(*(np.array(c, dtype=np.float64) for c in cols[:4]), np.array(cols[4], dtype=np.int64))

    def to_svg(self, path, title: str = "") -> None:
        Path(path).write_text(render_svg(self, title))


def reliability_diagram(confidences, labels, n_bins: int = DEFAULT_BINS) -> ReliabilityDiagram:
    c, y = _check(confidences, labels)
    edges = bin_edges(n_bins)
    idx = bin_index(c, n_bins)
    count = np.bincount(idx, minlength=n_bins)
    conf_sum = np.bincount(idx, weights=c, minlength=n_bins)
    pos_sum = np.bincount(idx, weights=y, minlength=n_bins)
    occupied = count > 0
    mean_conf = np.zeros(n_bins)
    frac_pos = np.zeros(n_bins)
    mean_conf[occupied] = conf_sum[occupied] / count[occupied]
    frac_pos[occupied] = pos_sum[occupied] / count[occupied]
    return ReliabilityDiagram(edges[:-1].copy(), edges[1:].copy(), mean_conf, frac_pos, count)


def ece(confidences, labels, n_bins: int = DEFAULT_BINS) -> float:
    """Expected calibration error as a fraction in [0, 1]."""
    return reliability_diagram(confidences, labels, n_bins).ece()


def nll(confidences, labels) -> float:
    """Summed binary negative log-likelihood with probabilities clipped away from 0 and 1."""
    c, y = _check(confidences, labels)
    p = np.clip(c, PROB_CLIP, 1.0 - PROB_CLIP)
    return float(np.sum(-y * np.log(p) - (1.0 - y) * np.log(1.0 - p)))


def l_cal(confidences, labels) -> float:
    """Mean of -(2y - 1) p: rewards confident correct predictions."""
    c, y = _check(confidences, labels)
    return float(np.mean(-(2.0 * y - 1.0) * c))


@dataclass(frozen=True)
class LossBreakdown:
    nll: float
    cal: float
    ece: float
    lam: float

    def __post_init__(self):
        if not self.lam > 0:
            raise ContractError(f"lambda must be positive, got {self.lam}")

    @property
    def total(self) -> float:
        return self.nll + self.cal + self.lam * self.ece


def calibration_loss(
    logits: np.ndarray, temperatures: Tensor, labels: np.ndarray, lam: float, n_bins: int = DEFAULT_BINS
) -> tuple[Tensor, LossBreakdown]:
    """Differentiable NLL + confidence penalty + lam * ECE of sigmoid(logits / T).

    NLL uses the logit form softplus(z) - y z. Bin membership comes from the
    current probabilities and is held fixed for the gradient.
    """
    s = np.asarray(logits, dtype=np.float64).reshape(-1, 1)
    y = np.asarray(labels, dtype=np.float64).reshape(-1, 1)
    z = T.div(s, temperatures)
    p = T.sigmoid(z)
    nll_t = T.sum(T.softplus(z) - y * z)
    cal_t = T.mean(-(2.0 * y - 1.0) * p)
    idx = bin_index(p.data[:, 0], n_bins)
    residual = T.segment_sum(y - p, idx, n_bins)
    ece_t = T.sum(T.abs(residual)) * (1.0 / len(y))
    total = nll_t + cal_t + ece_t * lam
    parts = LossBreakdown(nll_t.item(), cal_t.item(), ece_t.item(), lam)
    return total, parts


def render_svg(diagram: ReliabilityDiagram, title: str = "", size: int = 360) -> str:
    pad = 40
    span = size - 2 * pad

    def px(x: float) -> float:
        return pad + x * span

    def py(y: float) -> float:
        return size - pad - y * span

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" viewBox="0 0 {size} {size}">',
        f'<rect x="{pad}" y="{pad}" width="{span}" height="{span}" fill="white" stroke="black"/>',
        f'<line x1="{px(0)}" y1="{py(0)}" x2="{px(1)}" y2="{py(1)}" stroke="gray" stroke-dasharray="4,4"/>',
    ]
    for lo, hi, f, n in zip(diagram.bin_lo, diagram.bin_hi, diagram.frac_pos, diagram.count):
        if n == 0:
            continue
        parts.append(
            f'<rect x="{px(lo):.2f}" y="{py(f):.2f}" width="{(hi - lo) * span:.2f}" height="{f * span:.2f}" '
            'fill="steelblue" fill-opacity="0.35" stroke="steelblue"/>'
        )
    for c, f, n in zip(diagram.mean_conf, diagram.frac_pos, diagram.count):
        if n:
            parts.append(f'<circle cx="{px(c):.2f}" cy="{py(f):.2f}" r="3" fill="darkred"/>')
    parts.append(f'<text x="{size / 2}" y="{size - 8}" text-anchor="middle" font-size="12">confidence</text>')
    parts.append(
        f'<text x="12" y="{size / 2}" text-anchor="middle" font-size="12" '
        f'transform="rotate(-90 12 {size / 2})">frequency of positives</text>'
    )
    if title:
        parts.append(f'<text x="{size / 2}" y="22" text-anchor="middle" font-size="13">{title}</text>')
    parts.append(f'<text x="{size - pad}" y="{pad + 14}" text-anchor="end" font-size="11">ECE {100 * diagram.ece():.2f}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"
