"""Verification decision rule and ROC / Precision-Recall metrics.

A pair verifies as a match when its embedding distance is at or below the
threshold. Sweeping the threshold over the observed distances yields the ROC
(FAR vs TPR) and PR curves; EER is the operating point where the false
acceptance and false rejection rates meet, AUC the trapezoidal area under
the ROC (equal to the rank statistic with half credit for ties), and AP the
step-sum area under the PR curve.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ContractError


@dataclass
class MetricsReport:
    eer: float
    auc: float
    ap: float
    roc: list          # (FAR, TPR) points, tau ascending
    pr: list           # (Recall, Precision) points
    n_gen: int
    n_imp: int
    fold_stats: dict = field(default_factory=dict)   # metric -> (mean, std)

    def to_dict(self) -> dict:
        out = {
            "eer": self.eer,
            "auc": self.auc,
            "ap": self.ap,
            "counts": {"genuine": self.n_gen, "impostor": self.n_imp},
        }
        if self.fold_stats:
            out["folds"] = {k: {"mean": m, "std": s} for k, (m, s) in self.fold_stats.items()}
        return out


def _split_scores(distances, labels):
    d = np.asarray(distances, dtype=np.float64)
    y = np.asarray(labels)
    if d.shape != y.shape or d.ndim != 1:
        raise ContractError("distances and labels must be matching 1-D sequences")
    if not np.all(np.isfinite(d)):
        raise ContractError("distances must be finite")
    gen = d[y == 1]
    imp = d[y == 0]
    if len(gen) == 0 or len(imp) == 0:
        raise ContractError("need at least one genuine and one impostor pair")
    return gen, imp


def verify(distance: float, tau: float) -> bool:
    """Decision rule: match iff distance <= tau."""
    if tau < 0:
        raise ConfigError(f"threshold must be >= 0, got {tau}")
    return distance <= tau


def rates_at(distances, labels, tau: float):
    """(TPR, FAR, Precision, Recall) at one threshold, inclusive comparison."""
    gen, imp = _split_scores(distances, labels)
    tp = int(np.count_nonzero(gen <= tau))
    fa = int(np.count_nonzero(imp <= tau))
    tpr = tp / len(gen)
    far = fa / len(imp)
    precision = tp / (tp + fa) if (tp + fa) > 0 else 1.0
    return tpr, far, precision, tpr


def _sweep(gen: np.ndarray, imp: np.ndarray):
    """FAR/TPR arrays over thresholds: one below all distances, then each unique value."""
    taus = np.unique(np.concatenate([gen, imp]))
    tp = np.searchsorted(np.sort(gen), taus, side="right")
    fa = np.searchsorted(np.sort(imp), taus, side="right")
    tpr = np.concatenate([[0.0], tp / len(gen)])
    far = np.concatenate([[0.0], fa / len(imp)])
    return far, tpr, taus


def roc_points(distances, labels):
    gen, imp = _split_scores(distances, labels)
    far, tpr, _ = _sweep(gen, imp)
    return list(zip(far.tolist(), tpr.tolist()))


def compute_eer(distances, labels) -> float:
    """Rate where FAR equals FRR, linearly interpolated between sweep points."""
    gen, imp = _split_scores(distances, labels)
    far, tpr, _ = _sweep(gen, imp)
    frr = 1.0 - tpr
    # far - frr goes from -1 (no matches) to +1 (everything matches)
    diff = far - frr
    idx = int(np.searchsorted(diff >= 0, True))
    if idx == 0:
        return float(far[0])
    f1, f2 = far[idx - 1], far[idx]
    r1, r2 = frr[idx - 1], frr[idx]
    denom = (f2 - f1) - (r2 - r1)
    if denom == 0.0:
        return float((f1 + r1) / 2.0)
    t = (r1 - f1) / denom
    return float(f1 + t * (f2 - f1))


def compute_auc(distances, labels) -> float:
    """Trapezoidal area under the ROC; equals P(d_gen < d_imp) + 0.5 P(tie)."""
    gen, imp = _split_scores(distances, labels)
    far, tpr, _ = _sweep(gen, imp)
    return float(np.trapezoid(tpr, far))


def pr_points(distances, labels):
    """(Recall, Precision) over ascending thresholds, tie groups taken atomically."""
    gen, imp = _split_scores(distances, labels)
    taus = np.unique(np.concatenate([gen, imp]))
    tp = np.searchsorted(np.sort(gen), taus, side="right")
    fa = np.searchsorted(np.sort(imp), taus, side="right")
    recall = tp / len(gen)
    precision = np.where((tp + fa) > 0, tp / np.maximum(tp + fa, 1), 1.0)
    return list(zip(recall.tolist(), precision.tolist()))


def compute_ap(distances, labels) -> float:
    """Step-sum sum_i (R_i - R_{i-1}) * P_i over the PR points."""
    pts = pr_points(distances, labels)
    ap = 0.0
    prev_r = 0.0
    for r, p in pts:
        ap += (r - prev_r) * p
        prev_r = r
    return float(ap)


def metrics_from_scores(distances, labels) -> MetricsReport:
    gen, imp = _split_scores(distances, labels)
    return MetricsReport(
        eer=compute_eer(distances, labels),
        auc=compute_auc(distances, labels),
        ap=compute_ap(distances, labels),
        roc=roc_points(distances, labels),
        pr=pr_points(distances, labels),
        n_gen=len(gen),
        n_imp=len(imp),
    )
