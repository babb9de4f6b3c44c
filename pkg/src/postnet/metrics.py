"""Uncertainty evaluation: calibration, Brier, OOD detection, shift ratio, grids.

Scores returned by the report are multiplied by 100; the per-metric
functions work on the [0, 1] scale unless noted otherwise.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import LabeledDataset, make_oodom
from .dirichlet import DirichletParams, categorical_entropy, dirichlet_mean, predict_class

GRID_HEADER = ("x1", "x2", "alpha0", "max_prob", "pred", "entropy")


class MetricError(ValueError):
    pass


def auc_pr(scores, labels) -> float:
    """Average precision: sum over descending thresholds of (R_n - R_{n-1}) * P_n.

    Samples with equal scores enter at the same threshold.
    """
    scores = np.asarray(scores, dtype=np.float64).ravel()
    labels = np.asarray(labels).ravel().astype(bool)
    if scores.shape != labels.shape:
        raise MetricError(f"{scores.size} scores but {labels.size} labels")
    n_pos = int(labels.sum())
    if n_pos == 0 or n_pos == labels.size:
        raise MetricError("AUC-PR needs both positive and negative labels")
    order = np.argsort(-scores, kind="mergesort")
    s, lab = scores[order], labels[order]
    # last index of each run of equal scores
    ends = np.flatnonzero(np.r_[s[1:] != s[:-1], True])
    tp = np.cumsum(lab)[ends]
    predicted = ends + 1
    precision = tp / predicted
    recall = tp / n_pos
    return float(np.sum(np.diff(np.r_[0.0, recall]) * precision))


def brier(prob, labels) -> float:
    """Mean Euclidean distance between predicted probabilities and one-hot labels, x100."""
    prob = np.atleast_2d(np.asarray(prob, dtype=np.float64))
    labels = np.asarray(labels, dtype=np.intp).ravel()
    if np.any(prob < -1e-12) or np.any(np.abs(prob.sum(axis=1) - 1.0) > 1e-6):
        raise MetricError("probability rows must lie on the simplex")
    onehot = np.zeros_like(prob)
    onehot[np.arange(len(labels)), labels] = 1.0
    return 100.0 * float(np.mean(np.linalg.norm(prob - onehot, axis=1)))


def _scores(d: DirichletParams, kind: str, purpose: str) -> np.ndarray:
    if kind == "aleatoric":
        return dirichlet_mean(d).max(axis=1)
    if kind == "epistemic":
        return d.alpha.max(axis=1) if purpose == "confidence" else d.alpha0
    raise ValueError(f"kind must be 'aleatoric' or 'epistemic', got {kind!r}")


def confidence_calibration(d: DirichletParams, preds, truths, kind: str = "aleatoric") -> float | None:
    """AUC-PR of confidence scores against correctness; None if all right or all wrong."""
    correct = np.asarray(preds) == np.asarray(truths)
    if correct.all() or not correct.any():
        return None
    return auc_pr(_scores(d, kind, "confidence"), correct)


def ood_detection(id_params: DirichletParams, ood_params: DirichletParams, kind: str = "epistemic") -> float:
    """AUC-PR with in-distribution samples as positives."""
    if len(id_params) == 0 or len(ood_params) == 0:
        raise MetricError("OOD detection needs non-empty ID and OOD sets")
    scores = np.concatenate([_scores(id_params, kind, "ood"), _scores(ood_params, kind, "ood")])
    labels = np.r_[np.ones(len(id_params)), np.zeros(len(ood_params))]
    return auc_pr(scores, labels)


def confidence_ratio(base: DirichletParams, shifted: DirichletParams) -> float:
    """Mean total evidence on shifted data relative to the unshifted data."""
    if len(base) == 0 or len(shifted) == 0:
        raise MetricError("confidence ratio needs non-empty inputs")
    return float(shifted.alpha0.mean() / base.alpha0.mean())


def mean_entropy(d: DirichletParams) -> float:
    return float(categorical_entropy(dirichlet_mean(d)).mean())


def _scaled(value: float | None) -> float | None:
    return None if value is None else 100.0 * value


@dataclass
class EvalReport:
    accuracy: float
    alea_conf: float | None
    epist_conf: float | None
    brier: float
    n_test: int
    ood: dict[str, dict[str, float]] = field(default_factory=dict)
    entropy: dict[str, float] = field(default_factory=dict)
    min_alpha: float = float("nan")

    def to_dict(self) -> dict:
        out = {
            "accuracy": self.accuracy,
            "alea_conf": self.alea_conf,
            "epist_conf": self.epist_conf,
            "brier": self.brier,
            "n_test": self.n_test,
            "min_alpha": self.min_alpha,
        }
        if self.ood:
            out["ood"] = {name: dict(v) for name, v in self.ood.items()}
        out["entropy"] = dict(self.entropy)
        return out


def evaluate(model, id_test: LabeledDataset, ood_sets: dict[str, LabeledDataset] | None = None,
             oodom_factor: float | None = None) -> EvalReport:
    """Run the full protocol on raw (unscaled) datasets.

    ``oodom_factor`` adds an out-of-domain set: the scaled ID test features
    multiplied by that factor.
    """
    if len(id_test) == 0:
        raise MetricError("empty test set")
    post = model.posterior(id_test.X)
    preds = predict_class(post)
    p_mean = dirichlet_mean(post)
    report = EvalReport(
        accuracy=100.0 * float(np.mean(preds == id_test.y)),
        alea_conf=_scaled(confidence_calibration(post, preds, id_test.y, "aleatoric")),
        epist_conf=_scaled(confidence_calibration(post, preds, id_test.y, "epistemic")),
        brier=brier(p_mean, id_test.y),
        n_test=len(id_test),
        entropy={"id": mean_entropy(post)},
    )
    min_alpha = float(post.alpha.min())
    groups: list[tuple[str, DirichletParams]] = []
    for name, ds in (ood_sets or {}).items():
        if len(ds):
            groups.append((name, model.posterior(ds.X)))
    if oodom_factor is not None:
        scaled = id_test.with_features(model.prepare(id_test.X))
        groups.append(("oodom", model.posterior(make_oodom(scaled, oodom_factor).X, scaled=True)))
    for name, other in groups:
        report.ood[name] = {
            "alea_auc_pr": 100.0 * ood_detection(post, other, "aleatoric"),
            "epist_auc_pr": 100.0 * ood_detection(post, other, "epistemic"),
            "n": len(other),
        }
        report.entropy[name] = mean_entropy(other)
        min_alpha = min(min_alpha, float(other.alpha.min()))
    report.min_alpha = min_alpha
    return report


def export_uncertainty_grid(model, bounds, resolution: int) -> np.ndarray:
    """Rows (x1, x2, alpha0, max_prob, pred, entropy) over a regular raw-input grid.

    ``bounds`` is ``(x1min, x1max, x2min, x2max)``; the grid has
    ``resolution ** 2`` rows with x1 varying slowest.
    """
    if model.input_dim != 2:
        raise MetricError(f"grid export needs a 2D input space, model has {model.input_dim} inputs")
    if resolution < 1:
        raise MetricError("resolution must be >= 1")
    x1min, x1max, x2min, x2max = (float(b) for b in bounds)
    g1 = np.linspace(x1min, x1max, resolution)
    g2 = np.linspace(x2min, x2max, resolution)
    pts = np.stack(np.meshgrid(g1, g2, indexing="ij"), axis=-1).reshape(-1, 2)
    post = model.posterior(pts)
    p_mean = dirichlet_mean(post)
    return np.column_stack(
        [pts, post.alpha0, p_mean.max(axis=1), predict_class(post), categorical_entropy(p_mean)]
    )


def write_grid_csv(rows: np.ndarray, path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(GRID_HEADER)
        for r in rows:
            writer.writerow([repr(float(r[0])), repr(float(r[1])), repr(float(r[2])), repr(float(r[3])),
                             int(r[4]), repr(float(r[5]))])


def mean_and_sem(values) -> tuple[float, float]:
    """Mean and standard error of the mean across runs."""
    v = np.asarray([x for x in values if x is not None], dtype=np.float64)
    if v.size == 0:
        return float("nan"), float("nan")
    sem = float(v.std(ddof=1) / np.sqrt(v.size)) if v.size > 1 else 0.0
    return float(v.mean()), sem
