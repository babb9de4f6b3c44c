"""Datasets: synthetic generation, CSV ingestion, scaling, splits, OOD sets."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

# class means of the 2D three-Gaussians benchmark
THREE_GAUSSIAN_MEANS = np.array(
    [
        [0.0, 2.0],
        [-1.73205081, -1.0],
        [1.73205081, -1.0],
    ]
)
THREE_GAUSSIAN_VARIANCE = 0.2


class DataError(ValueError):
    """Malformed or unusable input data."""


@dataclass
class LabeledDataset:
    X: np.ndarray
    y: np.ndarray
    class_names: list[str] = field(default_factory=list)
    feature_names: list[str] = field(default_factory=list)
    provenance: str = ""

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=np.intp)
        if self.X.ndim != 2 or self.y.shape != (self.X.shape[0],):
            raise DataError(f"X must be (N, D) and y (N,), got {self.X.shape} and {self.y.shape}")
        if np.isnan(self.X).any():
            raise DataError("features contain NaN")
        if not self.class_names and len(self.y):
            self.class_names = [str(i) for i in range(int(self.y.max()) + 1)]
        if len(self.y) and (self.y.min() < 0 or self.y.max() >= len(self.class_names)):
            raise DataError(f"labels must lie in [0, {len(self.class_names)})")
        if not self.feature_names:
            self.feature_names = [f"x{i + 1}" for i in range(self.X.shape[1])]

    def __len__(self) -> int:
        return self.X.shape[0]

    @property
    def n_classes(self) -> int:
        return len(self.class_names)

    @property
    def n_features(self) -> int:
        return self.X.shape[1]

    def subset(self, index) -> "LabeledDataset":
        index = np.asarray(index, dtype=np.intp)
        return replace(self, X=self.X[index], y=self.y[index])

    def with_features(self, X: np.ndarray, provenance: str | None = None) -> "LabeledDataset":
        return replace(self, X=X, provenance=self.provenance if provenance is None else provenance)


def generate_three_gaussians(n: int = 1500, seed: int = 0) -> LabeledDataset:
    """Three isotropic 2D Gaussians (variance 0.2); remainders go round-robin."""
    if n < 3:
        raise DataError(f"need at least 3 samples, got {n}")
    rng = np.random.default_rng(seed)
    sizes = [n // 3 + (1 if c < n % 3 else 0) for c in range(3)]
    std = math.sqrt(THREE_GAUSSIAN_VARIANCE)
    X = np.concatenate([rng.normal(mu, std, size=(m, 2)) for mu, m in zip(THREE_GAUSSIAN_MEANS, sizes)])
    y = np.repeat(np.arange(3), sizes)
    return LabeledDataset(X, y, ["0", "1", "2"], ["x1", "x2"], provenance=f"three-gaussians(n={n},seed={seed})")


def _parse_labels(raw: list[str]) -> tuple[np.ndarray, list[str]]:
    """Integer labels map to dense indices in sorted order, strings by first appearance."""
    try:
        ints = [int(v) for v in raw]
    except ValueError:
        names: dict[str, int] = {}
        y = [names.setdefault(v, len(names)) for v in raw]
        return np.asarray(y, dtype=np.intp), list(names)
    uniq = sorted(set(ints))
    lookup = {v: i for i, v in enumerate(uniq)}
    return np.asarray([lookup[v] for v in ints], dtype=np.intp), [str(v) for v in uniq]


def load_csv(path, class_names: list[str] | None = None) -> LabeledDataset:
    """Read a header-first CSV whose last column holds the class label.

    ``class_names`` pins the label vocabulary (e.g. the one stored with a
    trained model) so that a test file uses the training indices.
    """
    path = Path(path)
    try:
        with path.open(newline="", encoding="utf-8") as fh:
            rows = [row for row in csv.reader(fh) if row]
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc.strerror}") from exc
    if not rows:
        raise DataError(f"{path} is empty")
    header, body = rows[0], rows[1:]
    if len(header) < 2:
        raise DataError(f"{path}: need at least one feature column and a label column")
    if _is_numeric_row(header[:-1]):
        raise DataError(f"{path}: missing header row")
    features, labels = [], []
    for lineno, row in enumerate(body, start=2):
        if len(row) != len(header):
            raise DataError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
        try:
            features.append([float(v) for v in row[:-1]])
        except ValueError:
            raise DataError(f"{path}:{lineno}: non-numeric feature value") from None
        labels.append(row[-1].strip())
    X = np.asarray(features, dtype=np.float64).reshape(len(features), len(header) - 1)
    if not np.all(np.isfinite(X)):
        bad = int(np.argwhere(~np.isfinite(X))[0, 0]) + 2
        raise DataError(f"{path}:{bad}: non-finite feature value")
    if class_names is None:
        y, names = _parse_labels(labels)
    else:
        names = list(class_names)
        lookup = {name: i for i, name in enumerate(names)}
        unknown = sorted(set(labels) - set(lookup))
        if unknown:
            raise DataError(f"{path}: labels {unknown} not among known classes {names}")
        y = np.asarray([lookup[v] for v in labels], dtype=np.intp)
    return LabeledDataset(X, y, names, [h.strip() for h in header[:-1]], provenance=str(path))


def _is_numeric_row(values: list[str]) -> bool:
    try:
        for v in values:
            float(v)
    except ValueError:
        return False
    return True


def save_csv(ds: LabeledDataset, path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow([*ds.feature_names, "label"])
        for row, label in zip(ds.X, ds.y):
            writer.writerow([repr(float(v)) for v in row] + [ds.class_names[label]])


def split(ds: LabeledDataset, ratios=(0.6, 0.2, 0.2), seed: int = 0) -> tuple[LabeledDataset, ...]:
    """Random disjoint partition with sizes rounded to sum to N."""
    ratios = np.asarray(ratios, dtype=np.float64)
    if abs(ratios.sum() - 1.0) > 1e-9 or np.any(ratios < 0):
        raise DataError(f"split ratios must be non-negative and sum to 1, got {ratios.tolist()}")
    n = len(ds)
    bounds = np.rint(np.cumsum(ratios) * n).astype(int)
    bounds[-1] = n
    perm = np.random.default_rng(seed).permutation(n)
    starts = np.concatenate([[0], bounds[:-1]])
    return tuple(ds.subset(np.sort(perm[a:b])) for a, b in zip(starts, bounds))


@dataclass
class MinMaxScaler:
    minimum: np.ndarray
    maximum: np.ndarray

    @classmethod
    def fit(cls, X: np.ndarray) -> "MinMaxScaler":
        X = np.asarray(X, dtype=np.float64)
        if X.shape[0] == 0:
            raise DataError("cannot fit a scaler on an empty split")
        return cls(X.min(axis=0), X.max(axis=0))

    @property
    def span(self) -> np.ndarray:
        return self.maximum - self.minimum

    def transform(self, X: np.ndarray) -> np.ndarray:
        span = self.span
        safe = np.where(span > 0, span, 1.0)
        return np.where(span > 0, (np.asarray(X, dtype=np.float64) - self.minimum) / safe, 0.0)

    def inverse_transform(self, X: np.ndarray) -> np.ndarray:
        return np.asarray(X, dtype=np.float64) * self.span + self.minimum

    def to_dict(self) -> dict:
        return {"min": self.minimum.tolist(), "max": self.maximum.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "MinMaxScaler":
        return cls(np.asarray(d["min"], dtype=np.float64), np.asarray(d["max"], dtype=np.float64))


def fit_apply_minmax(train: LabeledDataset, *others: LabeledDataset):
    """Scale every split with statistics from ``train`` only.

    Returns ``(scaled_train, *scaled_others, scaler)``.
    """
    scaler = MinMaxScaler.fit(train.X)
    scaled = [d.with_features(scaler.transform(d.X)) for d in (train, *others)]
    return (*scaled, scaler)


def leave_out_classes(ds: LabeledDataset, classes) -> tuple[LabeledDataset, LabeledDataset]:
    """Move the given classes (names or indices) into a separate OOD set.

    The remaining in-distribution labels are re-indexed densely, keeping
    their relative order.
    """
    drop = set()
    for c in classes:
        if isinstance(c, (int, np.integer)) and not isinstance(c, bool):
            if not 0 <= c < ds.n_classes:
                raise DataError(f"class index {c} out of range")
            drop.add(int(c))
        elif str(c) in ds.class_names:
            drop.add(ds.class_names.index(str(c)))
        else:
            raise DataError(f"unknown class {c!r}; known classes {ds.class_names}")
    keep = [i for i in range(ds.n_classes) if i not in drop]
    if len(keep) < 2:
        raise DataError("leaving out these classes leaves fewer than 2 in-distribution classes")
    remap = np.full(ds.n_classes, -1, dtype=np.intp)
    remap[keep] = np.arange(len(keep))
    ood_mask = np.isin(ds.y, sorted(drop))
    id_ds = LabeledDataset(
        ds.X[~ood_mask],
        remap[ds.y[~ood_mask]],
        [ds.class_names[i] for i in keep],
        ds.feature_names,
        provenance=ds.provenance,
    )
    ood_names = [ds.class_names[i] for i in sorted(drop)]
    ood_remap = {old: new for new, old in enumerate(sorted(drop))}
    ood_y = np.asarray([ood_remap[v] for v in ds.y[ood_mask]], dtype=np.intp)
    ood_ds = LabeledDataset(
        ds.X[ood_mask].reshape(-1, ds.n_features),
        ood_y,
        ood_names or ["ood"],
        ds.feature_names,
        provenance=f"{ds.provenance}[ood]",
    )
    return id_ds, ood_ds


def make_oodom(ds: LabeledDataset, factor: float = 255.0) -> LabeledDataset:
    """Multiply (already scaled) features by ``factor`` to mimic unscaled inputs."""
    if factor < 1:
        raise DataError(f"out-of-domain factor must be >= 1, got {factor}")
    return ds.with_features(ds.X * factor, provenance=f"{ds.provenance}[x{factor:g}]")


# UCI conversion ---------------------------------------------------------------

SEGMENT_DROPPED_COLUMN = "REGION-PIXEL-COUNT"


def convert_segment(paths) -> LabeledDataset:
    """Parse UCI ``segmentation.data`` / ``segmentation.test`` files.

    Rows are ``CLASS,f1,...,f19``. The constant REGION-PIXEL-COUNT column is
    dropped, leaving 18 features; class names are lower-cased.
    """
    header = None
    features, labels = [], []
    for path in paths:
        with Path(path).open(encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if not line or "," not in line:
                    continue
                fields = [f.strip() for f in line.split(",")]
                if fields[0].upper() == "REGION-CENTROID-COL":
                    header = fields
                    continue
                if header is None:
                    continue
                if len(fields) != len(header) + 1:
                    raise DataError(f"{path}: expected {len(header) + 1} fields, got {len(fields)}")
                labels.append(fields[0].lower())
                try:
                    features.append([float(v) for v in fields[1:]])
                except ValueError:
                    raise DataError(f"{path}: non-numeric feature in row {line[:40]!r}") from None
    if header is None or not features:
        raise DataError("no segment rows found (expected a REGION-CENTROID-COL header line)")
    X = np.asarray(features)
    keep = [i for i, name in enumerate(header) if name.upper() != SEGMENT_DROPPED_COLUMN]
    y, names = _parse_labels(labels)
    return LabeledDataset(X[:, keep], y, names, [header[i].lower() for i in keep], provenance="uci-segment")


def convert_sensorless(paths) -> LabeledDataset:
    """Parse the whitespace-separated UCI Sensorless Drive file (label last, 1..11)."""
    rows = []
    for path in paths:
        with Path(path).open(encoding="utf-8") as fh:
            for line in fh:
                parts = line.split()
                if parts:
                    rows.append(parts)
    if not rows:
        raise DataError("no sensorless rows found")
    width = len(rows[0])
    if any(len(r) != width for r in rows):
        raise DataError("ragged rows in sensorless file")
    try:
        X = np.asarray([[float(v) for v in r[:-1]] for r in rows])
    except ValueError:
        raise DataError("non-numeric feature in sensorless file") from None
    y, names = _parse_labels([str(int(float(r[-1]))) for r in rows])
    return LabeledDataset(X, y, names, [f"f{i + 1}" for i in range(width - 1)], provenance="uci-sensorless")
