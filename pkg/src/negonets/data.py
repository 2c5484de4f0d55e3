"""Interaction datasets: schema, CSV ingestion, price normalisation, splits."""

from __future__ import annotations

import csv
import json
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .neural import ConfigurationError


class IngestionError(ValueError):
    def __init__(self, message, rows=()):
        self.rows = list(rows)
        super().__init__(message)


@dataclass
class Dataset:
    """``N`` interactions ``(x, p, y)`` with normalised offered price ``p``."""

    x: np.ndarray  # (N, D)
    p: np.ndarray  # (N,)
    y: np.ndarray  # (N,) int 0/1
    feature_names: list[str]
    window: tuple[float, float] = (0.0, 1.0)
    provenance: str = "external"
    groups: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=np.float64)
        if self.x.size == 0:
            self.x = np.zeros((0, len(self.feature_names)))
        self.p = np.asarray(self.p, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=np.int64)
        if not self.feature_names or self.x.shape[1] != len(self.feature_names):
            raise ConfigurationError(
                f"{len(self.feature_names)} feature names for {self.x.shape[1]} context columns"
            )
        if not self.window[0] < self.window[1]:
            raise ConfigurationError(f"degenerate price window {self.window}")
        if self.p.shape != self.y.shape or self.x.shape[0] != self.p.shape[0]:
            raise ConfigurationError("x, p and y lengths differ")

    def __len__(self):
        return len(self.p)

    @property
    def dim(self) -> int:
        return self.x.shape[1]

    def buyer_inputs(self, prices=None) -> np.ndarray:
        prices = self.p if prices is None else prices
        return np.column_stack([self.x, prices])

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx, dtype=np.int64)
        return Dataset(
            self.x[idx], self.p[idx], self.y[idx], list(self.feature_names), self.window,
            self.provenance, None if self.groups is None else self.groups[idx],
        )

    def conversion_rate(self) -> float:
        return float(self.y.mean()) if len(self) else float("nan")


def normalize_prices(raw, window):
    lo, hi = window
    if not lo < hi:
        raise ConfigurationError(f"degenerate price window {window}")
    return np.clip((np.asarray(raw, dtype=np.float64) - lo) / (hi - lo), 0.0, 1.0)


def denormalize_prices(p, window):
    lo, hi = window
    return lo + np.asarray(p, dtype=np.float64) * (hi - lo)


def split(dataset: Dataset, test_frac=0.2, val_frac_of_remaining=0.2, seed=0):
    """Shuffled (train, val, test) partition: 20% test, then 80/20 train/val."""
    for name, frac in (("test_frac", test_frac), ("val_frac_of_remaining", val_frac_of_remaining)):
        if not 0.0 < frac < 1.0:
            raise ConfigurationError(f"{name} must lie in (0, 1), got {frac}")
    n = len(dataset)
    if n < 5:
        raise ConfigurationError(f"need at least 5 interactions to split, got {n}")
    order = np.random.default_rng(seed).permutation(n)
    n_test = int(round(n * test_frac))
    n_val = int(round((n - n_test) * val_frac_of_remaining))
    test = order[:n_test]
    val = order[n_test:n_test + n_val]
    train = order[n_test + n_val:]
    return dataset.subset(train), dataset.subset(val), dataset.subset(test)


def holdout(dataset: Dataset, val_frac=0.2, seed=0):
    """Shuffled (train, val) partition; the validation part gets ``floor(n * val_frac)`` rows."""
    if not 0.0 < val_frac < 1.0:
        raise ConfigurationError(f"val_frac must lie in (0, 1), got {val_frac}")
    n = len(dataset)
    n_val = int(n * val_frac)
    if n_val < 1 or n_val >= n:
        raise ConfigurationError(f"cannot hold out {val_frac:g} of {n} interactions")
    order = np.random.default_rng(seed).permutation(n)
    return dataset.subset(order[n_val:]), dataset.subset(order[:n_val])


# -- CSV interchange ----------------------------------------------------------


def meta_path(csv_path) -> Path:
    csv_path = Path(csv_path)
    return csv_path.with_name(csv_path.stem + ".meta.json")


def _fmt(v: float) -> str:
    return repr(float(v))


def save_csv(dataset: Dataset, path) -> None:
    """Write ``x_0..x_{D-1},price,label`` plus the JSON sidecar."""
    path = Path(path)
    header = [f"x_{j}" for j in range(dataset.dim)] + ["price", "label"]
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for xi, pi, yi in zip(dataset.x, dataset.p, dataset.y):
            w.writerow([_fmt(v) for v in xi] + [_fmt(pi), str(int(yi))])
    meta = {
        "feature_names": list(dataset.feature_names),
        "window": [float(dataset.window[0]), float(dataset.window[1])],
        "provenance": dataset.provenance,
        "n": len(dataset),
    }
    meta_path(path).write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")


def load_csv(path) -> Dataset:
    path = Path(path)
    with path.open(newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise IngestionError(f"{path}: missing header row")
    header = [h.strip() for h in rows[0]]
    if "price" not in header or "label" not in header:
        raise IngestionError(f"{path}: header must contain 'price' and 'label', got {header}")
    x_cols = [h for h in header if h.startswith("x_")]
    expected = [f"x_{j}" for j in range(len(x_cols))] + ["price", "label"]
    if header != expected:
        raise IngestionError(f"{path}: expected columns {expected}, got {header}")
    d = len(x_cols)
    if d == 0:
        raise IngestionError(f"{path}: no context columns x_0..")

    bad: list[tuple[int, str]] = []
    xs, ps, ys = [], [], []
    for lineno, row in enumerate(rows[1:], start=2):
        if len(row) != d + 2:
            bad.append((lineno, f"expected {d + 2} cells, got {len(row)}"))
            continue
        try:
            vals = [float(c) for c in row[:-1]]
        except ValueError:
            bad.append((lineno, "non-numeric cell"))
            continue
        label = row[-1].strip()
        if label not in ("0", "1"):
            bad.append((lineno, f"label {label!r} not in {{0,1}}"))
            continue
        if not all(math.isfinite(v) for v in vals):
            bad.append((lineno, "non-finite value"))
            continue
        if not 0.0 <= vals[-1] <= 1.0:
            bad.append((lineno, f"price {vals[-1]} outside [0, 1]"))
            continue
        xs.append(vals[:-1])
        ps.append(vals[-1])
        ys.append(int(label))
    if bad:
        detail = "; ".join(f"line {ln}: {why}" for ln, why in bad[:20])
        more = f" (+{len(bad) - 20} more)" if len(bad) > 20 else ""
        raise IngestionError(f"{path}: {len(bad)} invalid rows: {detail}{more}", rows=[b[0] for b in bad])

    names = [f"x_{j}" for j in range(d)]
    window = (0.0, 1.0)
    provenance = "external"
    mp = meta_path(path)
    if mp.exists():
        meta = json.loads(mp.read_text())
        names = list(meta.get("feature_names", names))
        window = tuple(meta.get("window", window))
        provenance = meta.get("provenance", provenance)
        if len(names) != d:
            raise IngestionError(f"{mp}: {len(names)} feature names for {d} columns")
    if not xs:
        warnings.warn(f"{path}: no interactions after header", stacklevel=2)
    x = np.array(xs, dtype=np.float64).reshape(len(xs), d)
    return Dataset(x, np.array(ps), np.array(ys, dtype=np.int64), names, window, provenance)
