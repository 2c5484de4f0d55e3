"""Buyer and seller evaluation metrics.

Buyer: F1 of thresholded purchase probabilities and a monotonicity score
over a price grid. Seller: price-decrease / price-increase recall, precision
and F1 (PDR/PDP/PDF1, PIR/PIP/PIF1) and the regret score RS.

Undefined values (empty denominators) are ``None``, never zero.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import asdict, dataclass

import numpy as np

from .neural import ConfigurationError, Mlp, forward

N_BOOTSTRAP = 100
MONOTONICITY_GRID = np.linspace(0.0, 1.0, 21)


@dataclass
class EvalRecords:
    """Column-wise records ``(p, fs, q, y)`` for one model on one dataset."""

    p: np.ndarray
    fs: np.ndarray
    q: np.ndarray
    y: np.ndarray
    strict: bool = True  # reject purchases at zero offered price (RS undefined)

    def __post_init__(self):
        self.p = np.asarray(self.p, dtype=np.float64).ravel()
        n = len(self.p)
        self.fs = np.broadcast_to(np.asarray(self.fs, dtype=np.float64), (n,)).copy()
        self.q = np.broadcast_to(np.asarray(self.q, dtype=np.float64), (n,)).copy()
        self.y = np.asarray(self.y).astype(np.int64).ravel()
        if len(self.y) != n:
            raise ValueError("records have inconsistent lengths")
        if not all(np.all(np.isfinite(a)) for a in (self.p, self.fs, self.q)):
            raise ValueError("records contain non-finite values")
        if np.any((self.p < 0) | (self.p > 1)):
            raise ValueError("offered prices must lie in [0, 1]")
        if not np.all(np.isin(self.y, (0, 1))):
            raise ValueError("outcomes must be 0 or 1")
        zero_purchase = np.flatnonzero((self.y == 1) & (self.p == 0))
        if self.strict and zero_purchase.size:
            raise ValueError(f"purchase records with zero offered price: {zero_purchase[:10].tolist()}")

    def __len__(self):
        return len(self.p)

    def transformed(self) -> "EvalRecords":
        """Mirror image ``(1 - p, 1 - fs, 1 - q, 1 - y)``."""
        return EvalRecords(1 - self.p, 1 - self.fs, 1 - self.q, 1 - self.y, strict=False)


def _require(records: EvalRecords):
    if len(records) == 0:
        raise ValueError("metrics of an empty record set are undefined")


def _ratio(num, den):
    return None if den == 0 else num / den


def _harmonic(a, b):
    if a is None or b is None:
        return None
    return 0.0 if a + b == 0 else 2 * a * b / (a + b)


def _f1(y, yhat):
    tp = int(np.sum((yhat == 1) & (y == 1)))
    pred = int(np.sum(yhat == 1))
    actual = int(np.sum(y == 1))
    if pred == 0 and actual == 0:
        return 0.0, True
    if tp == 0:
        return 0.0, False
    precision, recall = tp / pred, tp / actual
    return 2 * precision * recall / (precision + recall), False


def f1_score(records: EvalRecords, threshold: float = 0.5) -> float:
    _require(records)
    f1, degenerate = _f1(records.y, (records.q >= threshold).astype(np.int64))
    if degenerate:
        warnings.warn("F1 undefined (no predicted or actual positives); reporting 0", stacklevel=2)
    return f1


def f1_bootstrap_std(records: EvalRecords, threshold=0.5, n_resamples=N_BOOTSTRAP, seed=0) -> float:
    _require(records)
    rng = np.random.default_rng(seed)
    yhat = (records.q >= threshold).astype(np.int64)
    n = len(records)
    scores = []
    for _ in range(n_resamples):
        idx = rng.integers(0, n, n)
        scores.append(_f1(records.y[idx], yhat[idx])[0])
    return float(np.std(scores))


def monotonicity_components(buyer: Mlp, contexts, price_grid=MONOTONICITY_GRID):
    """Per-context fractions of non-increasing steps and non-negative curvature."""
    grid = np.asarray(price_grid, dtype=np.float64)
    if grid.ndim != 1 or len(grid) < 3:
        raise ConfigurationError("monotonicity needs a price grid with at least 3 points")
    if np.any(np.diff(grid) <= 0):
        raise ConfigurationError("price grid must be ascending")
    x = np.atleast_2d(np.asarray(contexts, dtype=np.float64))
    n, g = len(x), len(grid)
    curves = forward(buyer, np.column_stack([np.repeat(x, g, axis=0), np.tile(grid, n)]))[0].reshape(n, g)
    first = np.mean(np.diff(curves, axis=1) <= 0, axis=1)
    second = np.mean(np.diff(curves, n=2, axis=1) >= 0, axis=1)
    return first, second


def monotonicity_score(buyer: Mlp, contexts, price_grid=MONOTONICITY_GRID) -> tuple[float, float]:
    """Mean and std over contexts of the 50/50 blend of the two shape fractions."""
    first, second = monotonicity_components(buyer, contexts, price_grid)
    per_context = 0.5 * first + 0.5 * second
    return float(per_context.mean()), float(per_context.std())


def price_decrease_metrics(records: EvalRecords):
    """(PDR, PDP, PDF1) for suggesting lower prices on non-purchases."""
    _require(records)
    dec = records.fs < records.p
    neg = records.y == 0
    hit = int(np.sum(dec & neg))
    pdr = _ratio(hit, int(neg.sum()))
    pdp = _ratio(hit, int(dec.sum()))
    return pdr, pdp, _harmonic(pdr, pdp)


def price_increase_metrics(records: EvalRecords):
    """(PIR, PIP, PIF1) for suggesting higher prices on purchases."""
    _require(records)
    inc = records.fs > records.p
    pos = records.y == 1
    hit = int(np.sum(inc & pos))
    pir = _ratio(hit, int(pos.sum()))
    pip = _ratio(hit, int(inc.sum()))
    return pir, pip, _harmonic(pir, pip)


def regret_score(records: EvalRecords):
    """Median over purchases of ``max(0, 1 - fs / p)``; None without purchases."""
    _require(records)
    pos = records.y == 1
    if not pos.any():
        return None
    if np.any(records.p[pos] == 0):
        raise ValueError("regret undefined for purchases at zero offered price")
    regret = np.maximum(0.0, 1.0 - records.fs[pos] / records.p[pos])
    return float(np.median(regret))


@dataclass
class MetricsReport:
    f1: float
    f1_std: float
    monotonicity: float
    monotonicity_std: float
    pdr: float | None
    pdp: float | None
    pdf1: float | None
    pir: float | None
    pip: float | None
    pif1: float | None
    rs: float | None
    n_purchases: int
    n_nonpurchases: int
    price_mean: float
    price_std: float

    def to_dict(self) -> dict:
        return asdict(self)


def evaluate(records: EvalRecords, buyer: Mlp, contexts, threshold=0.5, seed=0,
             price_grid=MONOTONICITY_GRID) -> MetricsReport:
    _require(records)
    mono, mono_std = monotonicity_score(buyer, contexts, price_grid)
    pdr, pdp, pdf1 = price_decrease_metrics(records)
    pir, pip, pif1 = price_increase_metrics(records)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        f1 = f1_score(records, threshold)
    return MetricsReport(
        f1=f1,
        f1_std=f1_bootstrap_std(records, threshold, seed=seed),
        monotonicity=mono,
        monotonicity_std=mono_std,
        pdr=pdr, pdp=pdp, pdf1=pdf1,
        pir=pir, pip=pip, pif1=pif1,
        rs=regret_score(records),
        n_purchases=int(np.sum(records.y == 1)),
        n_nonpurchases=int(np.sum(records.y == 0)),
        price_mean=float(np.mean(records.fs)),
        price_std=float(np.std(records.fs)),
    )


def _round(v):
    return None if v is None else round(float(v), 12) if isinstance(v, float) else v


def reports_to_json(reports: dict[str, MetricsReport], extra: dict | None = None) -> str:
    """Canonical JSON: sorted keys, values rounded to 12 decimals."""
    doc = {name: {k: _round(v) for k, v in r.to_dict().items()} for name, r in reports.items()}
    if extra:
        doc["_meta"] = extra
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def render_table(reports: dict[str, MetricsReport]) -> str:
    """Aligned text table: buyer (F1, M) and seller (PDF1, PIF1, RS) columns."""

    def cell(v, sd=None):
        if v is None:
            return "n/a"
        return f"{v:.3f}" if sd is None else f"{v:.3f} ± {sd:.3f}"

    header = ["Model", "F1", "M", "PDF1", "PIF1", "RS"]
    rows = [header]
    for name, r in reports.items():
        rows.append([
            name,
            cell(r.f1, r.f1_std),
            cell(r.monotonicity, r.monotonicity_std),
            cell(r.pdf1), cell(r.pif1), cell(r.rs),
        ])
    widths = [max(len(row[i]) for row in rows) for i in range(len(header))]
    lines = ["  ".join(c.ljust(w) for c, w in zip(row, widths)).rstrip() for row in rows]
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"
