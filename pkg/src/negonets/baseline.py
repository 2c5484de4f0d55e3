"""Sequential forecast-then-price baseline.

A demand forecaster (same architecture and optimiser as the buyer network)
estimates purchase probability from ``(x, p)``; the seller baseline then picks,
per context, the grid price maximising ``p * forecast(x, p)``. A logistic
price-response ``logit(demand) ~ a + b p`` is also fitted for reporting.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.special import logit

from .data import Dataset
from .losses import cross_entropy, cross_entropy_grad
from .neural import (
    AdamState,
    ConfigurationError,
    EarlyStopState,
    Mlp,
    TrainingError,
    adam_step,
    backward,
    early_stop_update,
    forward,
    mlp_init,
)
from .training import TrainConfig

log = logging.getLogger(__name__)

DEFAULT_GRID = np.round(np.linspace(0.0, 1.0, 101), 12)


def architecture_signature(net: Mlp) -> tuple:
    return tuple(net.layer_shapes), tuple(net.activations)


def optimizer_signature(cfg: TrainConfig) -> dict:
    """Settings the forecaster shares with the buyer network."""
    return {
        "hidden": tuple(cfg.hidden),
        "lr": cfg.buyer_lr,
        "batch_size": cfg.batch_size,
        "epochs": cfg.epochs,
        "patience": cfg.patience,
        "optimizer": "adam",
    }


def _mean_ce(net: Mlp, data: Dataset) -> float:
    q, _ = forward(net, data.buyer_inputs())
    return float(np.mean(cross_entropy(data.y, q)))


def train_forecaster(train: Dataset, val: Dataset, cfg: TrainConfig) -> tuple[Mlp, list[float]]:
    """Cross-entropy classifier on ``(x, p) -> y``; returns (net, val-loss curve)."""
    if len(train) == 0 or len(val) == 0:
        raise ConfigurationError("train and validation sets must be nonempty")
    if cfg.batch_size > len(train):
        raise ConfigurationError(f"batch_size {cfg.batch_size} exceeds training set size {len(train)}")
    # same init stream as the buyer network
    net = mlp_init(train.dim + 1, cfg.hidden, cfg.seed + 1)
    opt = AdamState.for_params(net.params(), lr=cfg.buyer_lr)
    stopper = EarlyStopState(patience=cfg.patience)
    rng = np.random.default_rng(cfg.seed)
    inputs = train.buyer_inputs()
    y = train.y.astype(np.float64)
    curve = []
    for epoch in range(cfg.epochs):
        order = rng.permutation(len(train))
        for lo in range(0, len(order), cfg.batch_size):
            idx = order[lo:lo + cfg.batch_size]
            q, trace = forward(net, inputs[idx])
            grads, _ = backward(net, trace, cross_entropy_grad(y[idx], q) / len(idx))
            try:
                params, opt = adam_step(opt, net.params(), grads)
            except TrainingError as exc:
                raise TrainingError(f"forecaster epoch {epoch}: {exc}") from exc
            net = net.with_params(params)
        val_loss = _mean_ce(net, val)
        curve.append(val_loss)
        stopper, stop = early_stop_update(stopper, val_loss, net)
        if stop:
            break
    return stopper.best_params, curve


@dataclass
class BaselineSeller:
    forecaster: Mlp
    price_grid: np.ndarray
    intercept: float
    slope: float
    degenerate: bool = False

    def __post_init__(self):
        g = np.asarray(self.price_grid, dtype=np.float64)
        if g.ndim != 1 or len(g) < 2 or np.any(np.diff(g) <= 0):
            raise ConfigurationError("price grid must be strictly ascending")
        if g[0] < 0 or g[-1] > 1:
            raise ConfigurationError("price grid must lie in [0, 1]")
        self.price_grid = g


def forecast_grid(forecaster: Mlp, contexts, price_grid) -> np.ndarray:
    """Forecast for every (context, grid price) pair, shape (n_contexts, n_grid)."""
    x = np.atleast_2d(np.asarray(contexts, dtype=np.float64))
    grid = np.asarray(price_grid, dtype=np.float64)
    n, g = len(x), len(grid)
    inputs = np.column_stack([np.repeat(x, g, axis=0), np.tile(grid, n)])
    return forward(forecaster, inputs)[0].reshape(n, g)


def fit_price_response(forecaster: Mlp, contexts, price_grid=DEFAULT_GRID):
    """Least-squares fit of ``logit(mean demand) = a + b p`` over the grid.

    Returns ``(a, b, degenerate)``; a flat forecast gives ``b = 0`` and
    ``degenerate=True``.
    """
    x = np.atleast_2d(np.asarray(contexts, dtype=np.float64))
    if len(x) == 0:
        raise ConfigurationError("need at least one context")
    grid = np.asarray(price_grid, dtype=np.float64)
    demand = forecast_grid(forecaster, x, grid).mean(axis=0)
    z = logit(np.clip(demand, 1e-12, 1 - 1e-12))
    if np.ptp(z) < 1e-12:
        log.warning("forecaster is price-insensitive; price response is flat")
        return float(z.mean()), 0.0, True
    b, a = np.polyfit(grid, z, 1)
    return float(a), float(b), False


def fit_baseline_seller(forecaster: Mlp, contexts, price_grid=DEFAULT_GRID) -> BaselineSeller:
    a, b, flat = fit_price_response(forecaster, contexts, price_grid)
    return BaselineSeller(forecaster, np.asarray(price_grid), a, b, flat)


def baseline_price(seller: BaselineSeller, x) -> np.ndarray:
    """Expected-revenue argmax over the grid; ties go to the lower price."""
    q = forecast_grid(seller.forecaster, x, seller.price_grid)
    revenue = seller.price_grid[None, :] * q
    # argmax returns the first maximiser, i.e. the lowest tied price
    return seller.price_grid[np.argmax(revenue, axis=1)]
