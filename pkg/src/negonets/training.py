"""Alternating min-max training of the seller and buyer networks.

Each batch runs ``buyer_steps`` descent steps on the buyer loss followed by
``seller_steps`` ascent steps on the seller objective. The opposing network
is frozen during a step; in the seller step the gradient still flows through
the buyer's price input into the seller.
"""

from __future__ import annotations

import dataclasses
import io
import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .data import Dataset
from .losses import (
    BatchTerms,
    LossConfig,
    boundary_penalty_grad,
    buyer_loss,
    cross_entropy_grad,
    seller_objective,
    sensitivity_points,
)
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

log = logging.getLogger(__name__)

COLLAPSE_STD = 1e-3


@dataclass
class TrainConfig:
    epochs: int = 150
    batch_size: int = 64
    buyer_lr: float = 3e-3
    seller_lr: float = 1e-2
    buyer_steps: int = 1
    seller_steps: int = 1
    hidden: tuple[int, ...] = (16, 16, 16)
    patience: int = 10
    seed: int = 0
    loss: LossConfig = field(default_factory=LossConfig)

    def __post_init__(self):
        self.hidden = tuple(int(h) for h in self.hidden)
        if isinstance(self.loss, dict):
            self.loss = LossConfig(**self.loss)
        if self.epochs < 1 or self.batch_size < 1 or self.patience < 1:
            raise ConfigurationError("epochs, batch_size and patience must be positive")
        if self.buyer_steps < 1 or self.seller_steps < 1:
            raise ConfigurationError("steps per side must be positive")
        for name in ("buyer_lr", "seller_lr"):
            lr = getattr(self, name)
            # 0 is accepted so a step can be run as a pure evaluation
            if not 0.0 <= lr < 1.0:
                raise ConfigurationError(f"{name} must lie in [0, 1), got {lr}")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


@dataclass
class EpochRecord:
    epoch: int
    buyer_loss: float
    seller_objective: float
    val_buyer_loss: float
    val_seller_objective: float
    price_std: float
    wall_clock: float


@dataclass
class TrainHistory:
    records: list[EpochRecord] = field(default_factory=list)
    best_epoch: int = -1
    stopped_early: bool = False

    @property
    def collapsed(self) -> bool:
        """Suggested prices nearly constant at the selected epoch."""
        if not self.records:
            return False
        rec = self.records[self.best_epoch] if self.best_epoch >= 0 else self.records[-1]
        return rec.price_std < COLLAPSE_STD

    def to_table(self, include_time=True) -> str:
        names = [f.name for f in dataclasses.fields(EpochRecord)]
        if not include_time:
            names.remove("wall_clock")
        buf = io.StringIO()
        buf.write(",".join(names) + "\n")
        for r in self.records:
            buf.write(",".join(repr(getattr(r, n)) for n in names) + "\n")
        return buf.getvalue()


def suggest_prices(seller: Mlp, contexts) -> np.ndarray:
    return forward(seller, contexts)[0]


def batch_terms(seller: Mlp, buyer: Mlp, x, p, y, cfg: LossConfig) -> BatchTerms:
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    s = suggest_prices(seller, x)
    s_hi, s_lo, width = sensitivity_points(s, cfg.fd_delta)
    out, _ = forward(buyer, _stack_prices(x, [s, s_hi, s_lo, p]))
    fb_s, fb_hi, fb_lo, fb_p = np.split(out, 4)
    return BatchTerms(s, fb_s, fb_p, (fb_hi - fb_lo) / width, np.asarray(p, float), np.asarray(y))


def _stack_prices(x, price_columns) -> np.ndarray:
    return np.vstack([np.column_stack([x, pc]) for pc in price_columns])


def _buyer_grads(seller, buyer, x, p, y, cfg: LossConfig):
    n = len(p)
    s = suggest_prices(seller, x)
    s_hi, s_lo, width = sensitivity_points(s, cfg.fd_delta)
    out, trace = forward(buyer, _stack_prices(x, [s, s_hi, s_lo, p]))
    fb_s, fb_hi, fb_lo, fb_p = np.split(out, 4)
    d = (fb_hi - fb_lo) / width
    active = (d > 0).astype(np.float64)
    g = np.concatenate([
        s,
        active / width,
        -active / width,
        cfg.lam * cross_entropy_grad(y, fb_p),
    ]) / n
    grads, _ = backward(buyer, trace, g)
    loss = buyer_loss(BatchTerms(s, fb_s, fb_p, d, p, y), cfg)
    return grads, loss


def _price_derivative(buyer: Mlp, x, prices):
    """Buyer output and its exact derivative w.r.t. the price input."""
    out, trace = forward(buyer, np.column_stack([x, prices]))
    _, gin = backward(buyer, trace, np.ones_like(out))
    return out, gin[:, -1]


def seller_price_gradient(seller, buyer, x, p, y, cfg: LossConfig):
    """Per-interaction d(seller objective)/d f_s (before batch averaging)."""
    s, s_trace = forward(seller, x)
    fb_s, dfb_s = _price_derivative(buyer, x, s)
    g = fb_s + s * dfb_s - cfg.lam * boundary_penalty_grad(s, p, y, cfg)
    s_hi, s_lo, width = sensitivity_points(s, cfg.fd_delta)
    fb_hi, dfb_hi = _price_derivative(buyer, x, s_hi)
    fb_lo, dfb_lo = _price_derivative(buyer, x, s_lo)
    d = (fb_hi - fb_lo) / width
    if cfg.pointwise_in_seller:
        a = (s + cfg.fd_delta < 1.0).astype(np.float64)
        b = (s - cfg.fd_delta > 0.0).astype(np.float64)
        dd = (dfb_hi * a - dfb_lo * b) / width - d * (a - b) / width
        g = g + (d > 0) * dd
    terms = BatchTerms(s, fb_s, None, d, p, y)
    return g, s_trace, terms


def _seller_grads(seller, buyer, x, p, y, cfg: LossConfig):
    g, s_trace, terms = seller_price_gradient(seller, buyer, x, p, y, cfg)
    grads, _ = backward(seller, s_trace, g / len(p))
    return grads, seller_objective(terms, cfg)


def train_step(seller: Mlp, buyer: Mlp, batch, cfg: TrainConfig, side: str, opt: AdamState | None = None):
    """One half-step of the alternation.

    ``batch`` is ``(x, p, y)``. Returns ``(updated_network, loss, opt)`` where
    the network is the one named by ``side``; the other is never touched.
    """
    x, p, y = batch
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    p = np.asarray(p, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if len(p) == 0:
        raise ValueError("empty batch")
    if side == "buyer":
        net, lr, maximize = buyer, cfg.buyer_lr, False
        grads, loss = _buyer_grads(seller, buyer, x, p, y, cfg.loss)
    elif side == "seller":
        net, lr, maximize = seller, cfg.seller_lr, True
        grads, loss = _seller_grads(seller, buyer, x, p, y, cfg.loss)
    else:
        raise ValueError(f"side must be 'buyer' or 'seller', got {side!r}")
    if not np.isfinite(loss):
        raise TrainingError(f"non-finite {side} loss {loss}")
    if opt is None:
        opt = AdamState.for_params(net.params(), lr=lr)
    params, opt = adam_step(opt, net.params(), grads, maximize=maximize)
    return net.with_params(params), loss, opt


def evaluate_objectives(seller, buyer, data: Dataset, cfg: LossConfig) -> tuple[float, float]:
    terms = batch_terms(seller, buyer, data.x, data.p, data.y, cfg)
    return buyer_loss(terms, cfg), seller_objective(terms, cfg)


def _check_dims(seller: Mlp, buyer: Mlp, *datasets: Dataset):
    for ds in datasets:
        if seller.input_dim != ds.dim or buyer.input_dim != ds.dim + 1:
            raise ConfigurationError(
                f"network input dims ({seller.input_dim}, {buyer.input_dim}) "
                f"incompatible with context dimension {ds.dim}"
            )


def init_networks(dim: int, cfg: TrainConfig) -> tuple[Mlp, Mlp]:
    return mlp_init(dim, cfg.hidden, cfg.seed), mlp_init(dim + 1, cfg.hidden, cfg.seed + 1)


def train_negonets(train: Dataset, val: Dataset, cfg: TrainConfig, seller: Mlp | None = None,
                   buyer: Mlp | None = None) -> tuple[Mlp, Mlp, TrainHistory]:
    """Train seller and buyer jointly; early-stops on validation buyer loss.

    Returns the networks from the best validation epoch.
    """
    if len(train) == 0 or len(val) == 0:
        raise ConfigurationError("train and validation sets must be nonempty")
    if train.dim != val.dim:
        raise ConfigurationError("train/val context dimensions differ")
    if cfg.batch_size > len(train):
        raise ConfigurationError(f"batch_size {cfg.batch_size} exceeds training set size {len(train)}")
    if seller is None or buyer is None:
        seller, buyer = init_networks(train.dim, cfg)
    _check_dims(seller, buyer, train, val)

    rng = np.random.default_rng(cfg.seed)
    buyer_opt = AdamState.for_params(buyer.params(), lr=cfg.buyer_lr)
    seller_opt = AdamState.for_params(seller.params(), lr=cfg.seller_lr)
    stopper = EarlyStopState(patience=cfg.patience)
    history = TrainHistory()
    start = time.perf_counter()
    y_all = train.y.astype(np.float64)

    for epoch in range(cfg.epochs):
        order = rng.permutation(len(train))
        for b, lo in enumerate(range(0, len(order), cfg.batch_size)):
            idx = order[lo:lo + cfg.batch_size]
            batch = (train.x[idx], train.p[idx], y_all[idx])
            try:
                for _ in range(cfg.buyer_steps):
                    buyer, _, buyer_opt = train_step(seller, buyer, batch, cfg, "buyer", buyer_opt)
                for _ in range(cfg.seller_steps):
                    seller, _, seller_opt = train_step(seller, buyer, batch, cfg, "seller", seller_opt)
            except TrainingError as exc:
                raise TrainingError(f"epoch {epoch}, batch {b}: {exc}") from exc

        tr_b, tr_s = evaluate_objectives(seller, buyer, train, cfg.loss)
        va_b, va_s = evaluate_objectives(seller, buyer, val, cfg.loss)
        if not all(np.isfinite([tr_b, tr_s, va_b, va_s])):
            raise TrainingError(f"epoch {epoch}: non-finite loss")
        price_std = float(np.std(suggest_prices(seller, train.x)))
        history.records.append(EpochRecord(
            epoch, tr_b, tr_s, va_b, va_s, price_std, time.perf_counter() - start
        ))
        stopper, stop = early_stop_update(stopper, va_b, (seller, buyer))
        if stopper.since_improvement == 0:
            history.best_epoch = epoch
        if stop:
            history.stopped_early = True
            break

    seller, buyer = stopper.best_params
    if history.collapsed:
        log.warning("suggested prices collapsed (std < %g) at epoch %d", COLLAPSE_STD, history.best_epoch)
    return seller, buyer, history
