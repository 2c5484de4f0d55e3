"""Loss terms of the seller/buyer game.

All functions are vectorised over numpy arrays and also accept scalars.
The batch expectation is a plain mean.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .neural import ConfigurationError, Mlp, forward

CE_EPS = 1e-7


@dataclass(frozen=True)
class LossConfig:
    c1: float = 0.5
    c2: float = 2.0
    lam: float = 1.0
    fd_delta: float = 1e-3
    classification_threshold: float = 0.5
    # literal reading of the shared adversarial term: the seller also ascends
    # the point-wise penalty. Off by default.
    pointwise_in_seller: bool = False

    def __post_init__(self):
        if not 0.0 < self.c1 < 1.0 < self.c2:
            raise ConfigurationError(f"need 0 < c1 < 1 < c2, got c1={self.c1}, c2={self.c2}")
        if self.lam < 0:
            raise ConfigurationError(f"lam must be non-negative, got {self.lam}")
        if not 0.0 < self.fd_delta <= 0.1:
            raise ConfigurationError(f"fd_delta must lie in (0, 0.1], got {self.fd_delta}")
        if not 0.0 < self.classification_threshold < 1.0:
            raise ConfigurationError("classification_threshold must lie in (0, 1)")


@dataclass
class BatchTerms:
    """Per-interaction quantities entering the game objective."""

    fs: np.ndarray  # seller suggestion f_s(x)
    fb_at_fs: np.ndarray  # buyer at the suggested price
    fb_at_p: np.ndarray  # buyer at the offered price
    d: np.ndarray  # finite-difference price sensitivity at f_s(x)
    p: np.ndarray
    y: np.ndarray

    def __len__(self):
        return len(np.atleast_1d(self.p))


def lower_bound(p, y, c1):
    return y * p + (1 - y) * c1 * p


def upper_bound(p, y, c2):
    return (1 - y) * p + y * c2 * p


def boundary_penalty(fs, p, y, cfg: LossConfig):
    """Hinge penalty, zero inside ``[L(p, y), U(p, y)]``, slope 1 outside."""
    lo = lower_bound(p, y, cfg.c1)
    hi = upper_bound(p, y, cfg.c2)
    return np.maximum(lo - fs, 0.0) + np.maximum(fs - hi, 0.0)


def boundary_penalty_grad(fs, p, y, cfg: LossConfig):
    lo = lower_bound(p, y, cfg.c1)
    hi = upper_bound(p, y, cfg.c2)
    return np.where(fs < lo, -1.0, 0.0) + np.where(fs > hi, 1.0, 0.0)


def cross_entropy(y, q):
    q = np.clip(q, CE_EPS, 1.0 - CE_EPS)
    return -(y * np.log(q) + (1 - y) * np.log1p(-q))


def cross_entropy_grad(y, q):
    """d cross_entropy / d q; zero where the clamp is active."""
    inside = (q > CE_EPS) & (q < 1.0 - CE_EPS)
    qc = np.clip(q, CE_EPS, 1.0 - CE_EPS)
    return np.where(inside, -y / qc + (1 - y) / (1.0 - qc), 0.0)


def revenue_term(fs, fb_at_fs, p, y):
    return fs * fb_at_fs - p * y


def pointwise_penalty(d):
    return np.maximum(d, 0.0)


def sensitivity_points(s, fd_delta):
    """Clipped evaluation points ``(s_hi, s_lo, width)`` for the price difference."""
    s = np.asarray(s, dtype=np.float64)
    s_hi = np.minimum(s + fd_delta, 1.0)
    s_lo = np.maximum(s - fd_delta, 0.0)
    return s_hi, s_lo, s_hi - s_lo


def sensitivity_estimate(buyer: Mlp, x, s, fd_delta):
    """Symmetric finite-difference estimate of d f_b(x, s) / d s.

    ``x`` is one context or a batch of them; ``s`` the matching price(s).
    Steps are clipped to keep the evaluated prices inside [0, 1].
    """
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    s = np.broadcast_to(np.asarray(s, dtype=np.float64), (x.shape[0],))
    s_hi, s_lo, width = sensitivity_points(s, fd_delta)
    up, _ = forward(buyer, np.column_stack([x, s_hi]))
    down, _ = forward(buyer, np.column_stack([x, s_lo]))
    d = (up - down) / width
    return d if d.size > 1 else float(d[0])


def _check_nonempty(batch: BatchTerms):
    if len(batch) == 0:
        raise ValueError("loss of an empty batch is undefined")


def buyer_loss(batch: BatchTerms, cfg: LossConfig) -> float:
    """Mean buyer-side objective; the buyer minimises it."""
    _check_nonempty(batch)
    per = (
        revenue_term(batch.fs, batch.fb_at_fs, batch.p, batch.y)
        + pointwise_penalty(batch.d)
        + cfg.lam * cross_entropy(batch.y, batch.fb_at_p)
    )
    return float(np.mean(per))


def seller_objective(batch: BatchTerms, cfg: LossConfig) -> float:
    """Mean seller-side objective; the seller maximises it."""
    _check_nonempty(batch)
    per = revenue_term(batch.fs, batch.fb_at_fs, batch.p, batch.y) - cfg.lam * boundary_penalty(
        batch.fs, batch.p, batch.y, cfg
    )
    if cfg.pointwise_in_seller:
        per = per + pointwise_penalty(batch.d)
    return float(np.mean(per))
