"""Pointwise losses and the noise-corrected surrogate loss.

The surrogate loss is the unique linear combination of l(f, 1) and l(f, 0)
whose expectation under the class-conditional flip model recovers the clean
loss. It may be negative; clamping it would destroy that identity, so we
never do.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .data import ErrorParams, ValidationError


class LossVariant(Enum):
    SQUARED_ERROR = "squared"
    CROSS_ENTROPY = "xent"


@dataclass(frozen=True)
class LossKind:
    variant: LossVariant = LossVariant.SQUARED_ERROR
    eps_clip: float = 1e-6  # cross-entropy log clipping, keeps the loss bounded

    def __post_init__(self):
        if self.variant is LossVariant.CROSS_ENTROPY:
            if not (0.0 < self.eps_clip <= 0.1):
                raise ValidationError("eps_clip must be in (0, 0.1]")

    @classmethod
    def squared(cls) -> "LossKind":
        return cls(LossVariant.SQUARED_ERROR)

    @classmethod
    def cross_entropy(cls, eps_clip: float = 1e-6) -> "LossKind":
        return cls(LossVariant.CROSS_ENTROPY, eps_clip)


def loss_curves(kind: LossKind, pred: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Elementwise (l(pred, 1), l(pred, 0)) for predictions in (0, 1)."""
    pred = np.asarray(pred, dtype=np.float64)
    if np.any(pred <= 0.0) or np.any(pred >= 1.0):
        raise ValidationError("predictions must lie strictly inside (0, 1)")
    if kind.variant is LossVariant.SQUARED_ERROR:
        return (pred - 1.0) ** 2, pred**2
    eps = kind.eps_clip
    return -np.log(np.maximum(pred, eps)), -np.log(np.maximum(1.0 - pred, eps))


def loss_curve_grads(kind: LossKind, pred: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Elementwise (dl(pred,1)/dpred, dl(pred,0)/dpred)."""
    pred = np.asarray(pred, dtype=np.float64)
    if kind.variant is LossVariant.SQUARED_ERROR:
        return 2.0 * (pred - 1.0), 2.0 * pred
    eps = kind.eps_clip
    g1 = np.where(pred > eps, -1.0 / np.maximum(pred, eps), 0.0)
    g0 = np.where(1.0 - pred > eps, 1.0 / np.maximum(1.0 - pred, eps), 0.0)
    return g1, g0


def point_loss(kind: LossKind, pred: float, label: int) -> float:
    """l(pred, label) for a single prediction."""
    l1, l0 = loss_curves(kind, np.float64(pred))
    return float(l1 if label == 1 else l0)


def surrogate_curves(
    kind: LossKind, pred: np.ndarray, rho: ErrorParams
) -> tuple[np.ndarray, np.ndarray]:
    """Elementwise noise-corrected losses (l~(pred, 1), l~(pred, 0)).

    Solves the 2x2 linear system tying the expected surrogate under flips
    to the clean loss:

        l~(f, 1) = [(1 - rho10) l(f, 1) - rho01 l(f, 0)] / (1 - rho01 - rho10)
        l~(f, 0) = [(1 - rho01) l(f, 0) - rho10 l(f, 1)] / (1 - rho01 - rho10)
    """
    l1, l0 = loss_curves(kind, pred)
    denom = rho.denom
    s1 = ((1.0 - rho.rho10) * l1 - rho.rho01 * l0) / denom
    s0 = ((1.0 - rho.rho01) * l0 - rho.rho10 * l1) / denom
    return s1, s0


def surrogate_loss(kind: LossKind, pred: float, observed_label: int,
                   rho: ErrorParams) -> float:
    """Noise-corrected loss for one prediction and one observed label."""
    s1, s0 = surrogate_curves(kind, np.float64(pred), rho)
    return float(s1 if observed_label == 1 else s0)
