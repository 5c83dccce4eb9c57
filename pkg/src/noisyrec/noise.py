"""Identification of the flip rates from extremes of the noisy positive rate.

The observed positive rate is an affine function of the true one,
q = (1 - rho01 - rho10) * gamma + rho10, so its argmin/argmax coincide with
those of gamma. When the true rate attains 0 and 1 somewhere in the pair
universe, the extremes of q identify the flip rates directly:
rho01 = 1 - max(q), rho10 = min(q).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .data import EPS_RHO, ErrorParams, PredictionMatrix, ValidationError


class NoSeparationWarning(UserWarning):
    """The noisy-rate estimate shows no spread between its extremes."""


@dataclass(frozen=True)
class NoisyRateModel:
    """Per-pair estimates of P(r=1 | x) over the full universe."""

    q: np.ndarray

    def __post_init__(self):
        q = np.asarray(self.q, dtype=np.float64)
        object.__setattr__(self, "q", q)
        if q.ndim != 2:
            raise ValidationError("noisy-rate matrix must be 2-D")
        if np.any(q <= 0.0) or np.any(q >= 1.0):
            raise ValidationError("noisy-rate entries must lie in (0, 1)")


def find_extreme_pairs(
    predictions: PredictionMatrix,
) -> tuple[tuple[int, int], tuple[int, int]]:
    """Row-major-first argmin and argmax of the prediction matrix."""
    r = predictions.r_hat
    lo = np.unravel_index(int(np.argmin(r)), r.shape)
    hi = np.unravel_index(int(np.argmax(r)), r.shape)
    return (int(lo[0]), int(lo[1])), (int(hi[0]), int(hi[1]))


def clamp_error_params(rho01: float, rho10: float) -> tuple[ErrorParams, bool]:
    """Project an estimated pair into the valid region.

    Rates are floored at 0 and, if the sum reaches 1 - EPS_RHO, both are
    scaled down proportionally. Returns (params, clamped flag). Estimated
    noisy rates can violate weak separability numerically, and downstream
    training must proceed, hence clamp rather than error.
    """
    r01 = max(0.0, float(rho01))
    r10 = max(0.0, float(rho10))
    clamped = (r01 != rho01) or (r10 != rho10)
    total = r01 + r10
    if total >= 1.0 - EPS_RHO:
        scale = (1.0 - 2.0 * EPS_RHO) / total
        r01 *= scale
        r10 *= scale
        clamped = True
    return ErrorParams(r01, r10), clamped


def identify_error_params(q: NoisyRateModel, k_extreme: int = 1) -> ErrorParams:
    """Estimate the flip rates from the k most extreme noisy-rate entries.

    rho01 = 1 - mean of the k largest entries, rho10 = mean of the k
    smallest; ties resolve to the smallest row-major index (immaterial for
    the means). k = 1 mirrors the single argmin/argmax identification;
    larger k (e.g. 0.1% of the universe) is recommended when q is itself
    estimated, since single-entry extremes are high-variance.
    """
    flat = q.q.ravel()
    n = flat.size
    if not (1 <= k_extreme <= n // 2):
        raise ValidationError("k_extreme must be in [1, n_pairs/2]")
    srt = np.sort(flat)
    rho10 = float(np.mean(srt[:k_extreme]))
    rho01 = 1.0 - float(np.mean(srt[-k_extreme:]))
    if srt[-1] - srt[0] < 1e-12:
        warnings.warn(
            "noisy-rate matrix has no separation between extremes; "
            "identified error rates are unreliable",
            NoSeparationWarning,
        )
    params, _ = clamp_error_params(rho01, rho10)
    return params
