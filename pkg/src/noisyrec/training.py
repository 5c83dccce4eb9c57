"""Alternating denoise training: interleaved prediction-model steps on the
corrected doubly-robust objective, extreme-pair refresh, flip-rate
re-estimation from a pretrained noisy-rate model, and imputation-model steps.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .data import (
    ErrorParams,
    PropensityMatrix,
    RatingDataset,
    ValidationError,
    make_rng,
)
from .losses import LossKind, loss_curves
from .models import (
    FactorModel,
    Optimizer,
    SgdConfig,
    TrainingDivergence,
    new_imputation_model,
    sgd_step_imputation,
    sgd_step_surrogate,
    sigmoid,
    surrogate_objective,
)
from .noise import NoisyRateModel, clamp_error_params
from . import _kernels

PRETRAIN_METHODS = ("naive", "ips", "dr")
TRAIN_METHODS = PRETRAIN_METHODS + ("eib",)


@dataclass
class AltTrainConfig:
    rho_init: ErrorParams
    steps_prediction: int = 10
    steps_imputation: int = 10
    outer_loops: int = 30
    k_extreme: int = 1
    embedding_dim: int = 8
    pretrain_method: str = "ips"
    refresh_noisy_model: bool = False  # h stays frozen by default
    loss: LossKind = field(default_factory=LossKind.squared)
    sgd_prediction: SgdConfig = field(default_factory=SgdConfig)
    sgd_imputation: SgdConfig = field(default_factory=SgdConfig)
    sgd_propensity: SgdConfig = field(
        default_factory=lambda: SgdConfig(learning_rate=0.5, batch_size=0,
                                          weight_decay=0.0, max_epochs=100))
    sgd_pretrain: SgdConfig = field(default_factory=SgdConfig)

    def __post_init__(self):
        if min(self.steps_prediction, self.steps_imputation,
               self.k_extreme) < 1:
            raise ValidationError("step counts and k_extreme must be >= 1")
        if self.outer_loops < 0:
            raise ValidationError("outer_loops must be >= 0")
        if self.pretrain_method not in PRETRAIN_METHODS:
            raise ValidationError(
                f"pretrain_method must be one of {PRETRAIN_METHODS}")


@dataclass
class TraceRecord:
    loop: int
    rho01_hat: float
    rho10_hat: float
    objective: float
    val_metric: float
    rho_clamped: bool = False


@dataclass
class TrainTrace:
    records: list = field(default_factory=list)

    def append(self, rec: TraceRecord):
        self.records.append(rec)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(
                ["loop", "rho01_hat", "rho10_hat", "objective", "val_metric"])
            for r in self.records:
                writer.writerow([r.loop, f"{r.rho01_hat:.10g}",
                                 f"{r.rho10_hat:.10g}",
                                 f"{r.objective:.10g}",
                                 f"{r.val_metric:.10g}"])


# ---------------------------------------------------------------------------
# Pretraining the noisy-rate model
# ---------------------------------------------------------------------------

def _xent_grads(pred, target):
    """Value and d/dpred of -t log f - (1-t) log(1-f) with soft targets."""
    f = np.clip(pred, 1e-9, 1.0 - 1e-9)
    val = -target * np.log(f) - (1.0 - target) * np.log(1.0 - f)
    grad = -target / f + (1.0 - target) / (1.0 - f)
    return val, grad


def train_noisy_factor_model(dataset: RatingDataset, method: str,
                             config: SgdConfig, d: int = 8,
                             p_hat: np.ndarray | None = None) -> FactorModel:
    """Fit a factor model to the observed noisy ratings with cross-entropy,
    debiased by the chosen method but with no noise correction.

    naive: mean over the observed set. ips: observed losses reweighted by
    1/p_hat. eib: observed losses plus constant-target imputation (against
    the observed positive rate) on the unobserved cells. dr: the imputation
    combined with the propensity-weighted residual.
    """
    if method not in TRAIN_METHODS:
        raise ValidationError(f"unknown training method {method!r}")
    if method in ("ips", "dr") and p_hat is None:
        raise ValidationError(f"method {method!r} needs propensities")
    n, m = dataset.shape
    rng = make_rng(config.seed)
    model = FactorModel.init(n, m, d, rng)
    opt = Optimizer(config)
    o = dataset.observed_mask
    r = dataset.observed_ratings.astype(np.float64)
    n_obs = int(o.sum())
    if n_obs == 0:
        raise ValidationError("no observed pairs")
    r_bar = float((o * r).sum() / n_obs)
    n_pairs = n * m
    u_grid, i_grid = np.divmod(np.arange(n_pairs), m)
    o_flat = o.ravel().astype(np.float64)
    r_flat = r.ravel()
    p_flat = None if p_hat is None else np.asarray(p_hat).ravel()
    batch = config.batch_size if config.batch_size > 0 else n_pairs
    for epoch in range(config.max_epochs):
        order = rng.permutation(n_pairs)
        for start in range(0, n_pairs, batch):
            idx = order[start:start + batch]
            u, i = u_grid[idx], i_grid[idx]
            ob, rb = o_flat[idx], r_flat[idx]
            f = model.forward(u, i)
            _, g_obs = _xent_grads(f, rb)
            if method == "naive":
                weight = ob * n_pairs / n_obs
                dldf = weight * g_obs
            elif method == "ips":
                dldf = ob / p_flat[idx] * g_obs
            elif method == "eib":
                _, g_imp = _xent_grads(f, r_bar)
                dldf = ob * g_obs + (1.0 - ob) * g_imp
            else:  # dr with constant-rate imputation target
                _, g_imp = _xent_grads(f, r_bar)
                w = ob / p_flat[idx]
                dldf = g_imp + w * (g_obs - g_imp)
            coef = dldf * f * (1.0 - f) / idx.shape[0]
            if not np.all(np.isfinite(coef)):
                raise TrainingDivergence(
                    f"noisy-rate pretraining diverged at epoch {epoch}")
            g_ue, g_ie, g_ub, g_ib, g_b0 = _kernels.factor_backward(
                u, i, model.user_emb, model.item_emb, coef)
            if config.weight_decay > 0.0:
                g_ue = g_ue + config.weight_decay * model.user_emb
                g_ie = g_ie + config.weight_decay * model.item_emb
            scalar = opt.step(model.params(),
                              {"user_emb": g_ue, "item_emb": g_ie,
                               "user_bias": g_ub, "item_bias": g_ib},
                              {"global_bias": g_b0})
            model.global_bias += scalar.get("global_bias", 0.0)
    return model


def pretrain_noisy_model(dataset: RatingDataset, method: str,
                         config: SgdConfig, d: int = 8,
                         p_hat: np.ndarray | None = None) -> NoisyRateModel:
    """Pretrained estimator of P(r=1 | x) over the full universe."""
    model = train_noisy_factor_model(dataset, method, config, d, p_hat)
    return NoisyRateModel(model.predict_all())


# ---------------------------------------------------------------------------
# Alternating training
# ---------------------------------------------------------------------------

def _refresh_rho(q: np.ndarray, lo_pair, hi_pair, k_extreme,
                 predictions: np.ndarray) -> tuple[ErrorParams, bool]:
    """Re-estimate the flip rates from the noisy-rate model at the current
    extreme pairs of the prediction model. For k > 1 the k most extreme
    prediction cells are used and the noisy-rate values there averaged."""
    if k_extreme == 1:
        rho01 = 1.0 - float(q[hi_pair])
        rho10 = float(q[lo_pair])
    else:
        flat_pred = predictions.ravel()
        order = np.argsort(flat_pred, kind="stable")
        q_flat = q.ravel()
        rho10 = float(np.mean(q_flat[order[:k_extreme]]))
        rho01 = 1.0 - float(np.mean(q_flat[order[-k_extreme:]]))
    return clamp_error_params(rho01, rho10)


def _extreme_pairs_full(predictions: np.ndarray):
    lo = np.unravel_index(int(np.argmin(predictions)), predictions.shape)
    hi = np.unravel_index(int(np.argmax(predictions)), predictions.shape)
    return lo, hi


def alternating_denoise_train(
    dataset: RatingDataset,
    p_hat: np.ndarray,
    noisy_model: NoisyRateModel,
    config: AltTrainConfig,
) -> tuple[FactorModel, FactorModel, TrainTrace]:
    """Run the alternating loop: prediction steps on the corrected-DR
    gradient, extreme-pair refresh over the full universe, flip-rate update
    from the frozen noisy-rate model, then imputation steps on the
    propensity-weighted squared residual against the surrogate loss.

    Extreme pairs are computed over all pairs from the dense predictions once
    per prediction phase (rather than per mini-batch), which is deterministic
    and matches the definition of the identification extremes.
    """
    n, m = dataset.shape
    p_hat = np.asarray(p_hat, dtype=np.float64)
    if p_hat.shape != dataset.shape:
        raise ValidationError("propensity shape mismatch")
    q = noisy_model.q
    if q.shape != dataset.shape:
        raise ValidationError("noisy-rate shape mismatch")

    rng = make_rng(config.sgd_prediction.seed)
    pred_model = FactorModel.init(n, m, config.embedding_dim, rng)
    imp_model = new_imputation_model(n, m, config.embedding_dim, rng)
    pred_opt = Optimizer(config.sgd_prediction)
    imp_opt = Optimizer(config.sgd_imputation)

    o_flat = dataset.observed_mask.ravel().astype(np.float64)
    r_flat = dataset.observed_ratings.ravel().astype(np.float64)
    p_flat = p_hat.ravel()
    n_pairs = n * m
    u_grid, i_grid = np.divmod(np.arange(n_pairs), m)
    obs_idx = np.flatnonzero(o_flat)

    # held-out slice of the observed set for the validation objective
    n_val = max(1, obs_idx.size // 10)
    val_idx = rng.permutation(obs_idx)[:n_val]
    vu, vi = u_grid[val_idx], i_grid[val_idx]

    rho = config.rho_init
    trace = TrainTrace()
    batch_p = min(config.sgd_prediction.batch_size or n_pairs, n_pairs)
    batch_i = min(config.sgd_imputation.batch_size or obs_idx.size,
                  obs_idx.size)

    for loop in range(config.outer_loops):
        # prediction phase
        lo_pair = hi_pair = (0, 0)
        for _ in range(config.steps_prediction):
            idx = rng.choice(n_pairs, size=batch_p, replace=False)
            u, i = u_grid[idx], i_grid[idx]
            e_bar_b = imp_model.scores(u, i)
            sgd_step_surrogate(pred_model, u, i, o_flat[idx], r_flat[idx],
                               p_flat[idx], e_bar_b, rho, config.loss,
                               config.sgd_prediction, pred_opt)
        dense_pred = pred_model.predict_all()
        lo_pair, hi_pair = _extreme_pairs_full(dense_pred)

        # imputation phase: refresh rho first, then step the imputation model
        rho, clamped = _refresh_rho(q, lo_pair, hi_pair, config.k_extreme,
                                    dense_pred)
        for _ in range(config.steps_imputation):
            idx = obs_idx[rng.choice(obs_idx.size, size=batch_i,
                                     replace=False)]
            u, i = u_grid[idx], i_grid[idx]
            pred_b = pred_model.forward(u, i)
            sgd_step_imputation(imp_model, u, i, o_flat[idx], r_flat[idx],
                                p_flat[idx], pred_b, rho, config.loss,
                                config.sgd_imputation, imp_opt)

        val_pred = pred_model.forward(vu, vi)
        val_obj = float(np.mean(
            np.square(val_pred - r_flat[val_idx]) / p_flat[val_idx]))
        obj = surrogate_objective(
            pred_model, vu, vi, o_flat[val_idx], r_flat[val_idx],
            p_flat[val_idx], imp_model.scores(vu, vi), rho, config.loss)
        trace.append(TraceRecord(loop, rho.rho01, rho.rho10, obj, val_obj,
                                 clamped))

    return pred_model, imp_model, trace
