"""Trainable components: factor prediction model, logistic-regression
propensity model, factor-shaped imputation model, and analytic-gradient SGD.

Gradients are hand-derived (chain rule through the surrogate loss and the
sigmoid) and checked against central finite differences in the test suite.
Plain SGD is the default optimizer because its update is trivially
verifiable; Adam is offered as a config variant.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .data import (
    DEFAULT_PROPENSITY_FLOOR,
    EPS_OUT,
    ErrorParams,
    PropensityMatrix,
    RatingDataset,
    ValidationError,
    make_rng,
)
from .losses import LossKind, loss_curve_grads, surrogate_curves


class TrainingDivergence(RuntimeError):
    """Loss became non-finite during training."""


@dataclass
class SgdConfig:
    learning_rate: float = 0.05
    batch_size: int = 4096
    weight_decay: float = 1e-5
    max_epochs: int = 50
    patience: int = 5
    seed: int = 0
    optimizer: str = "sgd"  # "sgd" or "adam"

    def __post_init__(self):
        if self.learning_rate < 0 or self.weight_decay < 0:
            raise ValidationError("learning rate / weight decay must be >= 0")
        if self.batch_size < 0 or self.max_epochs < 0:
            raise ValidationError("batch size / epochs must be >= 0")
        if self.optimizer not in ("sgd", "adam"):
            raise ValidationError(f"unknown optimizer {self.optimizer!r}")


def sigmoid(x):
    return 1.0 / (1.0 + np.exp(-np.asarray(x, dtype=np.float64)))


# ---------------------------------------------------------------------------
# Models
# ---------------------------------------------------------------------------

@dataclass
class FactorModel:
    """Embedding-dot-product model with user/item/global biases and a
    sigmoid output clipped into (EPS_OUT, 1 - EPS_OUT)."""

    user_emb: np.ndarray
    item_emb: np.ndarray
    user_bias: np.ndarray
    item_bias: np.ndarray
    global_bias: float = 0.0
    linear_output: bool = False

    @classmethod
    def init(cls, n_users, n_items, d, rng, init_scale=0.01,
             linear_output=False):
        if d < 1:
            raise ValidationError("embedding dimension must be >= 1")
        return cls(
            user_emb=rng.normal(0.0, init_scale, size=(n_users, d)),
            item_emb=rng.normal(0.0, init_scale, size=(n_items, d)),
            user_bias=np.zeros(n_users),
            item_bias=np.zeros(n_items),
            global_bias=0.0,
            linear_output=linear_output,
        )

    def copy(self):
        return FactorModel(
            self.user_emb.copy(), self.item_emb.copy(),
            self.user_bias.copy(), self.item_bias.copy(),
            self.global_bias, self.linear_output,
        )

    def scores(self, u_idx, i_idx):
        return _kernels.factor_scores(
            u_idx, i_idx, self.user_emb, self.item_emb,
            self.user_bias, self.item_bias, self.global_bias,
        )

    def forward(self, u_idx, i_idx):
        s = self.scores(u_idx, i_idx)
        if self.linear_output:
            return s
        return np.clip(sigmoid(s), EPS_OUT, 1.0 - EPS_OUT)

    def predict_all(self):
        s = (self.user_emb @ self.item_emb.T
             + self.user_bias[:, None] + self.item_bias[None, :]
             + self.global_bias)
        if self.linear_output:
            return s
        return np.clip(sigmoid(s), EPS_OUT, 1.0 - EPS_OUT)

    def params(self):
        return {
            "user_emb": self.user_emb, "item_emb": self.item_emb,
            "user_bias": self.user_bias, "item_bias": self.item_bias,
        }


def new_imputation_model(n_users, n_items, d, rng, init_scale=0.01):
    """Factor model with a linear (unsquashed) output producing real-valued
    imputed errors."""
    return FactorModel.init(n_users, n_items, d, rng, init_scale,
                            linear_output=True)


@dataclass
class PropensityModel:
    """One-hot logistic regression: sigma(w_u + w_i + beta_u + gamma_i).

    The per-user weight and per-user intercept carry identical gradients;
    both are kept to mirror the weight-vector-plus-intercepts parameterization.
    """

    w_user: np.ndarray
    w_item: np.ndarray
    beta_user: np.ndarray
    gamma_item: np.ndarray

    @classmethod
    def init(cls, n_users, n_items):
        return cls(np.zeros(n_users), np.zeros(n_items),
                   np.zeros(n_users), np.zeros(n_items))

    def copy(self):
        return PropensityModel(self.w_user.copy(), self.w_item.copy(),
                               self.beta_user.copy(), self.gamma_item.copy())

    def scores(self, u_idx, i_idx):
        return (self.w_user[u_idx] + self.beta_user[u_idx]
                + self.w_item[i_idx] + self.gamma_item[i_idx])

    def predict_all(self):
        s = ((self.w_user + self.beta_user)[:, None]
             + (self.w_item + self.gamma_item)[None, :])
        return sigmoid(s)

    def params(self):
        return {
            "w_user": self.w_user, "w_item": self.w_item,
            "beta_user": self.beta_user, "gamma_item": self.gamma_item,
        }

    def export(self, floor=DEFAULT_PROPENSITY_FLOOR) -> PropensityMatrix:
        return PropensityMatrix(
            np.clip(self.predict_all(), floor, 1.0 - 1e-6), floor)


def predict_all(model):
    """Dense per-pair outputs of any model."""
    return model.predict_all()


# ---------------------------------------------------------------------------
# Optimizers
# ---------------------------------------------------------------------------

class Optimizer:
    """SGD or Adam over a named-parameter dict; scalars handled separately."""

    def __init__(self, config: SgdConfig):
        self.config = config
        self._m = {}
        self._v = {}
        self._t = 0
        self.beta1, self.beta2, self.eps = 0.9, 0.999, 1e-8

    def step(self, params: dict, grads: dict, scalar_grads: dict | None = None):
        lr = self.config.learning_rate
        if self.config.optimizer == "sgd":
            for name, g in grads.items():
                params[name] -= lr * g
            return {k: -lr * g for k, g in (scalar_grads or {}).items()}
        self._t += 1
        t = self._t
        updates = {}
        for name, g in list(grads.items()) + list((scalar_grads or {}).items()):
            m = self._m.get(name)
            if m is None:
                m = self._m[name] = np.zeros_like(np.asarray(g, dtype=np.float64))
                self._v[name] = np.zeros_like(np.asarray(g, dtype=np.float64))
            v = self._v[name]
            m[...] = self.beta1 * m + (1 - self.beta1) * g
            v[...] = self.beta2 * v + (1 - self.beta2) * np.square(g)
            m_hat = m / (1 - self.beta1**t)
            v_hat = v / (1 - self.beta2**t)
            delta = -lr * m_hat / (np.sqrt(v_hat) + self.eps)
            if name in params:
                params[name] += delta
            else:
                updates[name] = float(delta)
        return updates


def _apply_factor_step(model: FactorModel, grads, g_b0, config, opt: Optimizer):
    """One optimizer step; L2 decay applies to embeddings only, not biases."""
    wd = config.weight_decay
    if wd > 0.0:
        grads["user_emb"] = grads["user_emb"] + wd * model.user_emb
        grads["item_emb"] = grads["item_emb"] + wd * model.item_emb
    scalar = opt.step(model.params(), grads, {"global_bias": g_b0})
    model.global_bias += scalar.get("global_bias", 0.0)
    if not np.isfinite(model.global_bias):
        raise TrainingDivergence("non-finite global bias after update")


# ---------------------------------------------------------------------------
# Objectives and analytic gradients
# ---------------------------------------------------------------------------

def _surrogate_coefs(pred, r, loss: LossKind, rho: ErrorParams):
    """Per-example surrogate loss and d(surrogate)/d(pred) at the observed
    label r."""
    s1, s0 = surrogate_curves(loss, pred, rho)
    g1, g0 = loss_curve_grads(loss, pred)
    denom = rho.denom
    ds1 = ((1.0 - rho.rho10) * g1 - rho.rho01 * g0) / denom
    ds0 = ((1.0 - rho.rho01) * g0 - rho.rho10 * g1) / denom
    val = np.where(r == 1, s1, s0)
    grad = np.where(r == 1, ds1, ds0)
    return val, grad


def surrogate_objective(model: FactorModel, u_idx, i_idx, o, r, p_hat, e_bar,
                        rho: ErrorParams, loss: LossKind,
                        weight_decay: float = 0.0) -> float:
    """Mini-batch corrected-DR objective: mean over the batch of
    (1 - o/p) e_bar + (o/p) l~(f, r), plus L2 on the embeddings."""
    f = model.forward(u_idx, i_idx)
    val, _ = _surrogate_coefs(f, r, loss, rho)
    w = o / p_hat
    obj = float(np.mean((1.0 - w) * e_bar + w * val))
    if weight_decay > 0.0:
        obj += 0.5 * weight_decay * (
            float(np.sum(model.user_emb**2)) + float(np.sum(model.item_emb**2)))
    return obj


def surrogate_grad_coefs(model: FactorModel, u_idx, i_idx, o, r, p_hat,
                         rho: ErrorParams, loss: LossKind):
    """d(objective)/d(score) per batch example (imputed term carries no
    prediction-model gradient)."""
    s = model.scores(u_idx, i_idx)
    f = np.clip(sigmoid(s), EPS_OUT, 1.0 - EPS_OUT)
    _, dval = _surrogate_coefs(f, r, loss, rho)
    return (o / p_hat) * dval * f * (1.0 - f) / u_idx.shape[0]


def sgd_step_surrogate(model: FactorModel, u_idx, i_idx, o, r, p_hat, e_bar,
                       rho: ErrorParams, loss: LossKind, config: SgdConfig,
                       opt: Optimizer) -> FactorModel:
    """One gradient step on the mini-batch corrected-DR objective."""
    coef = surrogate_grad_coefs(model, u_idx, i_idx, o, r, p_hat, rho, loss)
    if not np.all(np.isfinite(coef)):
        raise TrainingDivergence("non-finite gradient in prediction step")
    g_ue, g_ie, g_ub, g_ib, g_b0 = _kernels.factor_backward(
        u_idx, i_idx, model.user_emb, model.item_emb, coef)
    grads = {"user_emb": g_ue, "item_emb": g_ie,
             "user_bias": g_ub, "item_bias": g_ib}
    _apply_factor_step(model, grads, g_b0, config, opt)
    return model


def imputation_objective(model: FactorModel, u_idx, i_idx, o, r, p_hat,
                         pred, rho: ErrorParams, loss: LossKind,
                         weight_decay: float = 0.0) -> float:
    """Mini-batch imputation loss: mean of o (e~ - e_bar)^2 / p over an
    observed-set batch; e~ is the surrogate loss of the (frozen) predictions."""
    target, _ = _surrogate_coefs(pred, r, loss, rho)
    e_bar = model.scores(u_idx, i_idx)
    obj = float(np.mean(o * (target - e_bar) ** 2 / p_hat))
    if weight_decay > 0.0:
        obj += 0.5 * weight_decay * (
            float(np.sum(model.user_emb**2)) + float(np.sum(model.item_emb**2)))
    return obj


def sgd_step_imputation(model: FactorModel, u_idx, i_idx, o, r, p_hat, pred,
                        rho: ErrorParams, loss: LossKind, config: SgdConfig,
                        opt: Optimizer) -> FactorModel:
    """One gradient step on the imputation loss; predictions stay fixed."""
    target, _ = _surrogate_coefs(pred, r, loss, rho)
    e_bar = model.scores(u_idx, i_idx)
    coef = -2.0 * o * (target - e_bar) / p_hat / u_idx.shape[0]
    if not np.all(np.isfinite(coef)):
        raise TrainingDivergence("non-finite gradient in imputation step")
    g_ue, g_ie, g_ub, g_ib, g_b0 = _kernels.factor_backward(
        u_idx, i_idx, model.user_emb, model.item_emb, coef)
    grads = {"user_emb": g_ue, "item_emb": g_ie,
             "user_bias": g_ub, "item_bias": g_ib}
    _apply_factor_step(model, grads, g_b0, config, opt)
    return model


def propensity_objective(model: PropensityModel, observed_mask) -> float:
    """Full-universe binary cross-entropy on the observation indicators."""
    p = np.clip(model.predict_all(), 1e-12, 1.0 - 1e-12)
    o = np.asarray(observed_mask, dtype=np.float64)
    return float(-np.mean(o * np.log(p) + (1.0 - o) * np.log(1.0 - p)))


def train_propensity(dataset: RatingDataset, config: SgdConfig) -> PropensityModel:
    """Fit the logistic propensity model by (mini-batch or full-batch) SGD.

    batch_size = 0 or >= the universe size selects full-batch mode, in which
    the loss is non-increasing per epoch for moderate learning rates.
    """
    n, m = dataset.shape
    model = PropensityModel.init(n, m)
    o_full = np.asarray(dataset.observed_mask, dtype=np.float64)
    n_pairs = n * m
    full_batch = config.batch_size == 0 or config.batch_size >= n_pairs
    rng = make_rng(config.seed)
    opt = Optimizer(config)
    u_grid, i_grid = np.divmod(np.arange(n_pairs), m)
    for epoch in range(config.max_epochs):
        if full_batch:
            p = model.predict_all()
            coef = (p - o_full) / n_pairs
            g_u = coef.sum(axis=1)
            g_i = coef.sum(axis=0)
            opt.step(model.params(),
                     {"w_user": g_u, "beta_user": g_u,
                      "w_item": g_i, "gamma_item": g_i})
        else:
            order = rng.permutation(n_pairs)
            for start in range(0, n_pairs, config.batch_size):
                idx = order[start:start + config.batch_size]
                u, i = u_grid[idx], i_grid[idx]
                p = sigmoid(model.scores(u, i))
                coef = (p - o_full[u, i]) / idx.shape[0]
                g_u = np.zeros(n)
                g_i = np.zeros(m)
                np.add.at(g_u, u, coef)
                np.add.at(g_i, i, coef)
                opt.step(model.params(),
                         {"w_user": g_u, "beta_user": g_u,
                          "w_item": g_i, "gamma_item": g_i})
        loss_val = propensity_objective(model, o_full)
        if not np.isfinite(loss_val):
            raise TrainingDivergence(
                f"propensity training diverged at epoch {epoch}")
    return model


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------

CHECKPOINT_VERSION = 1


def save_model(path, model) -> None:
    """Versioned flat dump of all parameter arrays."""
    if isinstance(model, FactorModel):
        np.savez(path, kind="factor", version=CHECKPOINT_VERSION,
                 linear_output=int(model.linear_output),
                 global_bias=model.global_bias, **model.params())
    elif isinstance(model, PropensityModel):
        np.savez(path, kind="propensity", version=CHECKPOINT_VERSION,
                 **model.params())
    else:
        raise ValidationError(f"cannot checkpoint {type(model).__name__}")


def load_model(path):
    with np.load(path) as data:
        if int(data["version"]) != CHECKPOINT_VERSION:
            raise ValidationError("unsupported checkpoint version")
        kind = str(data["kind"])
        if kind == "factor":
            return FactorModel(
                data["user_emb"], data["item_emb"],
                data["user_bias"], data["item_bias"],
                float(data["global_bias"]), bool(int(data["linear_output"])))
        if kind == "propensity":
            return PropensityModel(data["w_user"], data["w_item"],
                                   data["beta_user"], data["gamma_item"])
    raise ValidationError(f"unknown checkpoint kind {kind!r}")
