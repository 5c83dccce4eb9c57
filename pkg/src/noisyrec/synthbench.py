"""Semi-synthetic benchmark generator: quantile-level preference matrix,
six stylized prediction matrices, rating-dependent propensities with
harmonic perturbation, Bernoulli sampling, and label flipping.

Generation is single-threaded per instance with one seeded stream consumed
in a fixed order, so equal (spec, seed) pairs reproduce instances exactly.
"""

from __future__ import annotations

import hashlib
import json
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .data import (
    DEFAULT_PROPENSITY_FLOOR,
    ErrorParams,
    PredictionMatrix,
    RatingDataset,
    ValidationError,
    make_rng,
)
from .models import FactorModel, Optimizer, SgdConfig, TrainingDivergence
from . import _kernels

GAMMA_LEVELS = (0.1, 0.3, 0.5, 0.7, 0.9)
PRED_KINDS = ("ROTATE", "SKEW", "CRS", "ONE", "THREE", "FIVE")


@dataclass(frozen=True)
class BenchmarkSpec:
    n_users: int
    n_items: int
    rho01: float
    rho10: float
    pred_kind: str = "ROTATE"
    gamma_proportions: tuple = (0.2, 0.2, 0.2, 0.2, 0.2)
    p_base: float = 1.0
    alpha: float = 0.5
    beta_mode: str = "per_pair"  # "per_pair", "per_run", or "none"
    gamma_source: str = "quantile"  # "quantile" or "supplied"
    propensity_floor: float = DEFAULT_PROPENSITY_FLOOR
    seed: int = 0

    def __post_init__(self):
        if self.pred_kind not in PRED_KINDS:
            raise ValidationError(f"pred_kind must be one of {PRED_KINDS}")
        props = tuple(float(p) for p in self.gamma_proportions)
        object.__setattr__(self, "gamma_proportions", props)
        if len(props) != 5 or any(p < 0 for p in props):
            raise ValidationError("gamma_proportions needs 5 non-negative values")
        if abs(sum(props) - 1.0) > 1e-9:
            raise ValidationError("gamma_proportions must sum to 1")
        if not (0.0 < self.alpha <= 1.0):
            raise ValidationError("alpha must be in (0, 1]")
        if self.p_base <= 0.0:
            raise ValidationError("p_base must be positive")
        if self.beta_mode not in ("per_pair", "per_run", "none"):
            raise ValidationError("beta_mode must be per_pair/per_run/none")
        if self.gamma_source not in ("quantile", "supplied"):
            raise ValidationError("gamma_source must be quantile or supplied")
        self.rho  # construction validates the pair

    @property
    def rho(self) -> ErrorParams:
        return ErrorParams(self.rho01, self.rho10)

    def manifest(self) -> dict:
        d = asdict(self)
        d["spec_hash"] = hashlib.sha256(
            json.dumps(d, sort_keys=True).encode()).hexdigest()[:16]
        return d


@dataclass
class BenchmarkInstance:
    spec: BenchmarkSpec
    gamma: np.ndarray       # true positive-rate levels
    five_scale: np.ndarray  # level index + 1, drives the observation rule
    prediction: PredictionMatrix
    p_true: np.ndarray
    p_hat: np.ndarray       # perturbed propensities
    observed_mask: np.ndarray
    true_ratings: np.ndarray
    observed_ratings: np.ndarray

    def to_dataset(self) -> RatingDataset:
        return RatingDataset(
            self.spec.n_users, self.spec.n_items,
            self.observed_mask, self.observed_ratings, self.true_ratings)


def build_gamma(proportions, score_matrix) -> tuple[np.ndarray, np.ndarray]:
    """Assign quantile levels by ascending score: the lowest p1 fraction gets
    0.1, the next p2 gets 0.3, and so on; ties break row-major. Returns
    (gamma, five_scale)."""
    scores = np.asarray(score_matrix, dtype=np.float64)
    flat = scores.ravel()
    n = flat.size
    order = np.argsort(flat, kind="stable")
    bounds = np.round(np.cumsum(proportions) * n).astype(int)
    level_idx = np.empty(n, dtype=np.int64)
    start = 0
    for lvl, stop in enumerate(bounds):
        level_idx[order[start:stop]] = lvl
        start = stop
    level_idx[order[start:]] = len(GAMMA_LEVELS) - 1
    gamma = np.asarray(GAMMA_LEVELS)[level_idx].reshape(scores.shape)
    five_scale = (level_idx + 1).reshape(scores.shape)
    return gamma, five_scale


def complete_ratings_mf(triples, n_users, n_items, d, config: SgdConfig
                        ) -> np.ndarray:
    """Regression matrix factorization (linear output, squared loss on the
    observed triples) producing a dense score matrix for quantile assignment.

    triples: array-like of (user, item, rating) rows, ratings real-valued.
    """
    triples = np.asarray(triples)
    u_all = triples[:, 0].astype(np.int64)
    i_all = triples[:, 1].astype(np.int64)
    y_all = triples[:, 2].astype(np.float64)
    rng = make_rng(config.seed)
    model = FactorModel.init(n_users, n_items, d, rng, linear_output=True)
    opt = Optimizer(config)
    n_obs = u_all.shape[0]
    batch = config.batch_size if config.batch_size > 0 else n_obs
    for epoch in range(config.max_epochs):
        order = rng.permutation(n_obs)
        for start in range(0, n_obs, batch):
            idx = order[start:start + batch]
            u, i = u_all[idx], i_all[idx]
            pred = model.scores(u, i)
            coef = 2.0 * (pred - y_all[idx]) / idx.shape[0]
            if not np.all(np.isfinite(coef)):
                raise TrainingDivergence(
                    f"rating completion diverged at epoch {epoch}")
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
    return model.predict_all()


def build_prediction_matrix(kind, gamma, rng) -> PredictionMatrix:
    """The six stylized prediction matrices used by the benchmark."""
    gamma = np.asarray(gamma, dtype=np.float64)
    if kind == "ROTATE":
        r_hat = np.where(gamma >= 0.3, gamma - 0.2, 0.9)
    elif kind == "SKEW":
        draws = rng.normal(gamma, (1.0 - gamma) / 2.0)
        r_hat = np.clip(draws, 0.1, 0.9)
    elif kind == "CRS":
        r_hat = np.where(gamma <= 0.6, 0.2, 0.6)
    elif kind in ("ONE", "THREE", "FIVE"):
        level = {"ONE": 0.1, "THREE": 0.3, "FIVE": 0.5}[kind]
        r_hat = gamma.copy()
        flat = r_hat.ravel()
        pool = np.flatnonzero(np.isclose(flat, level))
        n_flip = int(np.isclose(flat, 0.9).sum())
        if pool.size < n_flip:
            warnings.warn(
                f"only {pool.size} cells at level {level} available for "
                f"{n_flip} flips; flipping all of them")
            chosen = pool
        else:
            chosen = rng.choice(pool, size=n_flip, replace=False)
        flat[chosen] = 0.9
        r_hat = flat.reshape(gamma.shape)
    else:
        raise ValidationError(f"unknown prediction matrix kind {kind!r}")
    return PredictionMatrix(r_hat)


def assign_propensities(p_base, alpha, five_scale) -> np.ndarray:
    """p * alpha^min(4, 6 - rating) per pair; monotone in the rating so
    higher-rated pairs are more likely observed."""
    expo = np.minimum(4, 6 - np.asarray(five_scale, dtype=np.int64))
    p = p_base * np.power(alpha, expo)
    if np.any(p > 1.0):
        warnings.warn("propensities above 1 clipped")
        p = np.minimum(p, 1.0)
    return p.astype(np.float64)


def perturb_propensities(p_true, observed_mask, rng, beta_mode="per_pair",
                         floor=DEFAULT_PROPENSITY_FLOOR,
                         beta=None) -> np.ndarray:
    """Harmonic interpolation between the true propensity and the empirical
    observation rate: 1/p_hat = (1 - beta)/p + beta/p_e, beta ~ U(0, 1).

    beta_mode picks a per-pair draw (default, the stronger noise model) or a
    single per-run draw; an explicit beta array/scalar overrides both.
    """
    p = np.asarray(p_true, dtype=np.float64)
    p_e = float(np.mean(observed_mask))
    if p_e == 0.0:
        raise ValidationError("no observations; empirical rate is zero")
    if beta is None:
        if beta_mode == "none":
            beta = 0.0
        elif beta_mode == "per_run":
            beta = float(rng.uniform())
        else:
            beta = rng.uniform(size=p.shape)
    beta = np.asarray(beta, dtype=np.float64)
    inv = (1.0 - beta) / p + beta / p_e
    return np.clip(1.0 / inv, floor, 1.0)


def synth_scores(n_users, n_items, rng, rank=3) -> np.ndarray:
    """Low-rank-plus-noise stand-in score matrix for quantile assignment when
    no completed rating matrix is supplied."""
    a = rng.normal(size=(n_users, rank))
    b = rng.normal(size=(rank, n_items))
    return a @ b + 0.5 * rng.normal(size=(n_users, n_items))


def sample_instance(spec: BenchmarkSpec,
                    score_matrix: np.ndarray | None = None,
                    gamma_matrix: np.ndarray | None = None
                    ) -> BenchmarkInstance:
    """Generate one full benchmark instance from the spec's seed.

    The full matrix is flipped, including unobserved entries, so the
    linkage between noisy and true positive rates is testable everywhere;
    estimators only ever read the observed cells.
    """
    rng = make_rng(spec.seed)
    shape = (spec.n_users, spec.n_items)
    if spec.gamma_source == "supplied":
        if gamma_matrix is None:
            raise ValidationError("gamma_source=supplied needs gamma_matrix")
        gamma = np.asarray(gamma_matrix, dtype=np.float64)
        if gamma.shape != shape or not np.isin(
                gamma, np.asarray(GAMMA_LEVELS)).all():
            raise ValidationError("supplied gamma must hold the five levels")
        five_scale = (np.searchsorted(GAMMA_LEVELS, gamma) + 1).astype(np.int64)
    else:
        if score_matrix is None:
            score_matrix = synth_scores(spec.n_users, spec.n_items, rng)
        elif np.asarray(score_matrix).shape != shape:
            raise ValidationError("score matrix shape mismatch")
        gamma, five_scale = build_gamma(spec.gamma_proportions, score_matrix)

    prediction = build_prediction_matrix(spec.pred_kind, gamma, rng)
    p_true = assign_propensities(spec.p_base, spec.alpha, five_scale)

    observed_mask = (rng.random(shape) < p_true).astype(np.int8)
    true_ratings = (rng.random(shape) < gamma).astype(np.int8)
    flips = rng.random(shape)
    rho = spec.rho
    observed_ratings = np.where(
        true_ratings == 1,
        (flips >= rho.rho01).astype(np.int8),
        (flips < rho.rho10).astype(np.int8),
    )
    p_hat = perturb_propensities(p_true, observed_mask, rng,
                                 beta_mode=spec.beta_mode,
                                 floor=spec.propensity_floor)
    return BenchmarkInstance(spec, gamma, five_scale, prediction, p_true,
                             p_hat, observed_mask, true_ratings,
                             observed_ratings)


# ---------------------------------------------------------------------------
# Directory serialization
# ---------------------------------------------------------------------------

_MATRIX_FILES = {
    "gamma": "gamma.csv",
    "prediction": "pred.csv",
    "p_true": "p_true.csv",
    "p_hat": "p_hat.csv",
    "observed_mask": "o.csv",
    "true_ratings": "r_true.csv",
    "observed_ratings": "r_obs.csv",
}


def save_instance(out_dir, inst: BenchmarkInstance) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    arrays = {
        "gamma": inst.gamma,
        "prediction": inst.prediction.r_hat,
        "p_true": inst.p_true,
        "p_hat": inst.p_hat,
        "observed_mask": inst.observed_mask,
        "true_ratings": inst.true_ratings,
        "observed_ratings": inst.observed_ratings,
    }
    for key, fname in _MATRIX_FILES.items():
        np.savetxt(out / fname, arrays[key], fmt="%.17g", delimiter=",")
    manifest = inst.spec.manifest()
    with open(out / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_instance(in_dir) -> BenchmarkInstance:
    src = Path(in_dir)
    with open(src / "manifest.json") as fh:
        manifest = json.load(fh)
    manifest.pop("spec_hash", None)
    manifest["gamma_proportions"] = tuple(manifest["gamma_proportions"])
    spec = BenchmarkSpec(**manifest)
    arrays = {}
    for key, fname in _MATRIX_FILES.items():
        fpath = src / fname
        if key == "p_hat" and not fpath.exists():
            arrays[key] = None  # estimators needing propensities will say so
            continue
        arrays[key] = np.loadtxt(fpath, delimiter=",", ndmin=2)
    level_idx = np.searchsorted(GAMMA_LEVELS, arrays["gamma"])
    return BenchmarkInstance(
        spec,
        arrays["gamma"],
        (level_idx + 1).astype(np.int64),
        PredictionMatrix(arrays["prediction"]),
        arrays["p_true"],
        arrays["p_hat"],
        arrays["observed_mask"].astype(np.int8),
        arrays["true_ratings"].astype(np.int8),
        arrays["observed_ratings"].astype(np.int8),
    )
