"""Command-line driver: benchmark generation, estimator evaluation,
training, ingestion, and multi-seed sweeps.

Exit codes: 0 success, 2 validation failure, 3 runtime/divergence failure.
Reports are CSV with a leading comment line carrying the manifest hash, so
golden files diff cleanly.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import json
import sys
from pathlib import Path

import numpy as np

from .data import (
    ErrorParams,
    ImputationMatrix,
    PredictionMatrix,
    PropensityMatrix,
    RatingDataset,
    ValidationError,
    load_dataset_triples,
    make_rng,
    save_dataset_triples,
)
from .estimators import (
    ESTIMATORS,
    EstimatorInputs,
    relative_error,
    true_inaccuracy,
)
from .losses import LossKind, loss_curves
from .metrics import auc, ndcg_at_k, recall_at_k
from .models import (
    SgdConfig,
    TrainingDivergence,
    save_model,
    train_propensity,
)
from .noise import identify_error_params
from .synthbench import (
    BenchmarkSpec,
    load_instance,
    sample_instance,
    save_instance,
)
from .training import (
    AltTrainConfig,
    alternating_denoise_train,
    pretrain_noisy_model,
    train_noisy_factor_model,
)


def parse_config_file(path) -> dict:
    """Plain-text `key = value` pairs, nesting via dotted keys."""
    out: dict = {}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValidationError(f"{path}:{lineno}: expected key = value")
            key, value = (part.strip() for part in line.split("=", 1))
            node = out
            parts = key.split(".")
            for part in parts[:-1]:
                node = node.setdefault(part, {})
            node[parts[-1]] = value
    return out


def _coerce(value, like):
    if isinstance(like, bool):
        return value.lower() in ("1", "true", "yes")
    if isinstance(like, int):
        return int(value)
    if isinstance(like, float):
        return float(value)
    return value


def _manifest_hash(payload: dict) -> str:
    return hashlib.sha256(
        json.dumps(payload, sort_keys=True, default=str).encode()
    ).hexdigest()[:16]


def _write_report(path, header, rows, manifest: dict) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(f"# manifest={_manifest_hash(manifest)}\n")
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


# ---------------------------------------------------------------------------
# synth
# ---------------------------------------------------------------------------

_SPEC_KEYS = {f.name: f for f in dataclasses.fields(BenchmarkSpec)}


def _spec_from_config(cfg: dict, seed_override=None) -> BenchmarkSpec:
    kwargs = {}
    for key, value in cfg.items():
        if key == "scores":
            continue
        if key not in _SPEC_KEYS:
            raise ValidationError(f"unknown spec field {key!r}")
        if key == "gamma_proportions":
            kwargs[key] = tuple(float(v) for v in value.split(","))
        elif key in ("n_users", "n_items", "seed"):
            kwargs[key] = int(value)
        elif key in ("rho01", "rho10", "p_base", "alpha", "propensity_floor"):
            kwargs[key] = float(value)
        else:
            kwargs[key] = value
    if seed_override is not None:
        kwargs["seed"] = seed_override
    if "n_users" not in kwargs or "n_items" not in kwargs:
        raise ValidationError("spec needs n_users and n_items")
    if "rho01" not in kwargs or "rho10" not in kwargs:
        raise ValidationError("spec needs rho01 and rho10")
    return BenchmarkSpec(**kwargs)


def cmd_synth(args) -> int:
    cfg = parse_config_file(args.spec)
    spec = _spec_from_config(cfg, args.seed)
    scores = None
    if "scores" in cfg:
        scores = np.loadtxt(cfg["scores"], delimiter=",", ndmin=2)
    inst = sample_instance(spec, score_matrix=scores)
    save_instance(args.out, inst)
    print(f"wrote instance to {args.out}")
    return 0


# ---------------------------------------------------------------------------
# estimate
# ---------------------------------------------------------------------------

def _default_imputation(inst, loss: LossKind) -> ImputationMatrix:
    """Imputed error against the mean observed rating as a soft label."""
    o = inst.observed_mask
    n_obs = int(o.sum())
    r_bar = float((o * inst.observed_ratings).sum() / max(n_obs, 1))
    l1, l0 = loss_curves(loss, inst.prediction.r_hat)
    return ImputationMatrix(r_bar * l1 + (1.0 - r_bar) * l0)


def _resolve_rho(inst, mode, given, seed) -> ErrorParams:
    if mode == "true":
        return inst.spec.rho
    if mode == "given":
        if given is None:
            raise ValidationError("--rho required with rho-mode=given")
        r01, r10 = (float(v) for v in given.split(","))
        return ErrorParams(r01, r10)
    # estimated: pretrain a noisy-rate model and read off the extremes
    dataset = inst.to_dataset()
    p_arr = inst.p_hat if inst.p_hat is not None else inst.p_true
    q = pretrain_noisy_model(
        dataset, "ips",
        SgdConfig(learning_rate=0.1, batch_size=8192, max_epochs=30,
                  seed=seed),
        p_hat=p_arr)
    k = max(1, int(0.001 * dataset.n_users * dataset.n_items))
    return identify_error_params(q, k_extreme=k)


def cmd_estimate(args) -> int:
    inst = load_instance(args.instance)
    loss = LossKind.squared()
    dataset = inst.to_dataset()
    target = true_inaccuracy(inst.prediction, inst.true_ratings, loss)
    p_arr = inst.p_true if args.propensities == "true" else inst.p_hat
    p_mat = None
    if p_arr is not None:
        floor = min(float(np.min(p_arr)), inst.spec.propensity_floor)
        p_mat = PropensityMatrix(p_arr, floor=floor)
    inputs = EstimatorInputs(
        dataset=dataset,
        predictions=inst.prediction,
        loss=loss,
        p_hat=p_mat,
        e_bar=_default_imputation(inst, loss),
        rho_hat=_resolve_rho(inst, args.rho_mode, args.rho, args.seed),
    )
    names = args.estimators.split(",")
    rows = []
    for name in names:
        fn = ESTIMATORS.get(name.strip())
        if fn is None:
            rows.append([name, "error", "", f"unknown estimator {name!r}"])
            continue
        try:
            value = fn(inputs)
            rows.append([name, f"{value:.10g}", f"{target:.10g}",
                         f"{relative_error(target, value):.10g}"])
        except ValidationError as exc:
            rows.append([name, "error", "", str(exc)])
    _write_report(args.out, ["estimator", "value", "target", "relative_error"],
                  rows, {"instance": inst.spec.manifest(),
                         "estimators": names, "rho_mode": args.rho_mode})
    print(f"wrote report to {args.out}")
    return 0


# ---------------------------------------------------------------------------
# train
# ---------------------------------------------------------------------------

def _apply_sgd_overrides(cfg: SgdConfig, section: dict) -> SgdConfig:
    values = dataclasses.asdict(cfg)
    for key, value in section.items():
        if key not in values:
            raise ValidationError(f"unknown sgd option {key!r}")
        values[key] = _coerce(value, values[key])
    return SgdConfig(**values)


def _load_training_data(path, seed):
    """Instance dir -> (dataset, eval labels from ground truth).
    Triples file -> (train split dataset, held-out observed labels)."""
    path = Path(path)
    if path.is_dir():
        inst = load_instance(path)
        return inst.to_dataset(), np.asarray(inst.true_ratings), None
    dataset = load_dataset_triples(path)
    rng = make_rng(seed)
    users, items = dataset.observed_pairs()
    n_obs = users.shape[0]
    held = rng.permutation(n_obs)[: max(1, n_obs // 10)]
    test_mask = np.zeros(dataset.shape, dtype=np.int8)
    test_mask[users[held], items[held]] = 1
    train_mask = dataset.observed_mask * (1 - test_mask)
    train = RatingDataset(dataset.n_users, dataset.n_items, train_mask,
                          dataset.observed_ratings)
    labels = np.where(test_mask == 1, dataset.observed_ratings, -1)
    return train, labels, test_mask


def _evaluate(pred: np.ndarray, labels: np.ndarray, k: int):
    flat_keep = labels.ravel() >= 0
    a = auc(pred.ravel()[flat_keep], labels.ravel()[flat_keep])
    masked = np.where(labels >= 0, labels, 0)
    return a, ndcg_at_k(pred, masked, k), recall_at_k(pred, masked, k)


def cmd_train(args) -> int:
    cfg = parse_config_file(args.config) if args.config else {}
    sgd = _apply_sgd_overrides(
        SgdConfig(learning_rate=0.1, batch_size=4096, max_epochs=30,
                  seed=args.seed),
        cfg.get("sgd", {}))
    dataset, labels, _ = _load_training_data(args.data, args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    prop = train_propensity(
        dataset, SgdConfig(learning_rate=0.5, batch_size=0, weight_decay=0.0,
                           max_epochs=int(cfg.get("propensity_epochs", 100)),
                           seed=args.seed))
    p_hat = prop.export().p_hat

    if args.method == "ome_alt":
        alt_cfg = AltTrainConfig(
            rho_init=ErrorParams(
                *(float(v) for v in cfg.get("rho_init", "0.1,0.1").split(","))),
            outer_loops=int(cfg.get("outer_loops", 30)),
            steps_prediction=int(cfg.get("steps_prediction", 10)),
            steps_imputation=int(cfg.get("steps_imputation", 10)),
            embedding_dim=int(cfg.get("embedding_dim", 8)),
            pretrain_method=cfg.get("pretrain_method", "ips"),
            sgd_prediction=sgd,
            sgd_imputation=sgd,
            sgd_pretrain=sgd,
        )
        q = pretrain_noisy_model(dataset, alt_cfg.pretrain_method,
                                 alt_cfg.sgd_pretrain,
                                 d=alt_cfg.embedding_dim, p_hat=p_hat)
        model, _, trace = alternating_denoise_train(dataset, p_hat, q, alt_cfg)
        trace.write_csv(out / "trace.csv")
    elif args.method in ("naive", "eib", "ips", "dr"):
        model = train_noisy_factor_model(dataset, args.method, sgd,
                                         d=int(cfg.get("embedding_dim", 8)),
                                         p_hat=p_hat)
    else:
        raise ValidationError(f"unknown training method {args.method!r}")

    save_model(out / "checkpoint.npz", model)
    pred = model.predict_all()
    k = int(cfg.get("k", 5))
    a, ndcg, rec = _evaluate(pred, labels, k)
    _write_report(out / "eval.csv",
                  ["metric", "value"],
                  [["auc", f"{a:.10g}"], [f"ndcg@{k}", f"{ndcg:.10g}"],
                   [f"recall@{k}", f"{rec:.10g}"]],
                  {"method": args.method, "seed": args.seed,
                   "data": str(args.data)})
    print(f"wrote checkpoint and eval to {out}")
    return 0


# ---------------------------------------------------------------------------
# ingest
# ---------------------------------------------------------------------------

def cmd_ingest(args) -> int:
    users, items, ratings = [], [], []
    with open(args.triples) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            parts = line.replace(",", "\t").split()
            if len(parts) < 3:
                raise ValidationError(f"line {lineno}: expected 3 fields")
            try:
                users.append(int(parts[0]))
                items.append(int(parts[1]))
                ratings.append(float(parts[2]))
            except ValueError as exc:
                raise ValidationError(f"line {lineno}: {exc}") from exc
    if not users:
        raise ValidationError("empty triples file")
    n_users = max(users) + 1
    n_items = max(items) + 1
    mask = np.zeros((n_users, n_items), dtype=np.int8)
    obs = np.zeros((n_users, n_items), dtype=np.int8)
    binary = [1 if r >= args.threshold else 0 for r in ratings]
    mask[users, items] = 1
    obs[users, items] = binary
    dataset = RatingDataset(n_users, n_items, mask, obs)
    save_dataset_triples(args.out, dataset)
    print(f"wrote {dataset.n_observed} binarized triples to {args.out}")
    return 0


# ---------------------------------------------------------------------------
# sweep
# ---------------------------------------------------------------------------

def _sweep_one(spec_cfg, seed, names, propensities):
    spec = _spec_from_config(spec_cfg, seed)
    inst = sample_instance(spec)
    loss = LossKind.squared()
    target = true_inaccuracy(inst.prediction, inst.true_ratings, loss)
    p_arr = inst.p_true if propensities == "true" else inst.p_hat
    floor = min(float(np.min(p_arr)), inst.spec.propensity_floor)
    inputs = EstimatorInputs(
        dataset=inst.to_dataset(), predictions=inst.prediction, loss=loss,
        p_hat=PropensityMatrix(p_arr, floor=floor),
        e_bar=_default_imputation(inst, loss),
        rho_hat=inst.spec.rho)
    rows = []
    for name in names:
        fn = ESTIMATORS.get(name)
        if fn is None:
            rows.append([seed, name, "error", "", f"unknown {name!r}"])
            continue
        try:
            value = fn(inputs)
            rows.append([seed, name, f"{value:.10g}", f"{target:.10g}",
                         f"{relative_error(target, value):.10g}"])
        except ValidationError as exc:
            rows.append([seed, name, "error", "", str(exc)])
    return rows


def cmd_sweep(args) -> int:
    cfg = parse_config_file(args.spec)
    names = [n.strip() for n in args.estimators.split(",")]
    seeds = [args.seed + k for k in range(args.n_seeds)]
    rows = []
    if args.jobs > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            for chunk in pool.map(
                    _sweep_one, [cfg] * len(seeds), seeds,
                    [names] * len(seeds), [args.propensities] * len(seeds)):
                rows.extend(chunk)
    else:
        for seed in seeds:
            rows.extend(_sweep_one(cfg, seed, names, args.propensities))
    _write_report(args.out,
                  ["seed", "estimator", "value", "target", "relative_error"],
                  rows, {"spec": cfg, "seeds": seeds, "estimators": names})
    print(f"wrote sweep report to {args.out}")
    return 0


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="noisyrec",
        description="Noise-corrected debiased recommendation toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a benchmark instance")
    p.add_argument("--spec", required=True, help="key=value spec file")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(fn=cmd_synth)

    p = sub.add_parser("estimate", help="evaluate estimators on an instance")
    p.add_argument("--instance", required=True)
    p.add_argument("--estimators", default="naive,eib,ips,dr,ome_eib,ome_ips,ome_dr")
    p.add_argument("--rho-mode", choices=("true", "estimated", "given"),
                   default="true")
    p.add_argument("--rho", default=None, help="rho01,rho10 for rho-mode=given")
    p.add_argument("--propensities", choices=("true", "perturbed"),
                   default="perturbed")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=cmd_estimate)

    p = sub.add_parser("train", help="train a prediction model")
    p.add_argument("--data", required=True,
                   help="instance directory or triples file")
    p.add_argument("--method",
                   choices=("naive", "eib", "ips", "dr", "ome_alt"),
                   default="ome_alt")
    p.add_argument("--config", default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("ingest", help="binarize raw rating triples")
    p.add_argument("--triples", required=True)
    p.add_argument("--threshold", type=float, default=3.0)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_ingest)

    p = sub.add_parser("sweep", help="multi-seed relative-error table")
    p.add_argument("--spec", required=True)
    p.add_argument("--estimators", default="naive,dr,ome_dr")
    p.add_argument("--n-seeds", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--propensities", choices=("true", "perturbed"),
                   default="perturbed")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_sweep)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (TrainingDivergence, RuntimeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
