import numpy as np
import pytest

from noisyrec.data import (
    ErrorParams,
    ImputationMatrix,
    PredictionMatrix,
    PropensityMatrix,
    RatingDataset,
    ValidationError,
    make_rng,
)
from noisyrec.estimators import (
    ESTIMATORS,
    EstimatorInputs,
    bias_ome_dr_oracle,
    estimate_dr,
    estimate_eib,
    estimate_ips,
    estimate_naive,
    estimate_ome_dr,
    estimate_ome_eib,
    estimate_ome_ips,
    monte_carlo_ome_dr,
    relative_error,
    true_inaccuracy,
)
from noisyrec.losses import LossKind

SQ = LossKind.squared()


def small_instance(seed=0, n=5, m=5, rho=None, p_lo=0.1, p_hi=0.9):
    """Random instance with true ratings, true propensities, observed sample."""
    rng = make_rng(seed)
    gamma = rng.uniform(0.1, 0.9, size=(n, m))
    r_true = (rng.random((n, m)) < gamma).astype(np.int8)
    p_true = rng.uniform(p_lo, p_hi, size=(n, m))
    o = (rng.random((n, m)) < p_true).astype(np.int8)
    if rho is None:
        rho = ErrorParams(0.0, 0.0)
    flips = rng.random((n, m))
    r_obs = np.where(r_true == 1, (flips >= rho.rho01).astype(np.int8),
                     (flips < rho.rho10).astype(np.int8))
    d = RatingDataset(n, m, o, r_obs, r_true)
    pred = PredictionMatrix(rng.uniform(0.05, 0.95, size=(n, m)))
    return d, pred, p_true, rho


def make_inputs(d, pred, p=None, e_bar=None, rho=None, floor=0.05):
    return EstimatorInputs(
        dataset=d, predictions=pred, loss=SQ,
        p_hat=None if p is None else PropensityMatrix.clipped(p, floor),
        e_bar=None if e_bar is None else ImputationMatrix(e_bar),
        rho_hat=rho)


class TestTrueInaccuracy:
    def test_hand_value_1x2(self):
        pred = PredictionMatrix(np.array([[0.3, 0.8]]))
        r_star = np.array([[1, 0]])
        assert true_inaccuracy(pred, r_star, SQ) == pytest.approx(0.565)

    def test_constant_half(self):
        pred = PredictionMatrix(np.full((3, 4), 0.5))
        r_star = (make_rng(1).random((3, 4)) < 0.5).astype(int)
        assert true_inaccuracy(pred, r_star, SQ) == pytest.approx(0.25)

    def test_near_perfect_model(self):
        r_star = np.array([[1, 0], [0, 1]])
        pred = PredictionMatrix(np.abs(r_star - 1e-6))
        assert true_inaccuracy(pred, r_star, SQ) == pytest.approx(0.0, abs=1e-10)

    def test_missing_truth_errors(self):
        pred = PredictionMatrix(np.full((2, 2), 0.5))
        with pytest.raises(ValidationError):
            true_inaccuracy(pred, None, SQ)


class TestPlainEstimators:
    def test_naive_full_observation_equals_inaccuracy(self):
        d, pred, _, _ = small_instance()
        full = RatingDataset(d.n_users, d.n_items,
                             np.ones(d.shape, np.int8), d.true_ratings,
                             d.true_ratings)
        inputs = make_inputs(full, pred)
        assert estimate_naive(inputs) == pytest.approx(
            true_inaccuracy(pred, full.true_ratings, SQ))

    def test_naive_singleton(self):
        o = np.zeros((2, 2), np.int8)
        o[1, 0] = 1
        r = np.zeros((2, 2), np.int8)
        r[1, 0] = 1
        d = RatingDataset(2, 2, o, r)
        pred = PredictionMatrix(np.full((2, 2), 0.4))
        assert estimate_naive(make_inputs(d, pred)) == pytest.approx(0.36)

    def test_naive_empty_errors(self):
        d = RatingDataset(2, 2, np.zeros((2, 2)), np.zeros((2, 2)))
        with pytest.raises(ValidationError):
            estimate_naive(make_inputs(d, PredictionMatrix(np.full((2, 2), 0.5))))

    def test_naive_biased_under_mnar(self):
        # positives observed with propensity 1, negatives with 0.1
        rng = make_rng(3)
        n, m = 40, 40
        r_true = (rng.random((n, m)) < 0.5).astype(np.int8)
        p = np.where(r_true == 1, 1.0, 0.1)
        o = (rng.random((n, m)) < p).astype(np.int8)
        d = RatingDataset(n, m, o, r_true, r_true)
        pred = PredictionMatrix(np.full((n, m), 0.2))
        naive = estimate_naive(make_inputs(d, pred))
        target = true_inaccuracy(pred, r_true, SQ)
        assert abs(naive - target) > 0.05

    def test_all_equal_naive_when_fully_observed_unit_propensity(self):
        d, pred, _, _ = small_instance()
        full = RatingDataset(d.n_users, d.n_items, np.ones(d.shape, np.int8),
                             d.true_ratings, d.true_ratings)
        p = np.ones(d.shape)
        e_obs = np.where(full.observed_ratings == 1,
                         (pred.r_hat - 1.0) ** 2, pred.r_hat ** 2)
        inputs = make_inputs(full, pred, p=p, e_bar=e_obs)
        naive = estimate_naive(inputs)
        assert estimate_ips(inputs) == pytest.approx(naive)
        assert estimate_eib(inputs) == pytest.approx(naive)
        assert estimate_dr(inputs) == pytest.approx(naive)

    def test_ips_mc_unbiased_2x2(self):
        rng = make_rng(7)
        r_true = np.array([[1, 0], [0, 1]], dtype=np.int8)
        p = np.array([[0.9, 0.3], [0.4, 0.8]])
        pred = PredictionMatrix(np.array([[0.7, 0.2], [0.5, 0.6]]))
        target = true_inaccuracy(pred, r_true, SQ)
        e = np.where(r_true == 1, (pred.r_hat - 1) ** 2, pred.r_hat ** 2)
        n_reps = 100_000
        draws = rng.random((n_reps, 2, 2)) < p
        ests = np.mean(draws * e / p, axis=(1, 2))
        se = ests.std(ddof=1) / np.sqrt(n_reps)
        assert abs(ests.mean() - target) < 3 * se
        # and the library IPS value on one realization matches the formula
        o = draws[0].astype(np.int8)
        if o.sum() > 0:
            d = RatingDataset(2, 2, o, r_true * o, r_true)
            lib = estimate_ips(make_inputs(d, pred, p=p))
            assert lib == pytest.approx(float(np.mean(o * e / p)))

    def test_dr_exact_when_imputation_accurate(self):
        d, pred, p, _ = small_instance(seed=11)
        e = np.where(d.true_ratings == 1, (pred.r_hat - 1) ** 2,
                     pred.r_hat ** 2)
        d_clean = RatingDataset(d.n_users, d.n_items, d.observed_mask,
                                d.true_ratings * d.observed_mask,
                                d.true_ratings)
        inputs = make_inputs(d_clean, pred, p=p, e_bar=e)
        # o(e - e_hat) vanishes where observed labels equal truth
        assert estimate_dr(inputs) == pytest.approx(
            true_inaccuracy(pred, d.true_ratings, SQ))

    def test_missing_components_error(self):
        d, pred, p, _ = small_instance()
        inputs = make_inputs(d, pred)
        for name in ("ips", "dr", "eib", "ome_eib", "ome_ips", "ome_dr"):
            with pytest.raises(ValidationError):
                ESTIMATORS[name](inputs)


class TestDegenerations:
    def test_ome_dr_zero_imputation_is_ome_ips_bitwise(self):
        d, pred, p, rho = small_instance(seed=2, rho=ErrorParams(0.2, 0.1))
        a = make_inputs(d, pred, p=p, e_bar=np.zeros(d.shape), rho=rho)
        b = make_inputs(d, pred, p=p, rho=rho)
        assert estimate_ome_dr(a) == estimate_ome_ips(b)

    def test_ome_dr_unit_propensity_is_ome_eib_bitwise(self):
        d, pred, _, rho = small_instance(seed=2, rho=ErrorParams(0.2, 0.1))
        e_bar = make_rng(5).normal(0.3, 0.1, size=d.shape)
        a = make_inputs(d, pred, p=np.ones(d.shape), e_bar=e_bar, rho=rho)
        b = make_inputs(d, pred, e_bar=e_bar, rho=rho)
        assert estimate_ome_dr(a) == estimate_ome_eib(b)

    def test_noiseless_ome_family_matches_plain_family_bitwise(self):
        d, pred, p, _ = small_instance(seed=4)
        rho0 = ErrorParams(0.0, 0.0)
        e_obs = np.where(d.observed_ratings == 1,
                         (pred.r_hat - 1.0) ** 2, pred.r_hat ** 2)
        inputs = make_inputs(d, pred, p=p, e_bar=e_obs, rho=rho0)
        assert estimate_ome_eib(inputs) == estimate_eib(inputs)
        assert estimate_ome_ips(inputs) == estimate_ips(inputs)
        assert estimate_ome_dr(inputs) == estimate_dr(inputs)

    def test_ome_eib_no_observation_is_mean_imputation(self):
        e_bar = make_rng(6).normal(0.4, 0.2, size=(3, 3))
        d = RatingDataset(3, 3, np.zeros((3, 3)), np.zeros((3, 3)))
        pred = PredictionMatrix(np.full((3, 3), 0.5))
        inputs = make_inputs(d, pred, e_bar=e_bar, rho=ErrorParams(0.2, 0.1))
        assert estimate_ome_eib(inputs) == pytest.approx(float(e_bar.mean()))

    def test_permutation_invariance(self):
        d, pred, p, rho = small_instance(seed=9, rho=ErrorParams(0.15, 0.05))
        e_bar = make_rng(10).normal(0.3, 0.1, size=d.shape)
        base = estimate_ome_dr(make_inputs(d, pred, p=p, e_bar=e_bar, rho=rho))
        perm = make_rng(11).permutation(d.n_users)
        d2 = RatingDataset(d.n_users, d.n_items, d.observed_mask[perm],
                           d.observed_ratings[perm], None)
        permuted = estimate_ome_dr(make_inputs(
            d2, PredictionMatrix(pred.r_hat[perm]), p=p[perm],
            e_bar=e_bar[perm], rho=rho))
        assert permuted == pytest.approx(base, abs=1e-14)


class TestMonteCarloUnbiasedness:
    def _run(self, rho_true, rho_hat, p_hat_fn, e_bar_fn, seed=0,
             n_reps=50_000):
        rng = make_rng(seed)
        n, m = 20, 30
        gamma = rng.uniform(0.05, 0.95, size=(n, m))
        r_true = (rng.random((n, m)) < gamma).astype(np.int8)
        p_true = rng.uniform(0.1, 0.9, size=(n, m))
        pred = PredictionMatrix(rng.uniform(0.05, 0.95, size=(n, m)))
        p_hat = p_hat_fn(p_true, rng)
        e_bar = e_bar_fn(pred, r_true, rho_hat, rng)
        ests = monte_carlo_ome_dr(
            r_true, pred, PropensityMatrix.clipped(p_true),
            PropensityMatrix.clipped(p_hat), ImputationMatrix(e_bar),
            rho_true, rho_hat, SQ, n_reps, seed + 1)
        target = true_inaccuracy(pred, r_true, SQ)
        se = float(ests.std(ddof=1) / np.sqrt(n_reps))
        return float(ests.mean()), target, se

    @staticmethod
    def _accurate_e_bar(pred, r_true, rho, rng):
        # expected surrogate given r*: equals the clean loss by unbiasedness
        return np.where(r_true == 1, (pred.r_hat - 1.0) ** 2, pred.r_hat ** 2)

    def test_unbiased_true_propensity_arbitrary_imputation(self):
        rho = ErrorParams(0.2, 0.1)
        mean, target, se = self._run(
            rho, rho, lambda p, rng: p,
            lambda pred, r, rh, rng: rng.normal(0.3, 0.2, size=pred.r_hat.shape))
        assert abs(mean - target) < 3 * se

    def test_unbiased_wrong_propensity_accurate_imputation(self):
        rho = ErrorParams(0.2, 0.1)
        mean, target, se = self._run(
            rho, rho,
            lambda p, rng: np.clip(p * rng.uniform(0.5, 1.5, size=p.shape),
                                   0.05, 1.0),
            self._accurate_e_bar)
        assert abs(mean - target) < 3 * se

    def test_biased_when_rho_misspecified(self):
        rho_true = ErrorParams(0.2, 0.1)
        rho_hat = ErrorParams(0.05, 0.25)
        mean, target, se = self._run(
            rho_true, rho_hat, lambda p, rng: p,
            lambda pred, r, rh, rng: rng.normal(0.3, 0.2,
                                                size=pred.r_hat.shape))
        assert abs(mean - target) > 5 * se

    def test_mc_deterministic_per_seed(self):
        rho = ErrorParams(0.1, 0.1)
        a = self._run(rho, rho, lambda p, rng: p, self._accurate_e_bar,
                      seed=3, n_reps=500)
        b = self._run(rho, rho, lambda p, rng: p, self._accurate_e_bar,
                      seed=3, n_reps=500)
        assert a == b


class TestBiasOracle:
    def test_zero_bias_fully_correct(self):
        d, pred, p, _ = small_instance(seed=12)
        rho = ErrorParams(0.2, 0.1)
        e_bar = make_rng(13).normal(0.3, 0.2, size=d.shape)
        bias = bias_ome_dr_oracle(
            d.true_ratings, pred, PropensityMatrix.clipped(p),
            PropensityMatrix.clipped(p), ImputationMatrix(e_bar), rho, rho, SQ)
        assert bias == pytest.approx(0.0, abs=1e-12)

    def test_oracle_matches_monte_carlo(self):
        rng = make_rng(21)
        n, m = 10, 10
        r_true = (rng.random((n, m)) < 0.5).astype(np.int8)
        p_true = rng.uniform(0.2, 0.9, size=(n, m))
        p_hat = np.clip(p_true * rng.uniform(0.7, 1.3, size=(n, m)), 0.05, 1.0)
        pred = PredictionMatrix(rng.uniform(0.1, 0.9, size=(n, m)))
        e_bar = rng.normal(0.3, 0.15, size=(n, m))
        rho_true = ErrorParams(0.2, 0.1)
        rho_hat = ErrorParams(0.12, 0.18)
        pt = PropensityMatrix.clipped(p_true)
        ph = PropensityMatrix.clipped(p_hat)
        eb = ImputationMatrix(e_bar)
        oracle = bias_ome_dr_oracle(r_true, pred, pt, ph, eb, rho_true,
                                    rho_hat, SQ)
        n_reps = 100_000
        ests = monte_carlo_ome_dr(r_true, pred, pt, ph, eb, rho_true, rho_hat,
                                  SQ, n_reps, 22)
        target = true_inaccuracy(pred, r_true, SQ)
        se = float(ests.std(ddof=1) / np.sqrt(n_reps))
        assert abs(abs(float(ests.mean()) - target) - oracle) < 3 * se


class TestRelativeError:
    def test_hand_values(self):
        assert relative_error(0.5, 0.45) == pytest.approx(0.1)
        assert relative_error(0.2, 0.26) == pytest.approx(0.3)
        assert relative_error(0.7, 0.7) == 0.0

    def test_nonpositive_target_errors(self):
        with pytest.raises(ValidationError):
            relative_error(0.0, 0.1)
