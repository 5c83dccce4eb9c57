import subprocess
import sys

import numpy as np
import pytest

from noisyrec import _kernels
from noisyrec.data import make_rng


def random_problem(seed, n=12, m=9, d=4, batch=40):
    rng = make_rng(seed)
    u = rng.integers(0, n, size=batch)
    i = rng.integers(0, m, size=batch)
    user_emb = rng.normal(size=(n, d))
    item_emb = rng.normal(size=(m, d))
    user_bias = rng.normal(size=n)
    item_bias = rng.normal(size=m)
    coef = rng.normal(size=batch)
    return u, i, user_emb, item_emb, user_bias, item_bias, coef


class TestBackendAgreement:
    @pytest.mark.parametrize("seed", range(3))
    def test_scores_match_numpy_reference(self, seed):
        u, i, ue, ie, ub, ib, _ = random_problem(seed)
        active = _kernels.factor_scores(u, i, ue, ie, ub, ib, 0.37)
        ref = _kernels._factor_scores_np(u, i, ue, ie, ub, ib, 0.37)
        assert np.allclose(active, ref, rtol=1e-12, atol=1e-12)

    @pytest.mark.parametrize("seed", range(3))
    def test_backward_matches_numpy_reference(self, seed):
        u, i, ue, ie, ub, ib, coef = random_problem(seed)
        active = _kernels.factor_backward(u, i, ue, ie, coef)
        ref = _kernels._factor_backward_np(u, i, ue, ie, coef)
        for a, b in zip(active, ref):
            assert np.allclose(a, b, rtol=1e-12, atol=1e-12)

    def test_backward_duplicate_indices_accumulate(self):
        ue = np.ones((2, 2))
        ie = np.full((2, 2), 2.0)
        u = np.array([0, 0, 0])
        i = np.array([1, 1, 1])
        coef = np.array([1.0, 1.0, 1.0])
        g_ue, g_ie, g_ub, g_ib, g_b0 = _kernels.factor_backward(
            u, i, ue, ie, coef)
        assert np.allclose(g_ue[0], 6.0)
        assert np.allclose(g_ie[1], 3.0)
        assert g_ub[0] == 3.0 and g_ib[1] == 3.0 and g_b0 == 3.0


class TestMonteCarloKernel:
    def _inputs(self, seed, n_cells=50):
        rng = make_rng(seed)
        p_true = rng.uniform(0.2, 0.9, size=n_cells)
        p_hat = rng.uniform(0.2, 0.9, size=n_cells)
        e_bar = rng.normal(0.3, 0.1, size=n_cells)
        s1 = rng.normal(0.5, 0.2, size=n_cells)
        s0 = rng.normal(0.2, 0.2, size=n_cells)
        q1 = rng.uniform(0.1, 0.9, size=n_cells)
        return p_true, p_hat, e_bar, s1, s0, q1

    def test_deterministic_per_seed(self):
        args = self._inputs(0)
        a = _kernels.mc_dr_estimates(200, 7, *args)
        b = _kernels.mc_dr_estimates(200, 7, *args)
        assert np.array_equal(a, b)
        c = _kernels.mc_dr_estimates(200, 8, *args)
        assert not np.array_equal(a, c)

    def test_matches_analytic_expectation(self):
        # E[estimate] = mean over cells of
        # (1 - p/p_hat) e_bar + (p/p_hat)(q1 s1 + (1-q1) s0)
        p_true, p_hat, e_bar, s1, s0, q1 = self._inputs(1)
        w = p_true / p_hat
        expected = float(np.mean(
            (1.0 - w) * e_bar + w * (q1 * s1 + (1.0 - q1) * s0)))
        n_reps = 40_000
        draws = _kernels.mc_dr_estimates(n_reps, 11, p_true, p_hat, e_bar,
                                         s1, s0, q1)
        se = float(draws.std(ddof=1) / np.sqrt(n_reps))
        assert abs(float(draws.mean()) - expected) < 3 * se

    def test_numpy_fallback_agrees_in_distribution(self):
        p_true, p_hat, e_bar, s1, s0, q1 = self._inputs(2)
        n_reps = 40_000
        a = _kernels.mc_dr_estimates(n_reps, 3, p_true, p_hat, e_bar, s1,
                                     s0, q1)
        b = _kernels._mc_dr_estimates_np(n_reps, 3, p_true, p_hat, e_bar,
                                         s1, s0, q1)
        se = np.hypot(a.std(ddof=1), b.std(ddof=1)) / np.sqrt(n_reps)
        assert abs(float(a.mean() - b.mean())) < 4 * se


class TestBackendFlag:
    def test_env_flag_selects_numpy_backend(self):
        code = ("import os; os.environ['NOISYREC_DISABLE_NUMBA'] = '1'; "
                "from noisyrec import _kernels; "
                "print(_kernels.ACTIVE_BACKEND)")
        out = subprocess.run([sys.executable, "-c", code],
                             capture_output=True, text=True, check=True)
        assert out.stdout.strip() == "numpy"

    def test_backend_name_is_known(self):
        assert _kernels.ACTIVE_BACKEND in ("numba", "numpy")
