import numpy as np
import pytest
from hypothesis import given, strategies as st

from noisyrec.data import (
    EPS_RHO,
    ErrorParams,
    PredictionMatrix,
    PropensityMatrix,
    RatingDataset,
    ValidationError,
    load_dataset_triples,
    make_rng,
    save_dataset_triples,
    validate_dataset,
)


class TestValidateDataset:
    def test_well_formed(self):
        d = RatingDataset(2, 2, np.ones((2, 2)), np.eye(2))
        assert validate_dataset(d) == []

    def test_bad_observed_rating_names_cell(self):
        d = RatingDataset.__new__(RatingDataset)
        object.__setattr__(d, "n_users", 2)
        object.__setattr__(d, "n_items", 2)
        object.__setattr__(d, "observed_mask", np.ones((2, 2), dtype=np.int8))
        ratings = np.zeros((2, 2))
        ratings[0, 1] = 0.5
        object.__setattr__(d, "observed_ratings", ratings)
        object.__setattr__(d, "true_ratings", None)
        violations = validate_dataset(d)
        assert len(violations) == 1
        assert "(0,1)" in violations[0]

    def test_construction_rejects_violations(self):
        with pytest.raises(ValidationError):
            RatingDataset(2, 2, np.ones((2, 3)), np.zeros((2, 2)))

    def test_unobserved_cells_ignore_rating_values(self):
        ratings = np.array([[7, 0], [0, 0]], dtype=np.int8)
        mask = np.array([[0, 1], [1, 1]], dtype=np.int8)
        d = RatingDataset(2, 2, mask, ratings)
        assert validate_dataset(d) == []


class TestErrorParams:
    def test_rejects_sum_at_boundary(self):
        with pytest.raises(ValidationError, match="rho01\\+rho10"):
            ErrorParams(0.6, 0.5)

    @given(
        st.floats(0.0, 2.0, allow_nan=False),
        st.floats(0.0, 2.0, allow_nan=False),
    )
    def test_rejects_invalid_sums_everywhere(self, r01, r10):
        if r01 + r10 >= 1.0 - EPS_RHO:
            with pytest.raises(ValidationError):
                ErrorParams(r01, r10)
        else:
            rho = ErrorParams(r01, r10)
            assert rho.denom > 0

    def test_rejects_negative(self):
        with pytest.raises(ValidationError):
            ErrorParams(-0.1, 0.2)


class TestMatrices:
    def test_propensity_floor_enforced(self):
        with pytest.raises(ValidationError):
            PropensityMatrix(np.full((2, 2), 0.01))
        clipped = PropensityMatrix.clipped(np.full((2, 2), 0.01))
        assert np.all(clipped.p_hat == 0.05)

    def test_prediction_open_interval(self):
        with pytest.raises(ValidationError):
            PredictionMatrix(np.array([[0.0, 0.5]]))


class TestRngDeterminism:
    def test_equal_seeds_bit_identical(self):
        a = make_rng(123).random((50, 50))
        b = make_rng(123).random((50, 50))
        assert np.array_equal(a, b)

    def test_different_seeds_differ(self):
        assert not np.array_equal(make_rng(1).random(10), make_rng(2).random(10))


class TestTriplesFormat:
    def test_roundtrip(self, tmp_path):
        rng = make_rng(0)
        mask = (rng.random((6, 9)) < 0.5).astype(np.int8)
        ratings = (rng.random((6, 9)) < 0.4).astype(np.int8) * mask
        d = RatingDataset(6, 9, mask, ratings)
        path = tmp_path / "data.tsv"
        save_dataset_triples(path, d)
        loaded = load_dataset_triples(path, n_users=6, n_items=9)
        assert np.array_equal(loaded.observed_mask, d.observed_mask)
        assert np.array_equal(
            loaded.observed_ratings * loaded.observed_mask,
            d.observed_ratings * d.observed_mask)

    def test_malformed_line_reports_number(self, tmp_path):
        path = tmp_path / "bad.tsv"
        path.write_text("0\t0\t1\nnot a line\n")
        with pytest.raises(ValidationError, match="line 2"):
            load_dataset_triples(path)

    def test_non_binary_rating_rejected(self, tmp_path):
        path = tmp_path / "bad.tsv"
        path.write_text("0\t0\t5\n")
        with pytest.raises(ValidationError, match="0 or 1"):
            load_dataset_triples(path)
