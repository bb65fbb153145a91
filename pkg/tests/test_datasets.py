import numpy as np
import pytest

from stabreg.datasets import (
    CsvParseError,
    Dataset,
    SimConfig,
    destandardize_coefficients,
    generate_linear,
    load_csv,
    make_folds,
    save_csv,
    standardize,
    subset,
)
from stabreg.distributions import DoubleExponentialErrors, GaussianErrors
from stabreg.errors import UsageError


class TestDatasetInvariants:
    def test_rejects_short_or_empty(self):
        with pytest.raises(UsageError):
            Dataset(y=[1.0], x=[[1.0]])
        with pytest.raises(UsageError):
            Dataset(y=[1.0, 2.0], x=np.empty((2, 0)))

    def test_rejects_nonfinite(self):
        with pytest.raises(UsageError):
            Dataset(y=[1.0, np.nan], x=[[1.0], [2.0]])
        with pytest.raises(UsageError):
            Dataset(y=[1.0, 2.0], x=[[np.inf], [2.0]])

    def test_immutable_arrays(self):
        ds = Dataset(y=[1.0, 2.0], x=[[1.0], [2.0]])
        with pytest.raises(ValueError):
            ds.y[0] = 5.0
        with pytest.raises(ValueError):
            ds.x[0, 0] = 5.0

    def test_standardized_flag_validated(self):
        with pytest.raises(UsageError):
            Dataset(y=[1.0, 2.0, 3.0], x=[[1.0], [2.0], [4.0]], standardized=True)


class TestGenerateLinear:
    def test_zero_signal_zero_noise(self):
        cfg = SimConfig(n=4, p=1, beta_true=[0.0], error_dist=GaussianErrors(0.0))
        ds = generate_linear(cfg)
        assert np.all(ds.y == 0.0)

    def test_ols_recovers_slope(self):
        # law of large numbers: with n=1000 the regression slope is ~2
        cfg = SimConfig(n=1000, p=1, beta_true=[2.0], error_dist=GaussianErrors(1.0), seed=42)
        ds = generate_linear(cfg)
        slope = float(ds.x[:, 0] @ ds.y / (ds.x[:, 0] @ ds.x[:, 0]))
        assert abs(slope - 2.0) < 0.1

    def test_laplace_variance(self):
        # Var(Laplace(b)) = 2 b^2
        cfg = SimConfig(
            n=10_000, p=1, beta_true=[0.0], error_dist=DoubleExponentialErrors(1.0), seed=3
        )
        ds = generate_linear(cfg)
        assert abs(np.var(ds.y) - 2.0) < 0.2

    def test_moment_checks(self):
        # empirical mean of eps within 4 sd/sqrt(n), variance within 10%
        n = 10_000
        for dist in [GaussianErrors(1.5), DoubleExponentialErrors(0.7)]:
            cfg = SimConfig(n=n, p=1, beta_true=[0.0], error_dist=dist, seed=11)
            eps = generate_linear(cfg).y
            sd = np.sqrt(dist.variance)
            assert abs(eps.mean()) < 4 * sd / np.sqrt(n)
            assert abs(np.var(eps) - dist.variance) < 0.1 * dist.variance

    def test_seed_determinism(self):
        cfg = SimConfig(n=20, p=3, beta_true=[1, 0, -1], error_dist=GaussianErrors(1.0), seed=5)
        a, b = generate_linear(cfg), generate_linear(cfg)
        assert np.array_equal(a.y, b.y) and np.array_equal(a.x, b.x)

    def test_equicorrelated_design(self):
        cfg = SimConfig(
            n=20_000, p=3, beta_true=[0, 0, 0],
            error_dist=GaussianErrors(0.0),
            design_covariance=("equicorrelated", 0.5), seed=8,
        )
        ds = generate_linear(cfg)
        corr = np.corrcoef(ds.x, rowvar=False)
        off = corr[np.triu_indices(3, 1)]
        assert np.allclose(off, 0.5, atol=0.03)

    def test_non_pd_covariance_rejected(self):
        bad = np.array([[1.0, 2.0], [2.0, 1.0]])  # eigenvalues 3, -1
        cfg = SimConfig(
            n=10, p=2, beta_true=[0, 0], error_dist=GaussianErrors(1.0),
            design_covariance=bad,
        )
        with pytest.raises(UsageError, match="positive definite"):
            generate_linear(cfg)

    def test_beta_length_validated(self):
        with pytest.raises(UsageError):
            SimConfig(n=10, p=2, beta_true=[1.0], error_dist=GaussianErrors(1.0))


class TestStandardize:
    def test_simple_column(self):
        # [1,2,3]: mean 2, centered [-1,0,1]; sample sd (ddof=1) is already 1
        ds = Dataset(y=[0.0, 0.0, 0.0], x=[[1.0], [2.0], [3.0]])
        out = standardize(ds)
        assert out.column_means[0] == 2.0
        assert np.allclose(out.x[:, 0], [-1.0, 0.0, 1.0])
        assert abs(out.x[:, 0].std(ddof=1) - 1.0) < 1e-10

    def test_idempotent(self):
        rng = np.random.default_rng(0)
        ds = standardize(Dataset(y=rng.normal(size=10), x=rng.normal(size=(10, 3))))
        assert standardize(ds) is ds

    def test_constant_column_flagged_not_scaled(self):
        ds = Dataset(y=[1.0, 2.0, 3.0], x=[[5.0, 1.0], [5.0, 2.0], [5.0, 4.0]])
        out = standardize(ds)
        assert out.constant_columns[0] and not out.constant_columns[1]
        assert out.column_scales[0] == 1.0

    def test_response_centered(self):
        ds = Dataset(y=[1.0, 3.0, 5.0], x=[[1.0], [2.0], [3.0]])
        out = standardize(ds)
        assert out.y_mean == 3.0
        assert abs(out.y.mean()) < 1e-12

    def test_destandardized_predictions(self):
        rng = np.random.default_rng(1)
        raw = Dataset(y=rng.normal(size=30), x=rng.normal(2.0, 3.0, size=(30, 4)))
        ds = standardize(raw)
        beta = rng.normal(size=4)
        intercept, beta_orig = destandardize_coefficients(ds, beta)
        pred_std = ds.x @ beta + ds.y_mean
        pred_orig = raw.x @ beta_orig + intercept
        assert np.max(np.abs(pred_std - pred_orig)) < 1e-10


class TestFolds:
    def test_divisible_case(self):
        plan = make_folds(10, 5, seed=0)
        assert plan.d == 2
        for v in range(1, 6):
            assert plan.pseudo_indices(v).size == 8

    def test_leave_one_out(self):
        plan = make_folds(10, 10, seed=0)
        assert plan.d == 1
        assert all(plan.block_indices(v).size == 1 for v in range(1, 11))

    def test_determinism(self):
        a = make_folds(37, 5, seed=9)
        b = make_folds(37, 5, seed=9)
        assert np.array_equal(a.block_assignments, b.block_assignments)

    def test_partition_property(self):
        plan = make_folds(23, 4, seed=2)
        seen = np.concatenate([plan.block_indices(v) for v in range(1, 5)])
        assert sorted(seen.tolist()) == list(range(23))
        sizes = [plan.block_indices(v).size for v in range(1, 5)]
        assert max(sizes) - min(sizes) <= 1
        assert plan.d == 23 // 4

    def test_invalid_v(self):
        with pytest.raises(UsageError):
            make_folds(5, 6, seed=0)
        with pytest.raises(UsageError):
            make_folds(5, 1, seed=0)

    def test_subset_rows(self):
        rng = np.random.default_rng(4)
        ds = Dataset(y=rng.normal(size=12), x=rng.normal(size=(12, 2)))
        plan = make_folds(12, 3, seed=1)
        pseudo = subset(ds, plan.pseudo_indices(2))
        assert pseudo.n == 8
        rows = plan.pseudo_indices(2)
        assert np.array_equal(pseudo.y, ds.y[rows])


class TestCsv:
    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(7)
        ds = Dataset(y=rng.normal(size=9), x=rng.normal(size=(9, 4)) * 1e-7)
        path = tmp_path / "ds.csv"
        save_csv(ds, path)
        back = load_csv(path)
        assert np.array_equal(back.y, ds.y)
        assert np.array_equal(back.x, ds.x)

    def test_hand_written_file(self, tmp_path):
        path = tmp_path / "tiny.csv"
        path.write_text("y,x1,x2\n1,2,3\n-4,5.5,6\n0,0,1\n")
        ds = load_csv(path)
        assert np.array_equal(ds.y, [1.0, -4.0, 0.0])
        assert np.array_equal(ds.x, [[2.0, 3.0], [5.5, 6.0], [0.0, 1.0]])

    def test_response_by_name(self, tmp_path):
        path = tmp_path / "named.csv"
        path.write_text("a,resp,b\n1,10,2\n3,20,4\n")
        ds = load_csv(path, response="resp")
        assert np.array_equal(ds.y, [10.0, 20.0])
        assert np.array_equal(ds.x, [[1.0, 2.0], [3.0, 4.0]])

    def test_bad_cell_names_location(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("y,x1\n1,2\n3,oops\n")
        with pytest.raises(CsvParseError, match=r"row 3, column 2"):
            load_csv(path)

    def test_ragged_row(self, tmp_path):
        path = tmp_path / "ragged.csv"
        path.write_text("y,x1,x2\n1,2,3\n4,5\n")
        with pytest.raises(CsvParseError, match=r"row 3 has 2 fields, expected 3"):
            load_csv(path)
