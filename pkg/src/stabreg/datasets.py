"""Regression datasets: construction, standardization, folds, CSV I/O.

A :class:`Dataset` is immutable after construction (arrays are marked
read-only) so it can be shared across concurrent workers.  Standardization
centers the response and centers/scales the predictor columns, recording
enough metadata to map coefficients back to original units.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .distributions import ErrorDistribution
from .errors import UsageError

_CONST_TOL = 1e-12


class CsvParseError(UsageError):
    """CSV cell or row could not be parsed; carries 1-based file location."""


def _freeze(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a, dtype=float)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class Dataset:
    """Response vector ``y`` (length n) and design matrix ``x`` (n x p).

    When ``standardized`` is set, every non-constant column of ``x`` has
    sample mean 0 and sample standard deviation 1 (ddof=1), constant columns
    are flagged in ``constant_columns`` (scale left at 1), and ``y`` has been
    centered by ``y_mean``.
    """

    y: np.ndarray
    x: np.ndarray
    standardized: bool = False
    column_means: np.ndarray | None = None
    column_scales: np.ndarray | None = None
    constant_columns: np.ndarray | None = None
    y_mean: float = 0.0

    def __post_init__(self):
        y = _freeze(np.asarray(self.y, dtype=float).reshape(-1))
        x = np.asarray(self.x, dtype=float)
        if x.ndim != 2:
            raise UsageError(f"x must be 2-d, got shape {x.shape}")
        x = _freeze(x)
        n, p = x.shape
        if y.shape[0] != n:
            raise UsageError(f"y has {y.shape[0]} rows but x has {n}")
        if n < 2 or p < 1:
            raise UsageError(f"need n >= 2 and p >= 1, got n={n}, p={p}")
        if not np.all(np.isfinite(y)) or not np.all(np.isfinite(x)):
            raise UsageError("dataset contains non-finite entries")
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "x", x)
        for name in ("column_means", "column_scales"):
            v = getattr(self, name)
            if v is not None:
                v = _freeze(np.asarray(v, dtype=float).reshape(-1))
                if v.shape[0] != p:
                    raise UsageError(f"{name} has length {v.shape[0]}, expected {p}")
                object.__setattr__(self, name, v)
        cc = self.constant_columns
        if cc is not None:
            cc = np.asarray(cc, dtype=bool).reshape(-1)
            if cc.shape[0] != p:
                raise UsageError(f"constant_columns has length {cc.shape[0]}, expected {p}")
            cc.flags.writeable = False
            object.__setattr__(self, "constant_columns", cc)
        if self.standardized:
            self._check_standardized()

    def _check_standardized(self):
        keep = ~self.constant_columns if self.constant_columns is not None else slice(None)
        cols = self.x[:, keep]
        if cols.shape[1]:
            means = cols.mean(axis=0)
            sds = cols.std(axis=0, ddof=1)
            if np.max(np.abs(means)) >= 1e-10 or np.max(np.abs(sds - 1.0)) >= 1e-10:
                raise UsageError("standardized dataset violates mean-0 / sd-1 invariant")

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def p(self) -> int:
        return self.x.shape[1]


def standardize(ds: Dataset) -> Dataset:
    """Center/scale predictor columns and center the response.

    Idempotent: a standardized dataset is returned unchanged.  Constant
    columns are flagged, their scale is left at 1 (they center to zero and
    are skipped by the penalized solvers).
    """
    if ds.standardized:
        return ds
    means = ds.x.mean(axis=0)
    sds = ds.x.std(axis=0, ddof=1)
    constant = sds <= _CONST_TOL * (1.0 + np.abs(means))
    scales = np.where(constant, 1.0, sds)
    x = (ds.x - means) / scales
    y_mean = float(ds.y.mean())
    return Dataset(
        y=ds.y - y_mean,
        x=x,
        standardized=True,
        column_means=means,
        column_scales=scales,
        constant_columns=constant,
        y_mean=y_mean,
    )


def destandardize_coefficients(ds: Dataset, beta: np.ndarray) -> tuple[float, np.ndarray]:
    """Map coefficients fit on a standardized dataset back to original units.

    Returns ``(intercept, beta_original)`` such that
    ``x_raw @ beta_original + intercept`` reproduces the standardized-scale
    predictions ``x_std @ beta + y_mean``.
    """
    if not ds.standardized:
        raise UsageError("dataset is not standardized")
    beta = np.asarray(beta, dtype=float)
    beta_orig = beta / ds.column_scales
    intercept = ds.y_mean - float(ds.column_means @ beta_orig)
    return intercept, beta_orig


@dataclass(frozen=True)
class SimConfig:
    """Configuration for synthetic linear-model data ``y = x @ beta + eps``.

    ``design_covariance`` is "identity", ("equicorrelated", rho), or an
    explicit p x p positive-definite matrix.  Rows of ``x`` are i.i.d.
    N(0, covariance); errors are i.i.d. from ``error_dist``.
    """

    n: int
    p: int
    beta_true: np.ndarray
    error_dist: ErrorDistribution
    design_covariance: object = "identity"
    seed: int = 0

    def __post_init__(self):
        if self.n < 2 or self.p < 1:
            raise UsageError(f"need n >= 2 and p >= 1, got n={self.n}, p={self.p}")
        beta = np.asarray(self.beta_true, dtype=float).reshape(-1)
        if beta.shape[0] != self.p:
            raise UsageError(f"beta_true has length {beta.shape[0]}, expected p={self.p}")
        object.__setattr__(self, "beta_true", _freeze(beta))

    def covariance_cholesky(self) -> np.ndarray | None:
        """Lower Cholesky factor of the design covariance, or None for identity."""
        cov = self.design_covariance
        if isinstance(cov, str):
            if cov != "identity":
                raise UsageError(f"unknown covariance descriptor {cov!r}")
            return None
        if isinstance(cov, tuple) and len(cov) == 2 and cov[0] == "equicorrelated":
            rho = float(cov[1])
            if not -1.0 / max(self.p - 1, 1) < rho < 1.0:
                raise UsageError(f"equicorrelated rho={rho} is not positive definite for p={self.p}")
            mat = np.full((self.p, self.p), rho)
            np.fill_diagonal(mat, 1.0)
        else:
            mat = np.asarray(cov, dtype=float)
            if mat.shape != (self.p, self.p):
                raise UsageError(f"covariance has shape {mat.shape}, expected ({self.p}, {self.p})")
        try:
            return np.linalg.cholesky(mat)
        except np.linalg.LinAlgError as exc:
            raise UsageError("design covariance is not positive definite") from exc


def generate_linear(cfg: SimConfig) -> Dataset:
    """Draw a dataset from the linear model described by ``cfg``.

    Deterministic given ``cfg.seed``.
    """
    chol = cfg.covariance_cholesky()
    rng = np.random.default_rng(cfg.seed)
    x = rng.standard_normal((cfg.n, cfg.p))
    if chol is not None:
        x = x @ chol.T
    eps = cfg.error_dist.sample(rng, cfg.n)
    y = x @ cfg.beta_true + eps
    return Dataset(y=y, x=x)


@dataclass(frozen=True)
class FoldPlan:
    """Random partition of ``1..n`` into ``v_blocks`` blocks of near-equal size.

    ``block_assignments[i]`` is the 1-based block id of row i.  The pseudo
    dataset for block v is every row NOT in block v, so it has about n - d
    rows with ``d = floor(n / v_blocks)``.
    """

    v_blocks: int
    block_assignments: np.ndarray
    d: int = field(init=False)

    def __post_init__(self):
        ids = np.asarray(self.block_assignments, dtype=int)
        ids.flags.writeable = False
        object.__setattr__(self, "block_assignments", ids)
        n = ids.shape[0]
        v = self.v_blocks
        counts = np.bincount(ids, minlength=v + 1)[1:]
        if counts.min() < 1:
            raise UsageError("every block id in 1..V must appear")
        if counts.max() - counts.min() > 1:
            raise UsageError("block sizes differ by more than 1")
        object.__setattr__(self, "d", n // v)

    @property
    def n(self) -> int:
        return self.block_assignments.shape[0]

    def block_indices(self, v: int) -> np.ndarray:
        return np.flatnonzero(self.block_assignments == v)

    def pseudo_indices(self, v: int) -> np.ndarray:
        """Rows of the pseudo dataset for block v (complement of the block)."""
        return np.flatnonzero(self.block_assignments != v)


def make_folds(n: int, v: int, seed: int) -> FoldPlan:
    """Uniformly random partition into v blocks, deterministic given seed."""
    if not 2 <= v <= n:
        raise UsageError(f"need 2 <= v <= n, got v={v}, n={n}")
    perm = np.random.default_rng(seed).permutation(n)
    ids = np.empty(n, dtype=int)
    ids[perm] = np.arange(n) % v + 1
    return FoldPlan(v_blocks=v, block_assignments=ids)


def subset(ds: Dataset, rows: np.ndarray) -> Dataset:
    """Row subset of a dataset, keeping standardization metadata."""
    return Dataset(
        y=ds.y[rows],
        x=ds.x[rows],
        standardized=False,  # subset columns need not retain mean 0 / sd 1
        column_means=ds.column_means,
        column_scales=ds.column_scales,
        constant_columns=ds.constant_columns,
        y_mean=ds.y_mean,
    )


def save_csv(ds: Dataset, path, response_name: str = "y") -> None:
    """Write ``y`` and ``x`` as CSV with a header row.

    Response is the first column; floats carry 17 significant digits so the
    round trip through :func:`load_csv` is exact.
    """
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([response_name] + [f"x{j + 1}" for j in range(ds.p)])
        for i in range(ds.n):
            writer.writerow(
                [f"{ds.y[i]:.17g}"] + [f"{v:.17g}" for v in ds.x[i]]
            )


def load_csv(path, response: int | str = 0) -> Dataset:
    """Read a dataset written by :func:`save_csv` (or any headed numeric CSV).

    ``response`` selects the response column by 0-based index or header name;
    by convention it is the first column.  Parse failures raise
    :class:`CsvParseError` naming the 1-based (row, column) location
    (header = row 1).
    """
    with open(path, "r", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise CsvParseError(f"{path}: empty file") from None
        ncol = len(header)
        if ncol < 2:
            raise CsvParseError(f"{path}: need at least 2 columns, got {ncol}")
        if isinstance(response, str):
            if response not in header:
                raise CsvParseError(f"{path}: no column named {response!r}")
            resp_idx = header.index(response)
        else:
            resp_idx = int(response)
            if not 0 <= resp_idx < ncol:
                raise CsvParseError(f"{path}: response index {resp_idx} out of range")
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if len(row) != ncol:
                raise CsvParseError(
                    f"{path}: row {lineno} has {len(row)} fields, expected {ncol}"
                )
            vals = []
            for j, cell in enumerate(row):
                try:
                    vals.append(float(cell))
                except ValueError:
                    raise CsvParseError(
                        f"{path}: row {lineno}, column {j + 1} ({header[j]!r}): "
                        f"cannot parse {cell!r} as a number"
                    ) from None
            rows.append(vals)
    data = np.asarray(rows, dtype=float)
    if data.size == 0:
        raise CsvParseError(f"{path}: no data rows")
    y = data[:, resp_idx]
    x = np.delete(data, resp_idx, axis=1)
    return Dataset(y=y, x=x)
