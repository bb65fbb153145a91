"""Estimation-stability and cross-validation curves over the Lasso path.

The data are split once into V blocks.  For block v, a Lasso path is fit on
the pseudo dataset (all rows NOT in block v) and interpolated onto a common
grid of L1 norms tau.  With ``F_v(tau) = x @ beta_v(tau)`` evaluated on the
FULL design matrix,

    mhat(tau) = mean_v F_v(tau)
    that(tau) = (n - d)/d * mean_v ||F_v(tau) - mhat(tau)||^2      (delete-d
                jackknife-style variance estimate, d = floor(n/V))
    ES(tau)   = mean_v ||F_v(tau) - mhat(tau)||^2 / ||mhat(tau)||^2
              = d/(n - d) * that(tau) / ||mhat(tau)||^2

ES is left undefined (NaN) where ||mhat||^2 <= 1e-12, in particular at
tau = 0.  Z^2(tau) = ||mhat||^2 / that is exposed as a diagnostic; ES is its
scaled reciprocal.  CV error at tau is the mean squared held-out prediction
error using the same blocks.

Selection: tau_cv minimizes CV error (largest tau on ties); tau_escv is the
largest grid tau that minimizes ES among {tau <= tau_cv}.  Both models are
refit by interpolating the full-data path.
"""
from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .datasets import Dataset, FoldPlan, subset
from .errors import UsageError
from .lasso_path import LassoPath, fit_path, interpolate_at_tau

logger = logging.getLogger(__name__)

_MHAT_FLOOR = 1e-12
_ES_TIE_TOL = 1e-10
_SUPPORT_TOL = 1e-8


@dataclass(frozen=True)
class StabilityCurve:
    """ES and CV curves on a shared tau grid, plus their ingredients."""

    tau_grid: np.ndarray      # (G,)
    mhat: np.ndarray          # (G, n)
    that: np.ndarray          # (G,)
    es: np.ndarray            # (G,), NaN where ||mhat||^2 <= floor
    zsq: np.ndarray           # (G,), ||mhat||^2 / that, NaN where that == 0
    cv_error: np.ndarray      # (G,)
    v: int
    d: int

    @property
    def es_all_undefined(self) -> bool:
        return bool(np.all(np.isnan(self.es)))


@dataclass(frozen=True)
class SelectionResult:
    tau_cv: float
    tau_escv: float
    beta_cv: np.ndarray
    beta_escv: np.ndarray
    model_size_cv: int
    model_size_escv: int
    curves: StabilityCurve
    escv_fell_back_to_cv: bool = False


def _fit_fold(args):
    ds, plan, v, path_grid_size, floor_ratio = args
    pseudo = subset(ds, plan.pseudo_indices(v))
    return fit_path(pseudo, grid_size=path_grid_size, floor_ratio=floor_ratio)


def fold_estimates(
    ds: Dataset,
    plan: FoldPlan,
    tau_grid: np.ndarray | None = None,
    *,
    grid_size: int = 100,
    path_grid_size: int = 100,
    floor_ratio: float = 1e-3,
    tau_cap: float | None = None,
    jobs: int = 1,
) -> tuple[np.ndarray, np.ndarray]:
    """Per-fold coefficients interpolated onto a common tau grid.

    Returns ``(tau_grid, fold_betas)`` with ``fold_betas`` of shape (V, G, p).
    When ``tau_grid`` is None it is built as ``grid_size`` equispaced points
    from 0 to the smallest max-path-tau across folds (further capped by
    ``tau_cap`` if given, e.g. by the full-data path's reach).
    """
    if plan.n != ds.n:
        raise UsageError(f"fold plan is for n={plan.n}, dataset has n={ds.n}")
    largest_block = int(np.bincount(plan.block_assignments).max())
    if plan.n - largest_block < 2:
        raise UsageError("pseudo datasets must have at least 2 rows")
    args = [(ds, plan, v, path_grid_size, floor_ratio) for v in range(1, plan.v_blocks + 1)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            paths = list(pool.map(_fit_fold, args))
    else:
        paths = [_fit_fold(a) for a in args]
    if tau_grid is None:
        tau_max = min(p.tau_max for p in paths)
        if tau_cap is not None:
            tau_max = min(tau_max, tau_cap)
        tau_grid = np.linspace(0.0, tau_max, grid_size)
    else:
        tau_grid = np.asarray(tau_grid, dtype=float)
    fold_betas = np.empty((plan.v_blocks, tau_grid.shape[0], ds.p))
    for i, path in enumerate(paths):
        for g, tau in enumerate(tau_grid):
            fold_betas[i, g] = interpolate_at_tau(path, tau)
    return tau_grid, fold_betas


def _fitted_values(fold_betas: np.ndarray, ds: Dataset) -> np.ndarray:
    """F[v, g] = x @ beta_v(tau_g) on the full design; shape (V, G, n)."""
    return np.einsum("np,vgp->vgn", ds.x, fold_betas)


def compute_mhat(fold_betas: np.ndarray, ds: Dataset) -> np.ndarray:
    """Average fitted-mean vectors, shape (G, n)."""
    return _fitted_values(fold_betas, ds).mean(axis=0)


def compute_that(fold_betas: np.ndarray, ds: Dataset, plan: FoldPlan) -> np.ndarray:
    """(n-d)/d times the mean squared deviation of fold fits from their mean."""
    fits = _fitted_values(fold_betas, ds)
    dev = fits - fits.mean(axis=0, keepdims=True)
    mean_dev = np.einsum("vgn,vgn->g", dev, dev) / fold_betas.shape[0]
    n, d = plan.n, plan.d
    return (n - d) / d * mean_dev


def es_curve(
    fold_betas: np.ndarray, ds: Dataset, plan: FoldPlan
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """ES values on the grid, with diagnostics.

    Returns ``(es, zsq, mhat, that)``.  ES and Z^2 are NaN where undefined.
    An all-NaN ES curve signals that selection must fall back to CV.
    """
    fits = _fitted_values(fold_betas, ds)
    mhat = fits.mean(axis=0)
    dev = fits - mhat[None]
    v = fold_betas.shape[0]
    mean_dev = np.einsum("vgn,vgn->g", dev, dev) / v
    n, d = plan.n, plan.d
    that = (n - d) / d * mean_dev
    msq = np.einsum("gn,gn->g", mhat, mhat)
    defined = msq > _MHAT_FLOOR
    es = np.full(msq.shape, np.nan)
    es[defined] = mean_dev[defined] / msq[defined]
    zsq = np.full(msq.shape, np.nan)
    pos = that > 0.0
    zsq[pos] = msq[pos] / that[pos]
    if not np.any(defined):
        logger.warning("ES undefined on the whole grid (||mhat|| ~ 0); selection falls back to CV")
    return es, zsq, mhat, that


def cv_curve(
    ds: Dataset,
    plan: FoldPlan,
    tau_grid: np.ndarray,
    fold_betas: np.ndarray | None = None,
) -> np.ndarray:
    """Mean held-out squared prediction error at each tau.

    Fold v's estimate (fit without block v) is scored on block v; the total
    is divided by n.  ``fold_betas`` may be passed to reuse the estimates
    already computed for the ES curve.
    """
    if fold_betas is None:
        tau_grid, fold_betas = fold_estimates(ds, plan, tau_grid)
    fits = _fitted_values(fold_betas, ds)
    err = np.zeros(tau_grid.shape[0])
    for v in range(1, plan.v_blocks + 1):
        rows = plan.block_indices(v)
        resid = ds.y[rows][None, :] - fits[v - 1][:, rows]
        err += np.einsum("gn,gn->g", resid, resid)
    return err / plan.n


def build_curves(
    ds: Dataset, plan: FoldPlan, tau_grid: np.ndarray, fold_betas: np.ndarray
) -> StabilityCurve:
    es, zsq, mhat, that = es_curve(fold_betas, ds, plan)
    cv = cv_curve(ds, plan, tau_grid, fold_betas)
    return StabilityCurve(
        tau_grid=tau_grid, mhat=mhat, that=that, es=es, zsq=zsq,
        cv_error=cv, v=plan.v_blocks, d=plan.d,
    )


def model_size(beta: np.ndarray, tol: float = _SUPPORT_TOL) -> int:
    return int(np.sum(np.abs(beta) > tol))


def select_escv(curves: StabilityCurve, path: LassoPath) -> SelectionResult:
    """Apply the ES-CV rule and refit both models on the full-data path.

    tau_cv is the CV minimizer (largest tau on exact ties).  tau_escv is the
    largest grid tau minimizing ES (within 1e-10) among taus <= tau_cv; if ES
    is undefined on that whole range, tau_escv falls back to tau_cv.
    """
    taus = curves.tau_grid
    cv = curves.cv_error
    cv_min = np.min(cv)
    i_cv = int(np.flatnonzero(cv == cv_min).max())
    tau_cv = float(taus[i_cv])

    eligible = np.flatnonzero(~np.isnan(curves.es[: i_cv + 1]))
    fell_back = eligible.size == 0
    if fell_back:
        logger.warning("no defined ES value at tau <= tau_cv; using tau_escv = tau_cv")
        i_escv = i_cv
    else:
        es_min = np.min(curves.es[eligible])
        i_escv = int(eligible[curves.es[eligible] <= es_min + _ES_TIE_TOL].max())
    tau_escv = float(taus[i_escv])

    beta_cv = interpolate_at_tau(path, tau_cv)
    beta_escv = interpolate_at_tau(path, tau_escv)
    return SelectionResult(
        tau_cv=tau_cv,
        tau_escv=tau_escv,
        beta_cv=beta_cv,
        beta_escv=beta_escv,
        model_size_cv=model_size(beta_cv),
        model_size_escv=model_size(beta_escv),
        curves=curves,
        escv_fell_back_to_cv=fell_back,
    )


def escv_select(
    ds: Dataset,
    v: int = 10,
    seed: int = 0,
    *,
    grid_size: int = 100,
    path_grid_size: int = 100,
    floor_ratio: float = 1e-3,
    jobs: int = 1,
) -> SelectionResult:
    """End-to-end ES-CV selection on a standardized dataset.

    The dataset must already be standardized (use :func:`stabreg.datasets.standardize`);
    the common tau grid is capped by the full-data path's reach so both
    selected models can be refit by interpolation.
    """
    from .datasets import make_folds, standardize

    ds = standardize(ds)
    plan = make_folds(ds.n, v, seed)
    path = fit_path(ds, grid_size=path_grid_size, floor_ratio=floor_ratio)
    tau_grid, fold_betas = fold_estimates(
        ds, plan,
        grid_size=grid_size,
        path_grid_size=path_grid_size,
        floor_ratio=floor_ratio,
        tau_cap=path.tau_max,
        jobs=jobs,
    )
    curves = build_curves(ds, plan, tau_grid, fold_betas)
    return select_escv(curves, path)
