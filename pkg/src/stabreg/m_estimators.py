"""Unpenalized M-estimators: OLS, LAD, and Huber fits.

Losses are parametrized so the squared family is ``rho(r) = r^2`` (matching
the residual sum of squares, with no 1/2), absolute is ``|r|``, and Huber is
the blend that agrees with ``r^2`` inside ``[-delta, delta]``:

    rho_huber(r) = r^2                  if |r| <= delta
                 = 2*delta*|r| - delta^2  otherwise

LAD is solved by smoothed IRLS with weights ``1/max(|r|, eta)`` and a
continuation schedule eta: 1e-2 -> 1e-8, then verified by one more
continuation step at eta/10; this is simple and accurate at desk scale, and
its accuracy is policed in the tests by a basic-solution oracle.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .datasets import Dataset
from .errors import NumericalError, UsageError

_RANK_TOL = 1e-10

LAD_ETA_SCHEDULE = tuple(10.0 ** (-k) for k in range(2, 9))  # 1e-2 .. 1e-8


class MEstimationError(NumericalError):
    """IRLS failed to converge; carries the best iterate found."""

    def __init__(self, message: str, beta: np.ndarray):
        super().__init__(message)
        self.beta = beta


class RankDeficientError(UsageError):
    """Design matrix is rank deficient at the stated tolerance."""


@dataclass(frozen=True)
class LossSpec:
    """Loss family for M-estimation: "squared", "absolute", or "huber"."""

    family: str
    huber_delta: float | None = None

    def __post_init__(self):
        if self.family not in ("squared", "absolute", "huber"):
            raise UsageError(f"unknown loss family {self.family!r}")
        if self.family == "huber":
            if self.huber_delta is None or self.huber_delta <= 0:
                raise UsageError("huber loss requires huber_delta > 0")
        elif self.huber_delta is not None:
            raise UsageError("huber_delta is only valid for the huber family")

    def rho(self, r):
        """Pointwise loss value; convex, even, minimized at 0."""
        r = np.asarray(r, dtype=float)
        if self.family == "squared":
            return r * r
        if self.family == "absolute":
            return np.abs(r)
        d = self.huber_delta
        a = np.abs(r)
        return np.where(a <= d, r * r, 2.0 * d * a - d * d)


@dataclass(frozen=True)
class FitResult:
    beta_hat: np.ndarray
    norm: float
    iterations: int
    converged: bool
    objective: float


def _objective(loss: LossSpec, ds: Dataset, beta: np.ndarray) -> float:
    return float(np.sum(loss.rho(ds.y - ds.x @ beta)))


def _check_shape(ds: Dataset):
    if ds.n <= ds.p:
        raise UsageError(f"need n > p, got n={ds.n}, p={ds.p}")


def fit_ols(ds: Dataset) -> FitResult:
    """Least squares via SVD; rejects designs with relative rank below 1e-10."""
    _check_shape(ds)
    beta, _, rank, sv = np.linalg.lstsq(ds.x, ds.y, rcond=_RANK_TOL)
    if rank < ds.p:
        raise RankDeficientError(
            f"design is rank deficient: smallest singular value below "
            f"{_RANK_TOL:g} * largest ({sv[-1]:.3e} vs {sv[0]:.3e})"
        )
    return FitResult(
        beta_hat=beta,
        norm=float(np.linalg.norm(beta)),
        iterations=1,
        converged=True,
        objective=_objective(LossSpec("squared"), ds, beta),
    )


def _weighted_ls(ds: Dataset, w: np.ndarray) -> np.ndarray:
    xtw = ds.x.T * w
    return cho_solve(cho_factor(xtw @ ds.x, check_finite=False), xtw @ ds.y,
                     check_finite=False)


def _irls(ds, weight_fn, objective_fn, beta, tol=1e-10, max_iter=100):
    """Fixed-point iteration beta <- argmin sum w(r_i) r_i^2.

    Stops on a small coefficient change or when the objective has stalled
    (relative change below 1e-9 on two consecutive iterations, the regime
    where further reweighting no longer moves the fit).  Returns
    (beta, iters, converged_by_coefficients).
    """
    obj = objective_fn(ds.y - ds.x @ beta)
    stalled = 0
    for it in range(1, max_iter + 1):
        r = ds.y - ds.x @ beta
        new = _weighted_ls(ds, weight_fn(r))
        done = np.max(np.abs(new - beta)) <= tol * (1.0 + np.max(np.abs(new)))
        beta = new
        if done:
            return beta, it, True
        new_obj = objective_fn(ds.y - ds.x @ beta)
        stalled = stalled + 1 if abs(new_obj - obj) <= 1e-9 * max(abs(obj), 1.0) else 0
        obj = new_obj
        if stalled >= 2:
            return beta, it, True
    return beta, max_iter, False


def fit_lad(
    ds: Dataset,
    *,
    eta_schedule=LAD_ETA_SCHEDULE,
    max_iter_per_level: int = 40,
    verify_rtol: float = 1e-6,
) -> FitResult:
    """Least absolute deviations by smoothed IRLS with continuation.

    Each smoothing level eta minimizes the Huber-type surrogate with weights
    ``1/max(|r|, eta)``; eta shrinks from 1e-2 to 1e-8.  The final objective
    must agree to ``verify_rtol`` (relative) with a verification pass run at
    eta/10, else :class:`MEstimationError` is raised with the best iterate.
    """
    _check_shape(ds)
    lad_obj = lambda r: float(np.sum(np.abs(r)))

    def smooth_weights(eta):
        return lambda r: 1.0 / np.maximum(np.abs(r), eta)

    beta = fit_ols(ds).beta_hat
    total_iters = 1
    for eta in eta_schedule:
        beta, iters, _ = _irls(
            ds, smooth_weights(eta), lad_obj, beta, max_iter=max_iter_per_level
        )
        total_iters += iters
    obj = _objective(LossSpec("absolute"), ds, beta)
    eta_final = eta_schedule[-1]
    eta_check = eta_final / 10.0
    cap = max_iter_per_level
    beta_check, obj_check = beta, obj
    for _ in range(3):
        beta_check, iters, _ = _irls(
            ds, smooth_weights(eta_check), lad_obj, beta, max_iter=cap
        )
        total_iters += iters
        obj_check = _objective(LossSpec("absolute"), ds, beta_check)
        if abs(obj - obj_check) <= verify_rtol * max(obj, obj_check) + 1e-12:
            if obj_check < obj:
                beta, obj = beta_check, obj_check
            return FitResult(
                beta_hat=beta,
                norm=float(np.linalg.norm(beta)),
                iterations=total_iters,
                converged=True,
                objective=obj,
            )
        # verification disagrees: the final level had not settled, so refine
        # it with a larger budget and verify again
        if obj_check < obj:
            beta, obj = beta_check, obj_check
        cap *= 4
        beta, iters, _ = _irls(ds, smooth_weights(eta_final), lad_obj, beta, max_iter=cap)
        total_iters += iters
        obj = _objective(LossSpec("absolute"), ds, beta)
    raise MEstimationError(
        f"LAD continuation did not stabilize: objective {obj:.12g} vs "
        f"{obj_check:.12g} at eta={eta_check:g}",
        beta_check if obj_check < obj else beta,
    )


def _fit_huber(ds: Dataset, delta: float, max_iter: int = 500) -> FitResult:
    # IRLS weight for rho(r) = r^2 inside, 2*delta*|r| - delta^2 outside:
    # w = rho'(r)/(2r) = 1 inside, delta/|r| outside.
    beta = fit_ols(ds).beta_hat

    def weights(r):
        a = np.abs(r)
        return np.where(a <= delta, 1.0, delta / np.maximum(a, 1e-300))

    loss = LossSpec("huber", huber_delta=delta)
    obj = lambda r: float(np.sum(loss.rho(r)))
    beta, iters, ok = _irls(ds, weights, obj, beta, max_iter=max_iter)
    if not ok:
        raise MEstimationError(f"huber IRLS did not converge in {max_iter} iterations", beta)
    return FitResult(
        beta_hat=beta,
        norm=float(np.linalg.norm(beta)),
        iterations=iters + 1,
        converged=True,
        objective=_objective(loss, ds, beta),
    )


def fit_m(ds: Dataset, loss: LossSpec) -> FitResult:
    """M-estimator ``argmin_beta sum_i rho(y_i - x_i' beta)`` for the given loss."""
    if loss.family == "squared":
        return fit_ols(ds)
    if loss.family == "absolute":
        return fit_lad(ds)
    return _fit_huber(ds, loss.huber_delta)
