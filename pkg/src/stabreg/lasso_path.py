"""Lasso solution paths by cyclic coordinate descent, indexed by L1 norm.

The objective is ``||y - x @ beta||^2 + lam * ||beta||_1`` (no 1/2 or 1/n
factors), so the KKT conditions read ``2 * x_j' (y - x beta) = lam * sign(beta_j)``
on the active set and ``|2 * x_j' (y - x beta)| <= lam`` off it, and the
soft-threshold level is ``lam / 2``.  Paths are fit on a descending log-spaced
lambda grid with warm starts, and each solution is indexed by
``tau = ||beta||_1`` so estimates from different datasets can be aligned.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .datasets import Dataset
from .errors import NumericalError, UsageError

logger = logging.getLogger(__name__)

_TAU_MONOTONE_TOL = 1e-8


class LassoConvergenceError(NumericalError):
    """Coordinate descent hit the sweep cap with the KKT residual too large."""

    def __init__(self, lam: float, beta: np.ndarray, kkt_residual: float, sweeps: int):
        super().__init__(
            f"lasso did not converge at lambda={lam:g}: KKT residual "
            f"{kkt_residual:.3e} after {sweeps} sweeps"
        )
        self.lam = lam
        self.beta = beta
        self.kkt_residual = kkt_residual
        self.sweeps = sweeps


def lasso_objective(ds: Dataset, beta: np.ndarray, lam: float) -> float:
    r = ds.y - ds.x @ beta
    return float(r @ r + lam * np.sum(np.abs(beta)))


def lambda_max(ds: Dataset) -> float:
    """Smallest lambda whose solution is identically zero: 2 * max_j |x_j' y|."""
    return float(2.0 * np.max(np.abs(ds.x.T @ ds.y)))


def kkt_residual(ds: Dataset, beta: np.ndarray, lam: float) -> float:
    """Max violation of the subgradient conditions at ``beta``.

    Zero coordinates contribute ``max(|2 x_j' r| - lam, 0)``; active ones
    contribute ``|2 x_j' r - lam sign(beta_j)|``.  Coordinates of zero-norm
    (constant) columns are ignored: their fit contribution is identically 0.
    """
    g = 2.0 * (ds.x.T @ (ds.y - ds.x @ beta))
    norms = np.einsum("ij,ij->j", ds.x, ds.x)
    live = norms > 0.0
    active = (beta != 0.0) & live
    inactive = (~active) & live
    viol = 0.0
    if np.any(inactive):
        viol = max(viol, float(np.max(np.abs(g[inactive]) - lam)))
    if np.any(active):
        viol = max(viol, float(np.max(np.abs(g[active] - lam * np.sign(beta[active])))))
    return max(viol, 0.0)


def _sweep(gram, s, beta, lam_half, col_norms, idx):
    """One pass of coordinate updates over ``idx``; returns max |change|.

    ``s`` is maintained as ``x' (y - x beta)`` via Gram-row updates (the Gram
    matrix is symmetric, so rows are its columns and stay contiguous).
    """
    delta = 0.0
    for j in idx:
        cj = col_norms[j]
        bj = beta[j]
        z = s[j] + cj * bj
        az = abs(z) - lam_half
        new = 0.0 if az <= 0.0 else (az if z > 0.0 else -az) / cj
        step = new - bj
        if step != 0.0:
            s -= gram[j] * step
            beta[j] = new
            if step < 0.0:
                step = -step
            if step > delta:
                delta = step
    return delta


def _polish(gram, xty, lam, beta, kkt_tol, live_mask):
    """Active-set solve seeded with the support and signs of ``beta``.

    On a trial support S with signs s, the restricted minimizer satisfies
    ``G_SS b = q_S - (lam/2) s``.  Sign-inconsistent coordinates are dropped,
    the most KKT-violating excluded coordinate is added, and the solve is
    repeated until the pattern is consistent (or an update cap is hit).
    Returns the polished vector, or None when no consistent pattern emerged.
    """
    p = len(xty)
    signs = np.sign(beta) * live_mask
    for _ in range(4 * p):
        support = np.flatnonzero(signs)
        if support.size == 0:
            g = 2.0 * xty
        else:
            try:
                b = np.linalg.solve(
                    gram[np.ix_(support, support)],
                    xty[support] - 0.5 * lam * signs[support],
                )
            except np.linalg.LinAlgError:
                return None
            bad = np.sign(b) != signs[support]
            if np.any(bad):
                signs[support[bad]] = 0.0
                continue
            g = 2.0 * (xty - gram[:, support] @ b)
        off = live_mask & (signs == 0.0)
        viol = np.abs(g) - lam
        viol[~off] = -np.inf
        j = int(np.argmax(viol))
        if viol[j] > kkt_tol:
            signs[j] = np.sign(g[j])
            continue
        polished = np.zeros(p)
        if support.size:
            polished[support] = b
        return polished
    return None


_INNER_PASS_CAP = 3


def _cd_solve(ds, gram, xty, col_norms, lam, beta0, tol, max_sweeps, kkt_tol):
    """Coordinate descent with active-set refinement; returns (beta, sweeps).

    After each full pass (plus a bounded number of support-restricted
    passes), the iterate's support/sign pattern seeds an exact active-set
    solve; the result is accepted as soon as it passes the KKT certificate
    recomputed from the residual.  This keeps cyclic descent as the workhorse
    while avoiding its slow crawl on ill-conditioned supports.
    """
    p = gram.shape[0]
    live_mask = col_norms > 0.0
    live = np.flatnonzero(live_mask).tolist()
    beta = np.zeros(p) if beta0 is None else np.array(beta0, dtype=float)
    beta[~live_mask] = 0.0
    s = xty - gram @ beta
    lam_half = lam / 2.0
    sweeps = 0
    while sweeps < max_sweeps:
        delta = _sweep(gram, s, beta, lam_half, col_norms, live)
        sweeps += 1
        # refine on the current support before certifying
        support = np.flatnonzero(beta != 0.0).tolist()
        passes = 0
        while sweeps < max_sweeps and passes < _INNER_PASS_CAP and support:
            d_in = _sweep(gram, s, beta, lam_half, col_norms, support)
            sweeps += 1
            passes += 1
            if d_in < tol:
                break
        polished = _polish(gram, xty, lam, beta, kkt_tol, live_mask)
        if polished is not None and kkt_residual(ds, polished, lam) <= kkt_tol:
            return polished, sweeps
        if delta < tol:
            # definitional KKT check (recomputed from the residual, not the
            # incrementally maintained gradient)
            if kkt_residual(ds, beta, lam) <= kkt_tol:
                return beta, sweeps
            s = ds.x.T @ (ds.y - ds.x @ beta)
    resid = kkt_residual(ds, beta, lam)
    if resid <= kkt_tol:
        return beta, sweeps
    raise LassoConvergenceError(lam, beta, resid, sweeps)


def lasso_fit(
    ds: Dataset,
    lam: float,
    warm_start: np.ndarray | None = None,
    *,
    tol: float = 1e-9,
    max_sweeps: int = 10_000,
    kkt_tol: float = 1e-6,
) -> np.ndarray:
    """Minimize ``||y - x beta||^2 + lam ||beta||_1`` by coordinate descent.

    Converges when the max-abs coefficient change in a sweep drops below
    ``tol`` and the KKT residual is at most ``kkt_tol``; raises
    :class:`LassoConvergenceError` (carrying the last iterate and its KKT
    residual) if the sweep cap is hit first.
    """
    if lam < 0:
        raise UsageError(f"lambda must be >= 0, got {lam}")
    gram = ds.x.T @ ds.x
    xty = ds.x.T @ ds.y
    col_norms = np.diag(gram).copy()
    beta, _ = _cd_solve(ds, gram, xty, col_norms, lam, warm_start, tol, max_sweeps, kkt_tol)
    return beta


@dataclass(frozen=True)
class LassoPath:
    """Per-lambda solutions with their L1-norm index tau.

    ``lambdas`` is descending; ``taus`` is nondecreasing up to solver
    tolerance.  The first point is at lambda_max, where the solution is
    exactly zero.
    """

    lambdas: np.ndarray
    betas: np.ndarray
    taus: np.ndarray
    objective_values: np.ndarray

    @property
    def tau_max(self) -> float:
        return float(self.taus[-1])


def fit_path(
    ds: Dataset,
    grid_size: int = 100,
    floor_ratio: float = 1e-3,
    *,
    tol: float = 1e-9,
    max_sweeps: int = 10_000,
    kkt_tol: float = 1e-6,
) -> LassoPath:
    """Fit the Lasso on a log-spaced lambda grid with warm starts.

    The grid runs from lambda_max down to ``lambda_max * floor_ratio``.  A
    dataset with ``lambda_max == 0`` (zero response) yields an all-zero path.
    """
    if grid_size < 2:
        raise UsageError(f"grid_size must be >= 2, got {grid_size}")
    lam_max = lambda_max(ds)
    if lam_max == 0.0:
        lambdas = np.zeros(grid_size)
    else:
        lambdas = np.geomspace(lam_max, lam_max * floor_ratio, grid_size)
        lambdas[0] = lam_max  # guard against geomspace endpoint rounding
    gram = ds.x.T @ ds.x
    xty = ds.x.T @ ds.y
    col_norms = np.diag(gram).copy()
    p = ds.p
    betas = np.empty((grid_size, p))
    taus = np.empty(grid_size)
    objs = np.empty(grid_size)
    beta = np.zeros(p)
    for k, lam in enumerate(lambdas):
        try:
            beta, _ = _cd_solve(ds, gram, xty, col_norms, lam, beta, tol, max_sweeps, kkt_tol)
        except LassoConvergenceError as exc:
            raise LassoConvergenceError(lam, exc.beta, exc.kkt_residual, exc.sweeps) from None
        betas[k] = beta
        taus[k] = np.sum(np.abs(beta))
        objs[k] = lasso_objective(ds, beta, lam)
    drops = np.diff(taus)
    if drops.size and drops.min() < -_TAU_MONOTONE_TOL:
        k = int(np.argmin(drops))
        logger.warning(
            "tau decreased by %.3e between lambda=%g and lambda=%g",
            -drops.min(), lambdas[k], lambdas[k + 1],
        )
    return LassoPath(
        lambdas=lambdas, betas=betas, taus=taus, objective_values=objs
    )


def interpolate_at_tau(path: LassoPath, tau: float) -> np.ndarray:
    """Coefficients with L1 norm exactly ``tau``, interpolated along the path.

    Stored knots are returned verbatim.  Between knots the coefficient
    vectors are interpolated linearly in tau; because bracketing solutions
    may disagree in sign on a coordinate, the interpolant is rescaled so its
    L1 norm equals the requested tau.  No extrapolation beyond the path.
    """
    taus = path.taus
    if tau < 0 or tau > taus[-1] * (1 + 1e-12) + 1e-15:
        raise UsageError(f"tau={tau:g} outside path range [0, {taus[-1]:g}]")
    tau = min(tau, float(taus[-1]))
    if tau == 0.0:
        return np.zeros(path.betas.shape[1])
    j = int(np.searchsorted(taus, tau, side="left"))
    if taus[j] == tau:
        return path.betas[j].copy()
    if j == 0:
        raise UsageError(f"tau={tau:g} below the first path knot tau={taus[0]:g}")
    t0, t1 = taus[j - 1], taus[j]
    w = (tau - t0) / (t1 - t0)
    beta = (1.0 - w) * path.betas[j - 1] + w * path.betas[j]
    l1 = np.sum(np.abs(beta))
    if l1 <= 0.0:
        raise NumericalError(f"degenerate interpolation segment at tau={tau:g}")
    return beta * (tau / l1)


def path_to_csv(path: LassoPath, file) -> None:
    """Write one row per lambda: lambda, tau, objective, then p coefficients."""
    import csv as _csv

    p = path.betas.shape[1]
    writer = _csv.writer(file)
    writer.writerow(["lambda", "tau", "objective"] + [f"b{j + 1}" for j in range(p)])
    for k in range(path.lambdas.shape[0]):
        row = [
            f"{path.lambdas[k]:.17g}",
            f"{path.taus[k]:.17g}",
            f"{path.objective_values[k]:.17g}",
        ]
        row += [f"{v:.17g}" for v in path.betas[k]]
        writer.writerow(row)
