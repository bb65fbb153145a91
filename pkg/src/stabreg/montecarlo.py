"""Monte Carlo verification of the limiting-norm predictions.

Replicates draw an isotropic Gaussian design and null signal (y = eps), fit
the requested M-estimator, and record the coefficient norm.  Replicate
randomness comes from ``numpy.random.SeedSequence(seed).spawn(R)``: child i
seeds replicate i, so runs are reproducible, replicates are independent, and
results do not depend on execution order.
"""
from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .datasets import Dataset
from .distributions import ErrorDistribution
from .errors import NumericalError, UsageError
from .m_estimators import LossSpec, fit_m
from .regime import RegimeSolution


@dataclass(frozen=True)
class MCSummary:
    """Replicate norms and their summary statistics for one configuration."""

    n: int
    p: int
    kappa: Fraction
    loss: LossSpec
    error_dist: ErrorDistribution
    replicates: int
    norm_mean: float
    norm_sd: float
    norm_se: float
    norms: np.ndarray           # (R,), NaN for failed replicates
    directions: np.ndarray      # (R, p) unit vectors, NaN rows where undefined
    converged: np.ndarray       # (R,) bool
    failures: int
    seed: int


@dataclass(frozen=True)
class AgreementReport:
    norm_mean: float
    norm_se: float
    r_theory: float
    z_score: float
    passed: bool                # |z| <= 3


def _one_replicate(args):
    n, p, loss, error_dist, child_seed = args
    rng = np.random.default_rng(child_seed)
    x = rng.standard_normal((n, p))
    eps = error_dist.sample(rng, n)
    try:
        fit = fit_m(Dataset(y=eps, x=x), loss)
    except NumericalError:
        return np.nan, np.full(p, np.nan), False
    beta = fit.beta_hat
    norm = fit.norm
    direction = beta / norm if norm > 0 else np.full(p, np.nan)
    return norm, direction, True


def run_norm_mc(
    n: int,
    p: int,
    loss: LossSpec,
    error_dist: ErrorDistribution,
    replicates: int,
    seed: int,
    *,
    jobs: int = 1,
) -> MCSummary:
    """R independent replicates of the null-signal fit; deterministic in seed."""
    if not (n > p >= 1):
        raise UsageError(f"need n > p >= 1, got n={n}, p={p}")
    if replicates < 2:
        raise UsageError(f"need at least 2 replicates, got {replicates}")
    children = np.random.SeedSequence(seed).spawn(replicates)
    args = [(n, p, loss, error_dist, child) for child in children]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_one_replicate, args))
    else:
        results = [_one_replicate(a) for a in args]
    norms = np.array([res[0] for res in results])
    directions = np.vstack([res[1] for res in results])
    converged = np.array([res[2] for res in results])
    ok = norms[converged]
    if ok.size < 2:
        raise NumericalError(f"only {ok.size} replicates converged out of {replicates}")
    mean = float(ok.mean())
    sd = float(ok.std(ddof=1))
    return MCSummary(
        n=n,
        p=p,
        kappa=Fraction(p, n),
        loss=loss,
        error_dist=error_dist,
        replicates=replicates,
        norm_mean=mean,
        norm_sd=sd,
        norm_se=sd / float(np.sqrt(ok.size)),
        norms=norms,
        directions=directions,
        converged=converged,
        failures=int(replicates - converged.sum()),
        seed=seed,
    )


def compare_theory_mc(
    summary: MCSummary, solution: RegimeSolution, *, allow_kappa_mismatch: bool = False
) -> AgreementReport:
    """z-score of the empirical mean norm against the analytic limit.

    The configurations must match (loss, error distribution, and kappa = p/n);
    passes at |z| <= 3.  ``allow_kappa_mismatch`` permits scoring against a
    solution solved at a different kappa, e.g. as a negative control.
    """
    if summary.loss != solution.loss:
        raise UsageError(f"loss mismatch: {summary.loss} vs {solution.loss}")
    if summary.error_dist != solution.error_dist:
        raise UsageError(
            f"error distribution mismatch: {summary.error_dist} vs {solution.error_dist}"
        )
    if not allow_kappa_mismatch and abs(float(summary.kappa) - solution.kappa) > 1e-12:
        raise UsageError(
            f"kappa mismatch: p/n = {float(summary.kappa):g} vs solver {solution.kappa:g}"
        )
    if summary.norm_se <= 0:
        raise UsageError("degenerate summary: zero standard error")
    z = (summary.norm_mean - solution.r) / summary.norm_se
    return AgreementReport(
        norm_mean=summary.norm_mean,
        norm_se=summary.norm_se,
        r_theory=solution.r,
        z_score=float(z),
        passed=bool(abs(z) <= 3.0),
    )


@dataclass(frozen=True)
class DirectionReport:
    coord_means_max: float
    coord_means_bound: float
    coord_means_ok: bool
    first_coord_sq_mean: float
    first_coord_sq_target: float
    first_coord_sq_bound: float
    first_coord_sq_ok: bool

    @property
    def passed(self) -> bool:
        return self.coord_means_ok and self.first_coord_sq_ok


def direction_uniformity_check(summary: MCSummary) -> DirectionReport:
    """Moment diagnostics for uniformity of beta/||beta|| on the sphere.

    Per-coordinate means should sit within 4/sqrt(R*p) of zero, and the mean
    of the first squared coordinate within 4 empirical standard errors of
    1/p.  For p = 1 the direction is a sign, so the second check becomes a
    frequency test of +1 vs -1 (same 4-sigma window around 1/2).
    """
    dirs = summary.directions[summary.converged]
    dirs = dirs[~np.isnan(dirs).any(axis=1)]
    r_eff = dirs.shape[0]
    if r_eff < 100:
        raise UsageError(f"need at least 100 usable replicates, got {r_eff}")
    p = summary.p
    coord_means = dirs.mean(axis=0)
    means_bound = 4.0 / np.sqrt(r_eff * p)
    means_max = float(np.max(np.abs(coord_means)))
    if p == 1:
        freq_plus = float(np.mean(dirs[:, 0] > 0))
        bound = 4.0 * np.sqrt(0.25 / r_eff)
        return DirectionReport(
            coord_means_max=means_max,
            coord_means_bound=float(means_bound),
            coord_means_ok=bool(means_max <= means_bound),
            first_coord_sq_mean=freq_plus,
            first_coord_sq_target=0.5,
            first_coord_sq_bound=float(bound),
            first_coord_sq_ok=bool(abs(freq_plus - 0.5) <= bound),
        )
    u1sq = dirs[:, 0] ** 2
    sq_mean = float(u1sq.mean())
    sq_bound = 4.0 * float(u1sq.std(ddof=1)) / np.sqrt(r_eff)
    return DirectionReport(
        coord_means_max=means_max,
        coord_means_bound=float(means_bound),
        coord_means_ok=bool(means_max <= means_bound),
        first_coord_sq_mean=sq_mean,
        first_coord_sq_target=1.0 / p,
        first_coord_sq_bound=sq_bound,
        first_coord_sq_ok=bool(abs(sq_mean - 1.0 / p) <= sq_bound),
    )
