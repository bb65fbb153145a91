"""Limiting-norm equations for M-estimators when p/n -> kappa in (0, 1).

With null signal and isotropic Gaussian design, the norm of the M-estimator
for loss rho converges to the r = r(kappa) that solves, jointly with a
nonnegative scalar c,

    E[ prox_c(rho)'(zhat) ]            = 1 - kappa
    E[ (zhat - prox_c(rho)(zhat))^2 ]  = kappa * r^2

where zhat = eps + r*Z, Z ~ N(0,1) independent of the error eps, and
prox_c(rho)(x) = argmin_y [rho(y) + (x - y)^2 / (2c)].

The derivative expectation is evaluated at zhat.  It is monotone decreasing
in c for every loss here, so the first equation is solved for c given r by
bracketed root finding; the second is then a scalar root find in r, seeded
and bracketed from the squared-loss solution, which is available in closed
form (r^2 = kappa * var / (1 - kappa), c = kappa / (2 (1 - kappa))).

Expectations over zhat use the closed-form convolution density/CDF from
:mod:`stabreg.distributions`.  Indicator-valued derivatives (absolute loss)
are reduced to tail probabilities of the convolution CDF instead of
integrating across the jump.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy import integrate
from scipy.optimize import brentq

from .distributions import ErrorDistribution
from .errors import NumericalError, UsageError
from .m_estimators import LossSpec

logger = logging.getLogger(__name__)

QUAD_TARGET = 1e-10
RESIDUAL_TOL = 1e-8


class BracketError(NumericalError):
    """No sign change found for a root; carries the scanned interval."""

    def __init__(self, message: str, lo: float, hi: float, f_lo: float, f_hi: float):
        super().__init__(
            f"{message}: no sign change on [{lo:g}, {hi:g}] "
            f"(f={f_lo:.3e} and {f_hi:.3e})"
        )
        self.interval = (lo, hi)
        self.values = (f_lo, f_hi)


class QuadratureError(NumericalError):
    """Adaptive quadrature could not reach the target error estimate."""

    def __init__(self, achieved: float, target: float):
        super().__init__(
            f"quadrature error estimate {achieved:.3e} exceeds target {target:.3e}"
        )
        self.achieved = achieved
        self.target = target


class NoCrossoverError(NumericalError):
    """The risk difference does not change sign on the requested interval."""

    def __init__(self, kappa_lo, kappa_hi, g_lo, g_hi):
        super().__init__(
            f"r_lad - r_ls does not change sign on [{kappa_lo:g}, {kappa_hi:g}]: "
            f"g({kappa_lo:g})={g_lo:.6g}, g({kappa_hi:g})={g_hi:.6g}"
        )
        self.endpoints = (kappa_lo, kappa_hi)
        self.values = (g_lo, g_hi)


@dataclass(frozen=True)
class ProxSpec:
    """Closed-form proximal operator and derivative for one loss family."""

    loss: LossSpec

    def prox(self, c: float, x):
        """argmin_y [rho(y) + (x - y)^2 / (2c)], elementwise in x."""
        if c <= 0:
            raise UsageError(f"prox smoothing parameter must be > 0, got {c}")
        x = np.asarray(x, dtype=float)
        fam = self.loss.family
        if fam == "squared":
            return x / (1.0 + 2.0 * c)
        if fam == "absolute":
            return np.sign(x) * np.maximum(np.abs(x) - c, 0.0)
        d = self.loss.huber_delta
        t = d * (1.0 + 2.0 * c)
        inner = x / (1.0 + 2.0 * c)
        outer = x - 2.0 * d * c * np.sign(x)
        return np.where(np.abs(x) <= t, inner, outer)

    def derivative(self, c: float, x):
        """d/dx of the prox; lies in [0, 1] (firm nonexpansiveness)."""
        if c <= 0:
            raise UsageError(f"prox smoothing parameter must be > 0, got {c}")
        x = np.asarray(x, dtype=float)
        fam = self.loss.family
        if fam == "squared":
            return np.full_like(x, 1.0 / (1.0 + 2.0 * c))
        if fam == "absolute":
            return (np.abs(x) > c).astype(float)
        t = self.loss.huber_delta * (1.0 + 2.0 * c)
        return np.where(np.abs(x) <= t, 1.0 / (1.0 + 2.0 * c), 1.0)

    def breakpoints(self, c: float) -> tuple[float, ...]:
        """Kink locations of the prox (and its residual) for quadrature splits."""
        fam = self.loss.family
        if fam == "squared":
            return ()
        if fam == "absolute":
            return (-c, c)
        t = self.loss.huber_delta * (1.0 + 2.0 * c)
        return (-t, t)


def prox_eval(spec: ProxSpec, c: float, x):
    return spec.prox(c, x)


def prox_derivative(spec: ProxSpec, c: float, x):
    return spec.derivative(c, x)


@dataclass(frozen=True)
class RegimeSolution:
    """Solution (r, c) of the two-equation system for one (kappa, loss, dist)."""

    kappa: float
    loss: LossSpec
    error_dist: ErrorDistribution
    r: float
    c: float
    residuals: tuple[float, float]
    quadrature_error_estimate: float


def zhat_expectation(
    g,
    r: float,
    error_dist: ErrorDistribution,
    breakpoints: tuple[float, ...] = (),
) -> float:
    """E[g(eps + r*Z)] by adaptive quadrature against the convolution density.

    ``breakpoints`` are the kink locations of ``g``; the integration range is
    split there so each panel sees a smooth integrand.  Raises
    :class:`QuadratureError` if the summed error estimate exceeds 1e-10.
    """
    val, err = _expectation(g, r, error_dist, breakpoints)
    if err > QUAD_TARGET:
        raise QuadratureError(err, QUAD_TARGET)
    return val


def _expectation(g, r, error_dist, breakpoints):
    if r < 0:
        raise UsageError(f"r must be >= 0, got {r}")
    pdf = lambda t: error_dist.conv_pdf(t, r)
    pts = sorted(set(float(b) for b in breakpoints))
    edges = [-np.inf] + pts + [np.inf]
    total = 0.0
    err = 0.0
    for a, b in zip(edges[:-1], edges[1:]):
        v, e = integrate.quad(
            lambda t: g(t) * pdf(t), a, b, epsabs=1e-12, epsrel=1e-12, limit=200
        )
        total += v
        err += e
    return total, err


def _deriv_expectation(loss: LossSpec, error_dist, r: float, c: float) -> float:
    """E[prox_c'(zhat)] from the convolution CDF (no quadrature on jumps)."""
    fam = loss.family
    if fam == "squared":
        return 1.0 / (1.0 + 2.0 * c)
    if fam == "absolute":
        inside = float(error_dist.conv_cdf(c, r) - error_dist.conv_cdf(-c, r))
        return 1.0 - inside
    t = loss.huber_delta * (1.0 + 2.0 * c)
    inside = float(error_dist.conv_cdf(t, r) - error_dist.conv_cdf(-t, r))
    return 1.0 - (2.0 * c / (1.0 + 2.0 * c)) * inside


def _solve_c(loss: LossSpec, error_dist, r: float, kappa: float) -> float:
    """Solve E[prox_c'(zhat)] = 1 - kappa for c; the LHS decreases in c."""
    target = 1.0 - kappa
    f = lambda c: _deriv_expectation(loss, error_dist, r, c) - target
    lo, hi = 1e-12, 1.0
    f_lo = f(lo)
    if f_lo < 0:
        raise BracketError("derivative equation has no root above c=1e-12", lo, hi, f_lo, f(hi))
    while f(hi) > 0:
        hi *= 4.0
        if hi > 1e12:
            raise BracketError("derivative equation", lo, hi, f_lo, f(hi))
    return brentq(f, lo, hi, xtol=1e-14, rtol=8.9e-16, maxiter=200)


def _residual_sq(spec: ProxSpec, c: float):
    """g(t) = (t - prox_c(t))^2 as a scalar function, plus its kink points."""
    fam = spec.loss.family
    if fam == "squared":
        a = 2.0 * c / (1.0 + 2.0 * c)
        return (lambda t: (a * t) ** 2), ()
    if fam == "absolute":
        return (lambda t: min(abs(t), c) ** 2), (-c, c)
    d = spec.loss.huber_delta
    t0 = d * (1.0 + 2.0 * c)
    a = 2.0 * c / (1.0 + 2.0 * c)
    cap = (2.0 * d * c) ** 2

    def g(t):
        return (a * t) ** 2 if abs(t) <= t0 else cap

    return g, (-t0, t0)


def squared_loss_solution(kappa: float, variance: float) -> tuple[float, float]:
    """Closed-form (r, c) for the squared loss: the prox is linear, so the
    derivative equation gives c directly and substitution gives r."""
    c = kappa / (2.0 * (1.0 - kappa))
    r = np.sqrt(kappa * variance / (1.0 - kappa))
    return float(r), float(c)


def solve_system(loss: LossSpec, error_dist: ErrorDistribution, kappa: float) -> RegimeSolution:
    """Solve the two-equation system for (r, c) at one kappa.

    Inner: bracketed root find for c from the derivative equation given r.
    Outer: bracketed root find in r on the second-moment equation, with the
    initial bracket [r_ls/4, 4*r_ls] from the squared-loss closed form,
    expanded geometrically if needed.  Both residuals of the returned
    solution are below 1e-8.
    """
    if not 0.0 < kappa < 1.0:
        raise UsageError(f"kappa must be in (0, 1), got {kappa}")
    if error_dist.variance <= 0.0:
        raise UsageError("error distribution must have positive variance")
    spec = ProxSpec(loss)
    r_ls, _ = squared_loss_solution(kappa, error_dist.variance)

    quad_err = 0.0

    def moment_gap(r: float) -> float:
        # integrate in units of max(1, r^2) so the quadrature target stays
        # meaningful when r is large; the residual is reported unscaled
        nonlocal quad_err
        c = _solve_c(loss, error_dist, r, kappa)
        g, pts = _residual_sq(spec, c)
        scale = max(1.0, r * r)
        val, err = _expectation(lambda t: g(t) / scale, r, error_dist, pts)
        quad_err = max(quad_err, err)
        return val * scale - kappa * r * r

    lo, hi = r_ls / 4.0, 4.0 * r_ls
    f_lo, f_hi = moment_gap(lo), moment_gap(hi)
    expansions = 0
    while f_lo * f_hi > 0 and expansions < 8:
        lo /= 2.0
        hi *= 2.0
        f_lo, f_hi = moment_gap(lo), moment_gap(hi)
        expansions += 1
    if f_lo * f_hi > 0:
        raise BracketError(
            f"norm equation for {loss.family} loss at kappa={kappa:g}", lo, hi, f_lo, f_hi
        )
    r = brentq(moment_gap, lo, hi, xtol=1e-13, rtol=8.9e-16, maxiter=200)

    c = _solve_c(loss, error_dist, r, kappa)
    resid1 = _deriv_expectation(loss, error_dist, r, c) - (1.0 - kappa)
    g, pts = _residual_sq(spec, c)
    scale = max(1.0, r * r)
    val, err = _expectation(lambda t: g(t) / scale, r, error_dist, pts)
    quad_err = max(quad_err, err)
    if quad_err > QUAD_TARGET:
        raise QuadratureError(quad_err, QUAD_TARGET)
    resid2 = val * scale - kappa * r * r
    if abs(resid1) > RESIDUAL_TOL or abs(resid2) > RESIDUAL_TOL:
        raise NumericalError(
            f"system residuals ({resid1:.3e}, {resid2:.3e}) exceed {RESIDUAL_TOL:g}"
        )
    return RegimeSolution(
        kappa=float(kappa),
        loss=loss,
        error_dist=error_dist,
        r=float(r),
        c=float(c),
        residuals=(float(resid1), float(resid2)),
        quadrature_error_estimate=float(quad_err),
    )


def r_curve(
    loss: LossSpec, error_dist: ErrorDistribution, kappa_grid
) -> list[RegimeSolution]:
    """Solve the system along an increasing kappa grid.

    Solutions are found independently per point (the closed-form seed makes
    warm starts unnecessary for bracketing); a decrease of r along the grid
    is logged as a diagnostic, never corrected.
    """
    grid = np.asarray(kappa_grid, dtype=float)
    if grid.ndim != 1 or grid.size < 1 or np.any(np.diff(grid) <= 0):
        raise UsageError("kappa grid must be strictly increasing")
    out = [solve_system(loss, error_dist, k) for k in grid]
    rs = np.array([s.r for s in out])
    if rs.size > 1 and np.min(np.diff(rs)) < 0:
        logger.warning("r(kappa) is not nondecreasing along the sweep")
    return out


def find_crossover(
    error_dist: ErrorDistribution,
    kappa_lo: float,
    kappa_hi: float,
    *,
    tol: float = 1e-3,
) -> float:
    """Aspect ratio where the LAD and OLS limiting norms cross.

    Bisection on g(kappa) = r_absolute(kappa) - r_squared(kappa) down to an
    interval of length ``tol``.  Raises :class:`NoCrossoverError` (with the
    endpoint values) when g does not change sign.
    """
    if not 0.0 < kappa_lo < kappa_hi < 1.0:
        raise UsageError(
            f"need 0 < kappa_lo < kappa_hi < 1, got [{kappa_lo}, {kappa_hi}]"
        )
    lad = LossSpec("absolute")
    ls = LossSpec("squared")

    def gap(k: float) -> float:
        return solve_system(lad, error_dist, k).r - solve_system(ls, error_dist, k).r

    g_lo, g_hi = gap(kappa_lo), gap(kappa_hi)
    if g_lo == 0.0:
        return kappa_lo
    if g_hi == 0.0:
        return kappa_hi
    if g_lo * g_hi > 0:
        raise NoCrossoverError(kappa_lo, kappa_hi, g_lo, g_hi)
    lo, hi = kappa_lo, kappa_hi
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        g_mid = gap(mid)
        if g_mid == 0.0:
            return mid
        if g_lo * g_mid < 0:
            hi = mid
        else:
            lo, g_lo = mid, g_mid
    return 0.5 * (lo + hi)
