"""Distribution of quadratic forms in Gaussian vectors.

Tail probabilities of ``Q = sum_j lambda_j chi2_1`` come from Imhof's
characteristic-function inversion

    P(Q > x) = 1/2 + (1/pi) int_0^inf sin(theta(u)) / (u rho(u)) du,
    theta(u) = 1/2 sum_j arctan(lambda_j u) - x u / 2,
    rho(u)   = prod_j (1 + lambda_j^2 u^2)^(1/4).

The integral is truncated where Imhof's bound on the neglected tail drops below
1e-9; if that point is too far out to reach by direct quadrature, the remainder
is integrated as a Fourier integral (QAWF) or, for ``x = 0``, directly to
infinity.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy import integrate

from .errors import DegenerateError, DimensionError, InternalConsistencyError
from .residual_space import ResidualSpace

__all__ = [
    "QuadFormSpectrum",
    "ImhofResult",
    "ImhofAccuracyWarning",
    "test_spectrum",
    "imhof",
    "imhof_tail",
    "rayleigh_moments",
]

DROP_RTOL = 1e-12
TRUNCATION_TARGET = 1e-9
ACCURACY_TARGET = 1e-6
_MAX_CHUNKS = 300
_PERIODS_PER_CHUNK = 8


class ImhofAccuracyWarning(RuntimeWarning):
    pass


@dataclass(frozen=True)
class QuadFormSpectrum:
    """Eigenvalues (descending) of ``C_t = A_r - t B_r``."""

    eigenvalues: np.ndarray
    t: float


@dataclass(frozen=True)
class ImhofResult:
    probability: float
    abserr: float
    upper: float
    converged: bool


def test_spectrum(s: ResidualSpace, t) -> QuadFormSpectrum:
    """Spectrum of ``A_r - t B_r``; ``rho_hat >= t`` iff ``e'(A_r - t B_r)e >= 0``."""
    c = s.a_r - float(t) * s.b_r
    asym = np.abs(c - c.T).max()
    if asym > 1e-10 * max(1.0, np.abs(c).max()):
        raise InternalConsistencyError(f"C_t is not symmetric (max asymmetry {asym:.3g})")
    vals = np.linalg.eigvalsh((c + c.T) / 2)[::-1]
    return QuadFormSpectrum(vals.copy(), float(t))


test_spectrum.__test__ = False  # not a pytest test despite the name


def _truncation_point(lam, target):
    """Smallest U for which Imhof's bound on the tail beyond U is below ``target``.

    The tail is bounded by ``1 / (pi k U^k prod |lambda_j|^(1/2))`` with
    ``k = s / 2`` using any subset of ``s`` weights; the largest weights give
    the tightest bound for each ``s``.
    """
    mags = np.sort(np.abs(lam))[::-1]
    log_prod = np.cumsum(0.5 * np.log(mags))
    k = 0.5 * np.arange(1, mags.size + 1)
    log_u = -(np.log(math.pi * k * target) + log_prod) / k
    return float(np.exp(log_u.min()))


def imhof(weights, x=0.0, epsabs=1e-10) -> ImhofResult:
    """``P(sum_j w_j chi2_1 > x)`` with an error estimate.

    Weights smaller than ``1e-12`` times the largest in magnitude are dropped.
    """
    lam = np.asarray(weights, dtype=float).ravel()
    if lam.size == 0 or not np.any(lam):
        raise DegenerateError("imhof: weights must not all be zero")
    if not np.all(np.isfinite(lam)) or not np.isfinite(x):
        raise DimensionError("imhof: weights and threshold must be finite")
    scale = np.abs(lam).max()
    lam = lam[np.abs(lam) > DROP_RTOL * scale] / scale
    x = float(x) / scale
    half_x = 0.5 * x
    lam2 = lam * lam

    def alpha(u):
        return 0.5 * np.sum(np.arctan(lam * u))

    def envelope(u):
        return u * np.exp(0.25 * np.sum(np.log1p(lam2 * u * u)))

    f0 = 0.5 * (lam.sum() - x)

    def f(u):
        if u == 0.0:
            return f0
        return math.sin(alpha(u) - half_x * u) / envelope(u)

    u_trunc = _truncation_point(lam, TRUNCATION_TARGET)
    if x != 0.0:
        u_cap = _MAX_CHUNKS * _PERIODS_PER_CHUNK * 2 * math.pi / abs(x)
    else:
        u_cap = 1e8
    u_end = min(u_trunc, u_cap)

    # breakpoints: geometric to resolve the arctan transitions, linear for the
    # oscillation of the -x u / 2 term
    pts = [0.0]
    pts.extend(np.geomspace(1e-3, max(u_end, 1e-3), 60).tolist())
    if x != 0.0:
        step = _PERIODS_PER_CHUNK * 2 * math.pi / abs(x)
        pts.extend(np.arange(step, u_end, step).tolist())
    pts = np.unique(np.clip(pts, 0.0, u_end))
    total, err = 0.0, 0.0
    for a, b in zip(pts[:-1], pts[1:]):
        val, e = integrate.quad(f, a, b, epsabs=epsabs / len(pts), epsrel=0.0, limit=200)
        total += val
        err += e
    if u_trunc > u_end:
        if x != 0.0:
            omega = abs(half_x)
            sgn = 1.0 if half_x > 0 else -1.0

            def g_sin(u):
                return math.sin(alpha(u)) / envelope(u)

            def g_cos(u):
                return math.cos(alpha(u)) / envelope(u)

            # sin(alpha - half_x u) = sin(alpha) cos(omega u) - sgn cos(alpha) sin(omega u)
            v1, e1 = integrate.quad(g_sin, u_end, np.inf, weight="cos", wvar=omega, epsabs=epsabs, limlst=200)
            v2, e2 = integrate.quad(g_cos, u_end, np.inf, weight="sin", wvar=omega, epsabs=epsabs, limlst=200)
            total += v1 - sgn * v2
            err += e1 + e2
        else:
            # u = U / t^2 maps the power-law tail onto a bounded integrand on (0, 1]
            def g(t):
                return f(u_end / (t * t)) * 2.0 * u_end / t**3 if t > 0.0 else 0.0

            v, e = integrate.quad(g, 0.0, 1.0, epsabs=epsabs, limit=500)
            total += v
            err += e
        trunc_err = 0.0
    else:
        trunc_err = TRUNCATION_TARGET * math.pi
    abserr = (err + trunc_err) / math.pi
    prob = 0.5 + total / math.pi
    converged = abserr <= ACCURACY_TARGET and np.isfinite(prob)
    return ImhofResult(float(min(max(prob, 0.0), 1.0)), float(abserr), float(prob), bool(converged))


def imhof_tail(weights, x=0.0) -> float:
    """``P(sum_j w_j chi2_1 >= x)``; warns with :class:`ImhofAccuracyWarning` if the
    error estimate exceeds ``1e-6``."""
    res = imhof(weights, x)
    if not res.converged:
        warnings.warn(
            f"Imhof inversion error estimate {res.abserr:.2e} exceeds {ACCURACY_TARGET:g}",
            ImhofAccuracyWarning,
            stacklevel=2,
        )
    return res.probability


def rayleigh_moments(eigenvalues) -> tuple[float, float]:
    """Mean and variance of ``g'Sg / g'g`` for ``g ~ N(0, I_r)`` from the spectrum of ``S``."""
    lam = np.asarray(eigenvalues, dtype=float).ravel()
    r = lam.size
    if r < 3:
        raise DimensionError(f"rayleigh_moments needs r >= 3, got r = {r}")
    mean = lam.mean()
    var = 2.0 / (r * (r + 2)) * np.sum((lam - mean) ** 2)
    return float(mean), float(var)
