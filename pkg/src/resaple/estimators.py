"""Point estimators of the spatial error parameter rho.

The one-step estimators (residual Moran, APLE, MAPLE, RESAPLE) are ratios of
quadratic forms. ``quadratic_operators`` rewrites all four as ratios
``e'Ae / e'Be`` in the contrasts ``e = H'z`` so that Monte Carlo and
permutation code can evaluate them for many ``e`` at once; the functions that
take ``z`` evaluate the textbook formulas directly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg, optimize

from .errors import DegenerateError, DimensionError, OptimizationError, SingularityError, ValidationError
from .residual_space import (
    ResidualSpace,
    as_design,
    as_weights,
    build_residual_space,
)

__all__ = [
    "EstimateResult",
    "moran_residual",
    "aple",
    "aple_residual",
    "maple",
    "resaple",
    "restricted_score",
    "approximate_curvature",
    "restricted_profile_loglik",
    "default_interval",
    "RemlProblem",
    "reml_fit",
    "quadratic_operators",
    "ratio_batch",
    "ONE_STEP_METHODS",
    "ALL_METHODS",
    "estimate_all",
]

ONE_STEP_METHODS = ("moran", "aple", "maple", "resaple")
DEGENERATE_RTOL = 1e-10


@dataclass(frozen=True)
class EstimateResult:
    method: str
    rho_hat: float
    numerator: float | None = None
    denominator: float | None = None
    sigma2_hat: float | None = None
    loglik: float | None = None
    boundary: bool = False

    def as_dict(self):
        return {
            "method": self.method,
            "rho_hat": self.rho_hat,
            "numerator": self.numerator,
            "denominator": self.denominator,
            "sigma2_hat": self.sigma2_hat,
            "loglik": self.loglik,
            "boundary": self.boundary,
        }


def _vector(z, n, name="z"):
    z = np.asarray(z, dtype=float)
    if z.shape != (n,):
        raise DimensionError(f"{name} must have shape ({n},), got {z.shape}")
    return z


def _residualize(z, x):
    """OLS residuals ``Mz``; raises when they vanish relative to ``z``."""
    if x.p:
        q, _ = np.linalg.qr(x.x)
        resid = z - q @ (q.T @ z)
    else:
        resid = z.copy()
    norm = np.linalg.norm(resid)
    if norm == 0 or norm <= DEGENERATE_RTOL * np.linalg.norm(z):
        raise DegenerateError("residuals vanish: the response lies in the column space of X")
    return resid


def _ratio(method, num, den):
    if not np.isfinite(den) or den <= 0:
        raise DegenerateError(f"{method}: denominator is {den!r}")
    return EstimateResult(method, float(num / den), float(num), float(den))


def moran_residual(z, x, w) -> EstimateResult:
    """Moran's index of OLS residuals, ``r'Wr / r'r`` with ``r = Mz``.

    For row-standardised ``W`` the usual ``n / S0`` prefactor equals one and is
    omitted; for raw weights the value is therefore not rescaled either.
    """
    w = as_weights(w)
    x = as_design(x, n=w.n)
    resid = _residualize(_vector(z, w.n), x)
    return _ratio("moran", resid @ w.w @ resid, resid @ resid)


def aple(z, w) -> EstimateResult:
    """APLE: ``z'Kz / z'(W'W + nu_n I)z`` with ``nu_n = Tr(W^2)/n``.

    No centring is applied; pass residuals or centred data.
    """
    w = as_weights(w)
    z = _vector(z, w.n)
    if not np.any(z):
        raise DegenerateError("aple: z is the zero vector")
    wm = w.w
    nu_n = np.sum(wm * wm.T) / w.n
    wz = wm @ z
    return _ratio("aple", z @ wz, wz @ wz + nu_n * (z @ z))


def aple_residual(z, x, w) -> EstimateResult:
    """APLE applied to the OLS residuals ``Mz``."""
    w = as_weights(w)
    x = as_design(x, n=w.n)
    return aple(_residualize(_vector(z, w.n), x), w)


def maple(z, x, w) -> EstimateResult:
    """Covariate-adjusted APLE, evaluated with dense projectors ``P`` and ``M``."""
    w = as_weights(w)
    x = as_design(x, n=w.n)
    z = _vector(z, w.n)
    n = w.n
    wm = w.w
    if x.p:
        q, _ = np.linalg.qr(x.x)
        p_mat = q @ q.T
    else:
        p_mat = np.zeros((n, n))
    m = np.eye(n) - p_mat
    mz = m @ z
    if np.linalg.norm(mz) <= DEGENERATE_RTOL * np.linalg.norm(z) or not np.any(mz):
        raise DegenerateError("maple: MZ vanishes, numerator and denominator are both zero")
    k = (wm + wm.T) / 2
    wtw = wm.T @ wm
    nu_n = np.sum(wm * wm.T) / n
    den_op = m @ wtw @ m - m @ (wm.T + wm) @ p_mat @ wtw @ m + nu_n * m
    return _ratio("maple", z @ m @ k @ m @ z, z @ den_op @ z)


def _contrast_vector(s, e):
    e = np.asarray(e, dtype=float)
    if e.shape != (s.r,):
        raise DimensionError(f"contrasts must have shape ({s.r},), got {e.shape}")
    if not np.any(e):
        raise DegenerateError("contrast vector is zero")
    return e


def resaple(s: ResidualSpace, e) -> EstimateResult:
    """RESAPLE: ``e'(K_r - mu_r I)e / e'B_r e``."""
    e = _contrast_vector(s, e)
    return _ratio("resaple", e @ s.a_r @ e, e @ s.b_r @ e)


def restricted_score(s: ResidualSpace, e) -> float:
    """Restricted profile score at rho = 0: ``r e'K_r e / e'e - Tr(K_r)``."""
    e = _contrast_vector(s, e)
    return float(s.r * (e @ s.k_r @ e) / (e @ e) - np.trace(s.k_r))


def approximate_curvature(s: ResidualSpace, e) -> float:
    """Approximate restricted curvature ``-(r / e'e) e'B_r e``."""
    e = _contrast_vector(s, e)
    return float(-(s.r / (e @ e)) * (e @ s.b_r @ e))


def restricted_profile_loglik(x, w, z, rho, form="e") -> float:
    """Restricted profile log-likelihood of rho, up to an additive constant.

    ``form="e"`` evaluates ``-1/2 log|Sigma_r| - r/2 log(e'Sigma_r^{-1}e / r)``
    in the contrasts; ``form="z"`` evaluates the equivalent expression in the
    response. The two differ by ``1/2 log|X'X|``, which does not depend on rho.
    """
    w = as_weights(w)
    x = as_design(x, n=w.n)
    z = _vector(z, w.n)
    if form == "z":
        return RemlProblem(x, w, use_eigenvalues=False).loglik(z, rho)
    if form != "e":
        raise ValidationError(f"form must be 'e' or 'z', got {form!r}")
    s = build_residual_space(x, w)
    e = s.h.T @ z
    r_mat = np.eye(w.n) - rho * w.w
    try:
        lu = linalg.lu_factor(r_mat, check_finite=True)
    except (linalg.LinAlgError, ValueError) as exc:
        raise SingularityError(f"I - rho W is singular at rho={rho}") from exc
    if np.any(np.abs(np.diag(lu[0])) <= 1e-14 * np.abs(np.diag(lu[0])).max()):
        raise SingularityError(f"I - rho W is singular at rho={rho}")
    g = linalg.lu_solve(lu, s.h, trans=1)  # R^{-T} H
    sigma_r = g.T @ g
    try:
        chol = linalg.cho_factor(sigma_r, lower=True)
    except linalg.LinAlgError as exc:
        raise SingularityError(f"Sigma_r is not positive definite at rho={rho}") from exc
    logdet = 2 * np.sum(np.log(np.diag(chol[0])))
    quad = e @ linalg.cho_solve(chol, e)
    r = s.r
    return float(-0.5 * logdet - 0.5 * r * np.log(quad / r))


def default_interval(w) -> tuple[float, float]:
    """Search interval keeping ``I - rho W`` non-singular.

    ``(-0.999, 0.999)`` for row-standardised weights; otherwise the reciprocals
    of the extreme real eigenvalues, shrunk by the same factor.
    """
    w = as_weights(w)
    if w.normalization == "row":
        return (-0.999, 0.999)
    lam = np.linalg.eigvals(w.w)
    real = lam[np.abs(lam.imag) <= 1e-10 * max(1.0, np.abs(lam).max())].real
    lo_eig = real.min() if real.size else -np.abs(lam).max()
    hi_eig = real.max() if real.size else np.abs(lam).max()
    if lo_eig >= 0 or hi_eig <= 0:
        radius = np.abs(lam).max()
        lo_eig, hi_eig = -radius, radius
    return (0.999 / lo_eig, 0.999 / hi_eig)


class RemlProblem:
    """Restricted profile likelihood of rho for a fixed ``(X, W)``.

    The log-determinant ``log|I - rho W|`` is taken from the eigenvalues of
    ``W`` when its spectrum is numerically real, and from an LU factorisation
    at every evaluation otherwise.
    """

    def __init__(self, x, w, use_eigenvalues=True):
        self.w = as_weights(w)
        self.x = as_design(x, n=self.w.n)
        self.n = self.w.n
        self.p = self.x.p
        self.r = self.n - self.p
        wm = self.w.w
        self._wx = wm @ self.x.x
        self._eig = None
        if use_eigenvalues:
            lam = np.linalg.eigvals(wm)
            if np.all(np.abs(lam.imag) <= 1e-10 * max(1.0, np.abs(lam).max())):
                self._eig = lam.real

    def _logdet_r(self, rho):
        if self._eig is not None:
            f = 1.0 - rho * self._eig
            if np.any(f == 0):
                raise SingularityError(f"I - rho W is singular at rho={rho}")
            return float(np.sum(np.log(np.abs(f))))
        sign, logdet = np.linalg.slogdet(np.eye(self.n) - rho * self.w.w)
        if sign == 0 or not np.isfinite(logdet):
            raise SingularityError(f"I - rho W is singular at rho={rho}")
        return float(logdet)

    def loglik(self, z, rho, wz=None, return_sigma2=False):
        """Profile log-likelihood in the response form (additive constant dropped)."""
        if wz is None:
            wz = self.w.w @ z
        rz = z - rho * wz
        logdet_r = self._logdet_r(rho)
        if self.p:
            rx = self.x.x - rho * self._wx
            q, rr = np.linalg.qr(rx)
            diag = np.abs(np.diag(rr))
            if np.any(diag == 0):
                raise SingularityError(f"R(rho) X is rank deficient at rho={rho}")
            logdet_x = 2 * np.sum(np.log(diag))
            resid = rz - q @ (q.T @ rz)
        else:
            logdet_x = 0.0
            resid = rz
        quad = resid @ resid
        if quad <= 0:
            raise DegenerateError("restricted quadratic form vanishes")
        val = logdet_r - 0.5 * logdet_x - 0.5 * self.r * np.log(quad / self.r)
        if return_sigma2:
            return float(val), float(quad / self.r)
        return float(val)

    def fit(self, z, interval=None, grid_size=81, xtol=1e-7) -> EstimateResult:
        z = _vector(z, self.n)
        lo, hi = default_interval(self.w) if interval is None else map(float, interval)
        if not lo < hi:
            raise OptimizationError(f"empty search interval ({lo}, {hi})")
        wz = self.w.w @ z
        grid = np.linspace(lo, hi, grid_size)
        try:
            vals = np.array([self.loglik(z, g, wz) for g in grid])
        except SingularityError as exc:
            raise OptimizationError(f"likelihood undefined on the search grid: {exc}") from exc
        if not np.all(np.isfinite(vals)):
            raise OptimizationError("non-finite restricted likelihood on the search grid")
        i = int(np.argmax(vals))
        a, b = grid[max(i - 1, 0)], grid[min(i + 1, grid_size - 1)]
        res = optimize.minimize_scalar(
            lambda t: -self.loglik(z, t, wz),
            bounds=(a, b),
            method="bounded",
            options={"xatol": xtol},
        )
        rho_hat = float(res.x) if -res.fun >= vals[i] else float(grid[i])
        loglik, sigma2 = self.loglik(z, rho_hat, wz, return_sigma2=True)
        edge = 10 * xtol
        boundary = rho_hat - lo <= edge or hi - rho_hat <= edge
        return EstimateResult("reml", rho_hat, sigma2_hat=sigma2, loglik=loglik, boundary=bool(boundary))


def reml_fit(x, w, z, interval=None) -> EstimateResult:
    """Maximise the restricted profile likelihood over ``interval``.

    A coarse grid locates the maximum, then bounded Brent refines it to an
    absolute tolerance of ``1e-7``. Solutions at the interval ends are flagged
    through ``boundary``.
    """
    return RemlProblem(x, w).fit(z, interval)


def quadratic_operators(s: ResidualSpace) -> dict[str, tuple[np.ndarray, np.ndarray]]:
    """Symmetric ``(A, B)`` with ``statistic = e'Ae / e'Be`` for each one-step method.

    The APLE entry is APLE applied to OLS residuals ``He``.
    """
    wm = s.w.w
    n = s.n
    h = s.h
    nu_n = np.sum(wm * wm.T) / n
    wtw = wm.T @ wm
    wh = wm @ h
    aple_b = wh.T @ wh + nu_n * np.eye(s.r)
    x = s.x.x
    if s.p:
        q, _ = np.linalg.qr(x)
        p_mat = q @ q.T
    else:
        p_mat = np.zeros((n, n))
    g = wtw - (wm.T + wm) @ p_mat @ wtw + nu_n * np.eye(n)
    maple_b = h.T @ g @ h
    maple_b = (maple_b + maple_b.T) / 2
    return {
        "moran": (s.k_r, np.eye(s.r)),
        "aple": (s.k_r, (aple_b + aple_b.T) / 2),
        "maple": (s.k_r, maple_b),
        "resaple": (s.a_r, s.b_r),
    }


def ratio_batch(e, a, b) -> np.ndarray:
    """Row-wise ``e_i'A e_i / e_i'B e_i`` for a batch ``e`` of shape ``(k, r)``."""
    e = np.atleast_2d(e)
    num = np.einsum("ij,ij->i", e @ a, e)
    den = np.einsum("ij,ij->i", e @ b, e)
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(den > 0, num / den, np.nan)


ALL_METHODS = ("moran", "aple", "maple", "resaple", "reml")


def estimate_all(z, x, w, methods=ALL_METHODS, interval=None) -> list[EstimateResult]:
    """Evaluate several estimators on one dataset, in the order requested.

    ``aple`` is computed on OLS residuals so that it is comparable with the
    covariate-adjusted methods; with no covariates it is APLE on raw ``z``.
    """
    w = as_weights(w)
    x = as_design(x, n=w.n)
    z = _vector(z, w.n)
    unknown = [m for m in methods if m not in ALL_METHODS]
    if unknown:
        raise ValidationError(f"unknown methods {unknown}; choose from {ALL_METHODS}")
    out = []
    for m in methods:
        if m == "moran":
            out.append(moran_residual(z, x, w))
        elif m == "aple":
            out.append(aple_residual(z, x, w))
        elif m == "maple":
            out.append(maple(z, x, w))
        elif m == "resaple":
            s = build_residual_space(x, w)
            out.append(resaple(s, z @ s.h))
        else:
            out.append(reml_fit(x, w, z, interval))
    return out
