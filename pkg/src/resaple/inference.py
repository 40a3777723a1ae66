"""Tests of ``H0: rho = 0`` calibrated exactly (Gaussian null), by permutation,
or by the asymptotic normal approximation; plus unit-level permutation tests
of the local contributions."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .errors import DegenerateError, DimensionError, ValidationError
from .esda import sym_sqrt
from .estimators import DEGENERATE_RTOL, quadratic_operators, ratio_batch, resaple
from .quadform import imhof_tail, test_spectrum
from .residual_space import ResidualSpace, as_design, as_weights, build_residual_space

__all__ = [
    "TestResult",
    "LocalTestResult",
    "SIDES",
    "SCHEMES",
    "MIN_PERMUTATIONS",
    "permutation_indices",
    "exact_test",
    "permutation_test",
    "permutation_test_space",
    "permutation_pvalues",
    "permuted_contrasts",
    "z_test",
    "local_tests",
]

SIDES = ("greater", "less", "two_sided")
SCHEMES = ("freedman_lane", "coordinate")
MIN_PERMUTATIONS = 19


@dataclass(frozen=True)
class TestResult:
    __test__ = False

    statistic: float
    p_value: float
    method: str
    side: str
    permutations: int | None = None
    seed: int | None = None
    min_attainable_p: float | None = None
    statistic_name: str = "resaple"

    def as_dict(self):
        return {
            "statistic": self.statistic,
            "statistic_name": self.statistic_name,
            "p_value": self.p_value,
            "method": self.method,
            "side": self.side,
            "permutations": self.permutations,
            "seed": self.seed,
            "min_attainable_p": self.min_attainable_p,
        }


@dataclass(frozen=True, eq=False)
class LocalTestResult:
    """Per-unit contributions with two-sided permutation p-values and their
    Benjamini-Hochberg adjustment."""

    ids: list
    c: np.ndarray
    s: np.ndarray
    p_value: np.ndarray
    p_adjusted: np.ndarray
    rho_hat: float
    permutations: int
    seed: int
    fdr_q: float
    significant: np.ndarray = field(repr=False)

    def rows(self):
        for k, i in enumerate(self.ids):
            yield {
                "id": i,
                "c_i": float(self.c[k]),
                "s_i": float(self.s[k]),
                "p_value": float(self.p_value[k]),
                "p_adjusted": float(self.p_adjusted[k]),
                "significant": bool(self.significant[k]),
            }

    def to_csv(self, path_or_file):
        from .esda import _write_rows

        fields = ["id", "c_i", "s_i", "p_value", "p_adjusted", "significant"]
        _write_rows(path_or_file, fields, self.rows())


def _check_side(side):
    if side not in SIDES:
        raise ValidationError(f"side must be one of {SIDES}, got {side!r}")


def _check_perm_args(L, seed):
    if isinstance(L, bool) or not isinstance(L, (int, np.integer)) or L < MIN_PERMUTATIONS:
        raise ValidationError(f"need at least {MIN_PERMUTATIONS} permutations, got {L!r}")
    if isinstance(seed, bool) or not isinstance(seed, (int, np.integer)) or seed < 0:
        raise ValidationError(f"permutation tests need a non-negative integer seed, got {seed!r}")


def _two_sided(upper, lower):
    return min(1.0, 2.0 * min(upper, lower))


def permutation_indices(seed, L, m) -> np.ndarray:
    """``(L, m)`` array whose row ``j`` is a permutation drawn from a stream
    keyed only by ``(seed, j)``."""
    children = np.random.SeedSequence(int(seed)).spawn(L)
    return np.stack([np.random.default_rng(c).permutation(m) for c in children])


def exact_test(s: ResidualSpace, e, side="greater") -> TestResult:
    """Gaussian-null p-value of RESAPLE from the spectrum of ``A_r - t B_r``."""
    _check_side(side)
    t = resaple(s, e).rho_hat
    lam = test_spectrum(s, t).eigenvalues
    upper = imhof_tail(lam, 0.0) if side != "less" else None
    lower = imhof_tail(-lam, 0.0) if side != "greater" else None
    if side == "greater":
        p = upper
    elif side == "less":
        p = lower
    else:
        p = _two_sided(upper, lower)
    return TestResult(t, float(p), "exact", side)


def z_test(s: ResidualSpace, e, side="greater") -> TestResult:
    _check_side(side)
    z = float(np.sqrt(s.i_r0) * resaple(s, e).rho_hat)
    if side == "greater":
        p = stats.norm.sf(z)
    elif side == "less":
        p = stats.norm.cdf(z)
    else:
        p = min(1.0, 2 * stats.norm.sf(abs(z)))
    return TestResult(z, float(p), "z", side)


def _perm_p(obs, null, side, L):
    # small relative slack so that ties survive floating-point reassociation
    tol = 1e-12 * max(1.0, abs(obs))
    upper = (1 + np.count_nonzero(null >= obs - tol)) / (L + 1)
    lower = (1 + np.count_nonzero(null <= obs + tol)) / (L + 1)
    if side == "greater":
        return upper
    if side == "less":
        return lower
    return _two_sided(upper, lower)


def _validated_contrasts(s, z):
    z = np.asarray(z, dtype=float)
    if z.shape != (s.n,):
        raise DimensionError(f"response must have shape ({s.n},), got {z.shape}")
    e = z @ s.h
    if np.linalg.norm(e) <= DEGENERATE_RTOL * max(np.linalg.norm(z), 1e-300):
        raise DegenerateError("residuals are numerically zero; the response lies in the span of X")
    return e


def permuted_contrasts(s: ResidualSpace, e, scheme, L, seed) -> np.ndarray:
    """``(L, r)`` permuted contrasts: ``Pi e`` (coordinate) or ``H' Pi He``
    (Freedman-Lane, where ``He`` are the OLS residuals)."""
    if scheme not in SCHEMES:
        raise ValidationError(f"scheme must be one of {SCHEMES}, got {scheme!r}")
    if scheme == "coordinate":
        return e[permutation_indices(seed, L, s.r)]
    # H'Pz = 0, so the pseudo-response Pz + Pi r contributes only H' Pi r
    resid = s.h @ e
    return resid[permutation_indices(seed, L, s.n)] @ s.h


def permutation_pvalues(
    s: ResidualSpace,
    z,
    statistics=("resaple",),
    scheme="freedman_lane",
    L=199,
    seed=None,
    side="greater",
    operators=None,
) -> dict[str, TestResult]:
    """Permutation tests of several statistics sharing one set of permutations.

    ``operators`` may carry the ``quadratic_operators(s)`` mapping to avoid
    rebuilding it across repeated calls.
    """
    _check_side(side)
    _check_perm_args(L, seed)
    ops = operators if operators is not None else quadratic_operators(s)
    for name in statistics:
        if name not in ops:
            raise ValidationError(f"unknown statistic {name!r}; choose from {sorted(ops)}")
    e = _validated_contrasts(s, z)
    e_star = permuted_contrasts(s, e, scheme, L, seed)
    out = {}
    for name in statistics:
        a, b = ops[name]
        obs = float(ratio_batch(e, a, b)[0])
        if not np.isfinite(obs):
            raise DegenerateError(f"{name} is undefined for these data")
        null = ratio_batch(e_star, a, b)
        p = _perm_p(obs, null[np.isfinite(null)], side, L)
        out[name] = TestResult(
            obs, float(p), f"perm_{scheme}", side, int(L), int(seed), 1.0 / (L + 1), name
        )
    return out


def permutation_test_space(
    s: ResidualSpace,
    z,
    scheme="freedman_lane",
    L=199,
    seed=None,
    side="greater",
    statistic="resaple",
    operators=None,
) -> TestResult:
    """Permutation test on a prebuilt residual space."""
    return permutation_pvalues(s, z, (statistic,), scheme, L, seed, side, operators)[statistic]


def permutation_test(
    z, x, w, scheme="freedman_lane", L=199, seed=None, side="greater", statistic="resaple"
) -> TestResult:
    w = as_weights(w)
    s = build_residual_space(as_design(x, n=w.n), w)
    return permutation_test_space(s, z, scheme, L, seed, side, statistic)


def local_tests(s: ResidualSpace, e, L=999, seed=None, fdr_q=0.05, ids=None) -> LocalTestResult:
    """Two-sided coordinate-permutation p-values for each unit's contribution
    ``C_i``, adjusted with Benjamini-Hochberg."""
    _check_perm_args(L, seed)
    if not 0 < fdr_q < 1:
        raise ValidationError(f"fdr_q must lie in (0, 1), got {fdr_q!r}")
    e = np.asarray(e, dtype=float)
    if e.shape != (s.r,):
        raise DimensionError(f"contrasts must have shape ({s.r},), got {e.shape}")
    if not np.any(e):
        raise DegenerateError("contrast vector is zero")
    root, inv_root = sym_sqrt(s.b_r)
    gx = s.h @ root                 # e -> x_tilde
    gy = s.h @ inv_root @ s.a_r     # e -> y_tilde
    den = float(e @ s.b_r @ e)
    c = (gx @ e) * (gy @ e)

    perms = permutation_indices(seed, L, s.r)
    e_star = e[perms]
    c_star = (e_star @ gx.T) * (e_star @ gy.T)
    tol = 1e-12 * max(1.0, np.abs(c).max())
    upper = (1 + np.count_nonzero(c_star >= c - tol, axis=0)) / (L + 1)
    lower = (1 + np.count_nonzero(c_star <= c + tol, axis=0)) / (L + 1)
    p = np.minimum(1.0, 2.0 * np.minimum(upper, lower))
    p_adj = stats.false_discovery_control(p, method="bh")
    ids = list(range(s.n)) if ids is None else list(ids)
    if len(ids) != s.n:
        raise DimensionError(f"expected {s.n} ids, got {len(ids)}")
    return LocalTestResult(
        ids=ids,
        c=c,
        s=c / den,
        p_value=p,
        p_adjusted=p_adj,
        rho_hat=resaple(s, e).rho_hat,
        permutations=int(L),
        seed=int(seed),
        fdr_q=float(fdr_q),
        significant=p_adj <= fdr_q,
    )
