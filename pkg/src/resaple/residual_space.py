"""Restricted residual space for a fixed design and weight matrix.

Everything downstream (estimators, tests, scatterplots) works with the
contrasts ``e = H'z``, where the columns of ``H`` are an orthonormal basis of
the orthogonal complement of the design's column space, and with the
residualised operators ``W_r = H'WH`` and ``K_r = (W_r + W_r')/2``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, InternalConsistencyError, RankError, ValidationError
from .weights import WeightMatrix

__all__ = [
    "DesignMatrix",
    "ResidualSpace",
    "as_design",
    "as_weights",
    "build_residual_space",
    "contrasts",
    "restricted_information",
    "annihilator",
]

RANK_RTOL = 1e-10
PD_FLOOR = 1e-12


@dataclass(frozen=True, eq=False)
class DesignMatrix:
    """Full-column-rank ``n x p`` design. ``p = 0`` is allowed (no fixed effects)."""

    x: np.ndarray

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        if x.ndim != 2:
            raise DimensionError(f"design must be 2-d, got shape {x.shape}")
        n, p = x.shape
        if not np.all(np.isfinite(x)):
            raise ValidationError("design contains non-finite entries")
        if p >= n:
            raise DimensionError(f"need p < n for a non-trivial residual space, got p={p}, n={n}")
        if p:
            s = np.linalg.svd(x, compute_uv=False)
            rank = int(np.sum(s > RANK_RTOL * s[0])) if s[0] > 0 else 0
            if rank < p:
                raise RankError(f"design matrix is rank deficient (rank {rank} < p = {p})")
        x = x.copy()
        x.setflags(write=False)
        object.__setattr__(self, "x", x)

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def p(self) -> int:
        return self.x.shape[1]

    @classmethod
    def intercept(cls, n):
        return cls(np.ones((n, 1)))

    @classmethod
    def empty(cls, n):
        return cls(np.zeros((n, 0)))


def as_design(x, n=None) -> DesignMatrix:
    """Coerce ``None``/arrays to a :class:`DesignMatrix`; ``None`` means ``p = 0``."""
    if isinstance(x, DesignMatrix):
        return x
    if x is None:
        if n is None:
            raise ValidationError("n is required when no design is given")
        return DesignMatrix.empty(n)
    return DesignMatrix(x)


def as_weights(w) -> WeightMatrix:
    if isinstance(w, WeightMatrix):
        return w
    w = np.asarray(w, dtype=float)
    sums = w.sum(axis=1)
    norm = "row" if np.all(np.abs(sums - 1.0) <= 1e-12) else "raw"
    return WeightMatrix(w, norm)


def annihilator(x: DesignMatrix) -> np.ndarray:
    """Dense ``M = I - X(X'X)^{-1}X'`` (via a thin QR factorisation)."""
    n, p = x.x.shape
    if p == 0:
        return np.eye(n)
    q, _ = np.linalg.qr(x.x)
    return np.eye(n) - q @ q.T


def _complement_basis(x: DesignMatrix, basis: str) -> np.ndarray:
    n, p = x.x.shape
    if p == 0:
        return np.eye(n)
    if basis == "qr":
        q, _ = np.linalg.qr(x.x, mode="complete")
        return q[:, p:]
    if basis == "eigen":
        m = annihilator(x)
        vals, vecs = np.linalg.eigh((m + m.T) / 2)
        return vecs[:, np.argsort(vals)[p:]]
    raise ValidationError(f"unknown basis {basis!r}; use 'qr' or 'eigen'")


@dataclass(frozen=True, eq=False)
class ResidualSpace:
    """Precomputed restricted operators for one ``(X, W)`` pair.

    Attributes
    ----------
    r : int
        Residual dimension ``n - p``.
    h : ndarray, shape (n, r)
        Orthonormal contrast basis with ``H'H = I`` and ``HH' = M``.
    w_r, k_r : ndarray, shape (r, r)
        ``H'WH`` and its symmetric part.
    mu_r, nu_r : float
        ``Tr(K_r)/r`` and ``Tr(W_r^2)/r``.
    a_r, b_r : ndarray, shape (r, r)
        Numerator operator ``K_r - mu_r I`` and denominator operator
        ``W_r'W_r + nu I`` (``nu = Tr(W_r'W_r)/r`` when ``stabilized``).
    i_r0 : float
        Restricted null information ``2 Tr(K_r^2)``.
    """

    x: DesignMatrix
    w: WeightMatrix
    h: np.ndarray
    w_r: np.ndarray
    k_r: np.ndarray
    mu_r: float
    nu_r: float
    a_r: np.ndarray
    b_r: np.ndarray
    stabilized: bool
    i_r0: float
    basis: str = "qr"

    @property
    def n(self) -> int:
        return self.h.shape[0]

    @property
    def p(self) -> int:
        return self.x.p

    @property
    def r(self) -> int:
        return self.h.shape[1]


def build_residual_space(x, w, basis="qr") -> ResidualSpace:
    """Project ``W`` into the residual space of ``X``.

    ``H`` is the orthonormal complement from a complete QR factorisation of
    ``X`` (``basis="eigen"`` takes it from an eigendecomposition of ``M``
    instead; statistics are identical either way). The denominator operator is
    switched to its stabilised form when ``nu_r <= 0`` or when
    ``W_r'W_r + nu_r I`` has an eigenvalue at or below ``1e-12``.
    """
    w = as_weights(w)
    x = as_design(x, n=w.n)
    if x.n != w.n:
        raise DimensionError(f"design has {x.n} rows but W is {w.n}x{w.n}")
    h = _complement_basis(x, basis)
    r = h.shape[1]
    wm = w.w
    w_r = h.T @ wm @ h
    k_r = (w_r + w_r.T) / 2
    mu_r = float(np.trace(k_r) / r)
    nu_r = float(np.sum(w_r * w_r.T) / r)
    wtw = w_r.T @ w_r
    b_r = wtw + nu_r * np.eye(r)
    stabilized = nu_r <= 0 or np.linalg.eigvalsh(b_r)[0] <= PD_FLOOR
    if stabilized:
        b_r = wtw + (np.trace(wtw) / r) * np.eye(r)
    b_r = (b_r + b_r.T) / 2
    a_r = k_r - mu_r * np.eye(r)

    i_r0 = float(2 * np.sum(k_r * k_r))
    i_alt = float(np.sum(w_r * w_r) + np.sum(w_r * w_r.T))
    m = annihilator(x)
    k = (wm + wm.T) / 2
    mk = m @ k
    i_free = float(2 * np.sum(mk * mk.T))
    scale = max(1.0, abs(i_r0))
    if abs(i_r0 - i_alt) > 1e-10 * scale or abs(i_r0 - i_free) > 1e-10 * scale:
        raise InternalConsistencyError(
            f"restricted information disagrees across forms: {i_r0!r}, {i_alt!r}, {i_free!r}"
        )
    for arr in (h, w_r, k_r, a_r, b_r):
        arr.setflags(write=False)
    return ResidualSpace(
        x=x, w=w, h=h, w_r=w_r, k_r=k_r, mu_r=mu_r, nu_r=nu_r, a_r=a_r, b_r=b_r,
        stabilized=bool(stabilized), i_r0=i_r0, basis=basis,
    )


def contrasts(s: ResidualSpace, z) -> np.ndarray:
    """``e = H'z``; also accepts a batch of responses with shape ``(k, n)``."""
    z = np.asarray(z, dtype=float)
    if z.shape[-1] != s.n:
        raise DimensionError(f"expected length {s.n}, got {z.shape[-1]}")
    return z @ s.h


def restricted_information(s: ResidualSpace) -> float:
    """Restricted Fisher information for rho at 0, ``2 Tr(K_r^2) = 2 Tr(MKMK)``."""
    return s.i_r0
