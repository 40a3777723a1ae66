"""Exploratory outputs: RESAPLE scatterplot coordinates, local contributions and
the restricted-information comparison of candidate weight matrices."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateError, DimensionError, ValidationError
from .estimators import resaple
from .residual_space import ResidualSpace, as_design, build_residual_space
from .weights import WeightMatrix, null_information_unrestricted

__all__ = [
    "ScatterData",
    "WeightComparison",
    "sym_sqrt",
    "scatter_coordinates",
    "local_contributions",
    "compare_weights",
]

EIG_FLOOR = 1e-12


def sym_sqrt(b) -> tuple[np.ndarray, np.ndarray]:
    """``(B^{1/2}, B^{-1/2})`` of a symmetric positive definite matrix via ``eigh``.

    Eigenvalues below ``1e-12 * lambda_max`` are rejected rather than clipped,
    since the inverse root would be meaningless.
    """
    vals, vecs = np.linalg.eigh(b)
    top = vals[-1]
    if top <= 0 or vals[0] <= EIG_FLOOR * top:
        raise DegenerateError(
            f"denominator operator is not positive definite (eigenvalues in [{vals[0]:.3g}, {top:.3g}])"
        )
    root = np.sqrt(vals)
    return (vecs * root) @ vecs.T, (vecs / root) @ vecs.T


@dataclass(frozen=True, eq=False)
class ScatterData:
    """Per-unit scatterplot coordinates and contributions.

    ``x_tilde = H B_r^{1/2} e`` and ``y_tilde = H B_r^{-1/2} A_r e``; the
    through-origin slope of ``y_tilde`` on ``x_tilde`` is RESAPLE. Both
    coordinates are of the form ``H f(B_r) H' z``, so they do not depend on
    which orthonormal basis of the residual space was chosen.
    """

    ids: list
    x_tilde: np.ndarray
    y_tilde: np.ndarray
    c: np.ndarray
    s: np.ndarray
    rho_hat: float

    @property
    def leverage(self) -> np.ndarray:
        return self.x_tilde**2

    @property
    def slope(self) -> float:
        return float(self.x_tilde @ self.y_tilde / (self.x_tilde @ self.x_tilde))

    def rows(self):
        for k, i in enumerate(self.ids):
            yield {
                "id": i,
                "x_tilde": float(self.x_tilde[k]),
                "y_tilde": float(self.y_tilde[k]),
                "c_i": float(self.c[k]),
                "s_i": float(self.s[k]),
                "leverage": float(self.x_tilde[k] ** 2),
            }

    def to_csv(self, path_or_file):
        _write_rows(path_or_file, ["id", "x_tilde", "y_tilde", "c_i", "s_i", "leverage"], self.rows())


def _write_rows(path_or_file, fields, rows):
    if hasattr(path_or_file, "write"):
        _dump(path_or_file, fields, rows)
    else:
        with open(path_or_file, "w", newline="") as fh:
            _dump(fh, fields, rows)


def _dump(fh, fields, rows):
    writer = csv.DictWriter(fh, fieldnames=fields, lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})


def _whitened(s: ResidualSpace, e):
    e = np.asarray(e, dtype=float)
    if e.shape != (s.r,):
        raise DimensionError(f"contrasts must have shape ({s.r},), got {e.shape}")
    if not np.any(e):
        raise DegenerateError("contrast vector is zero")
    root, inv_root = sym_sqrt(s.b_r)
    return root @ e, inv_root @ (s.a_r @ e)


def scatter_coordinates(s: ResidualSpace, e, ids=None) -> ScatterData:
    x, y = _whitened(s, e)
    xt = s.h @ x
    yt = s.h @ y
    c = xt * yt
    den = float(e @ s.b_r @ e)
    ids = list(range(s.n)) if ids is None else list(ids)
    if len(ids) != s.n:
        raise DimensionError(f"expected {s.n} ids, got {len(ids)}")
    return ScatterData(ids, xt, yt, c, c / den, resaple(s, e).rho_hat)


def local_contributions(s: ResidualSpace, e) -> tuple[np.ndarray, np.ndarray]:
    """Unit contributions ``C_i = x_i y_i`` and shares ``S_i = C_i / e'B_r e``
    (the shares sum to RESAPLE)."""
    sc = scatter_coordinates(s, e)
    return sc.c, sc.s


@dataclass(frozen=True)
class WeightComparison:
    """Rows ``(label, avg_degree, i_n0, i_r0, info_ratio, selected)`` sorted by
    descending restricted information."""

    rows: list

    @property
    def selected(self) -> str:
        return next(r["label"] for r in self.rows if r["selected"])

    def to_csv(self, path_or_file):
        fields = ["label", "avg_degree", "i_n0", "i_r0", "info_ratio", "selected"]
        _write_rows(path_or_file, fields, self.rows)


def compare_weights(x, candidates) -> WeightComparison:
    """Unrestricted and restricted null information for each labelled candidate.

    ``candidates`` is a mapping or a sequence of ``(label, WeightMatrix)`` pairs.
    """
    items = list(candidates.items()) if isinstance(candidates, dict) else list(candidates)
    if not items:
        raise ValidationError("no candidate weight matrices given")
    for label, w in items:
        if not isinstance(w, WeightMatrix):
            raise ValidationError(f"candidate {label!r} is not a WeightMatrix")
    n = items[0][1].n
    x = as_design(x, n=n)
    rows = []
    for label, w in items:
        if w.n != n or x.n != n:
            raise DimensionError(f"candidate {label!r} has n={w.n}, expected {x.n}")
        w.to_graph().check_no_isolates()
        i_n0 = null_information_unrestricted(w)
        i_r0 = build_residual_space(x, w).i_r0
        rows.append({
            "label": label,
            "avg_degree": w.average_degree(),
            "i_n0": i_n0,
            "i_r0": i_r0,
            "info_ratio": i_r0 / i_n0,
        })
    rows.sort(key=lambda r: -r["i_r0"])
    for k, row in enumerate(rows):
        row["selected"] = k == 0
    return WeightComparison(rows)
