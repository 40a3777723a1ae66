"""Spatial weight matrices: graph builders, normalisation, degree identities and file I/O.

Graphs are stored densely. Unit ``i`` of an ``rows x cols`` lattice sits at
row ``i // cols`` and column ``i % cols`` and carries the 1-based coordinate
``(col + 1, row + 1)``.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DimensionError, IsolatedUnitError, ValidationError

__all__ = [
    "AdjacencyGraph",
    "WeightMatrix",
    "build_lattice",
    "build_knn",
    "b07_like",
    "row_standardize",
    "raw_weights",
    "degree_identities",
    "null_information_unrestricted",
    "read_weights",
    "write_weights",
    "read_edge_csv",
]

ROW_SUM_TOL = 1e-12


def _frozen(a):
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class AdjacencyGraph:
    """Directed neighbour structure on ``n`` units.

    Parameters
    ----------
    adjacency : ndarray, shape (n, n)
        Non-negative edge weights; ``adjacency[i, j] > 0`` means ``j`` is a
        neighbour of ``i``. Binary graphs use 1 for every edge.
    coords : ndarray, shape (n, 2), optional
        Planar coordinates of the units.
    """

    adjacency: np.ndarray
    coords: np.ndarray | None = None

    def __post_init__(self):
        a = np.asarray(self.adjacency, dtype=float)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise DimensionError(f"adjacency must be square, got shape {a.shape}")
        if not np.all(np.isfinite(a)):
            raise ValidationError("adjacency contains non-finite entries")
        if np.any(a < 0):
            raise ValidationError("adjacency contains negative weights")
        if np.any(np.diag(a) != 0):
            raise ValidationError("adjacency must have a zero diagonal (self-neighbours found)")
        object.__setattr__(self, "adjacency", _frozen(a))
        if self.coords is not None:
            c = np.asarray(self.coords, dtype=float)
            if c.shape != (a.shape[0], 2):
                raise DimensionError(f"coords must have shape ({a.shape[0]}, 2), got {c.shape}")
            object.__setattr__(self, "coords", _frozen(c))

    @classmethod
    def from_edges(cls, n, edges, coords=None, symmetric=False):
        """Build a graph from ``(i, j)`` or ``(i, j, w)`` tuples with 0-based indices."""
        n = int(n)
        if n < 1:
            raise DimensionError("n must be positive")
        a = np.zeros((n, n))
        for edge in edges:
            i, j = int(edge[0]), int(edge[1])
            w = float(edge[2]) if len(edge) > 2 else 1.0
            if not (0 <= i < n and 0 <= j < n):
                raise ValidationError(f"edge ({i}, {j}) has an index outside [0, {n})")
            if i == j:
                raise ValidationError(f"self-loop on unit {i}")
            a[i, j] = w
            if symmetric:
                a[j, i] = w
        return cls(a, coords)

    @property
    def n(self) -> int:
        return self.adjacency.shape[0]

    @property
    def degrees(self) -> np.ndarray:
        """Out-degrees ``d_i``: the number of neighbours of each unit."""
        return np.count_nonzero(self.adjacency, axis=1)

    @property
    def edges(self) -> list[tuple[int, int]]:
        """Ordered pairs ``(i, j)`` with a nonzero entry."""
        i, j = np.nonzero(self.adjacency)
        return list(zip(i.tolist(), j.tolist()))

    @property
    def is_symmetric(self) -> bool:
        return bool(np.array_equal(self.adjacency, self.adjacency.T))

    def undirected_edges(self) -> set[frozenset]:
        return {frozenset(e) for e in self.edges}

    def check_no_isolates(self):
        isolated = np.flatnonzero(self.degrees == 0)
        if isolated.size:
            raise IsolatedUnitError(isolated.tolist())

    def permuted(self, perm):
        """Relabel units so that new unit ``k`` is old unit ``perm[k]``."""
        perm = np.asarray(perm)
        coords = None if self.coords is None else self.coords[perm]
        return AdjacencyGraph(self.adjacency[np.ix_(perm, perm)], coords)


@dataclass(frozen=True, eq=False)
class WeightMatrix:
    """Dense spatial weight matrix with zero diagonal.

    ``normalization`` is ``"row"`` for row-standardised weights and ``"raw"``
    otherwise.
    """

    w: np.ndarray
    normalization: str = "raw"

    def __post_init__(self):
        w = np.asarray(self.w, dtype=float)
        if w.ndim != 2 or w.shape[0] != w.shape[1]:
            raise DimensionError(f"weight matrix must be square, got shape {w.shape}")
        if not np.all(np.isfinite(w)):
            raise ValidationError("weight matrix contains non-finite entries")
        if np.any(np.diag(w) != 0):
            raise ValidationError("weight matrix must have a zero diagonal")
        if self.normalization not in ("row", "raw"):
            raise ValidationError(f"unknown normalization {self.normalization!r}")
        if self.normalization == "row":
            sums = w.sum(axis=1)
            bad = np.flatnonzero(np.abs(sums - 1.0) > ROW_SUM_TOL)
            if bad.size:
                raise ValidationError(
                    f"rows {bad[:10].tolist()} of a row-standardised matrix do not sum to 1"
                )
        object.__setattr__(self, "w", _frozen(w))

    @property
    def n(self) -> int:
        return self.w.shape[0]

    @property
    def is_symmetric(self) -> bool:
        return bool(np.allclose(self.w, self.w.T, rtol=0, atol=1e-14))

    def to_graph(self) -> AdjacencyGraph:
        return AdjacencyGraph(self.w)

    def average_degree(self) -> float:
        return float(np.count_nonzero(self.w) / self.n)


def build_lattice(rows, cols, scheme="queen") -> AdjacencyGraph:
    """Rook (4-neighbour) or queen (8-neighbour) contiguity on a regular grid."""
    rows, cols = int(rows), int(cols)
    if rows < 1 or cols < 1 or rows * cols < 2:
        raise DimensionError(f"lattice needs at least 2 cells, got {rows}x{cols}")
    if scheme == "rook":
        offsets = [(-1, 0), (1, 0), (0, -1), (0, 1)]
    elif scheme == "queen":
        offsets = [(dr, dc) for dr in (-1, 0, 1) for dc in (-1, 0, 1) if (dr, dc) != (0, 0)]
    else:
        raise ValidationError(f"unknown contiguity scheme {scheme!r}; use 'rook' or 'queen'")
    n = rows * cols
    a = np.zeros((n, n))
    for r in range(rows):
        for c in range(cols):
            i = r * cols + c
            for dr, dc in offsets:
                rr, cc = r + dr, c + dc
                if 0 <= rr < rows and 0 <= cc < cols:
                    a[i, rr * cols + cc] = 1.0
    rr, cc = np.divmod(np.arange(n), cols)
    coords = np.column_stack([cc + 1, rr + 1]).astype(float)
    return AdjacencyGraph(a, coords)


def build_knn(coords, k) -> AdjacencyGraph:
    """Symmetrised k-nearest-neighbour graph (union of the directed relations).

    Equal distances are resolved in favour of the lower unit index.
    """
    coords = np.asarray(coords, dtype=float)
    if coords.ndim != 2 or coords.shape[1] != 2:
        raise DimensionError("coords must have shape (n, 2)")
    n = coords.shape[0]
    k = int(k)
    if k < 1 or k >= n:
        raise ValidationError(f"k must satisfy 1 <= k < n = {n}, got {k}")
    diff = coords[:, None, :] - coords[None, :, :]
    dist = np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))
    np.fill_diagonal(dist, np.inf)
    # a stable sort keeps lower indices first among equal distances
    order = np.argsort(dist, axis=1, kind="stable")[:, :k]
    a = np.zeros((n, n))
    a[np.repeat(np.arange(n), k), order.ravel()] = 1.0
    a = np.maximum(a, a.T)
    return AdjacencyGraph(a, coords)


# Stacked triangulation of 8 points: a maximally connected planar graph (3n - 6 = 18
# edges) with strongly irregular degrees. It stands in for the B-series graphs of
# the APLE literature, whose exact entries are not reproduced here.
_B07_LIKE_EDGES = [
    (0, 1), (1, 2), (0, 2),
    (3, 0), (3, 1), (3, 2),
    (4, 0), (4, 1), (4, 3),
    (5, 0), (5, 3), (5, 4),
    (6, 0), (6, 4), (6, 5),
    (7, 1), (7, 2), (7, 3),
]


def b07_like() -> AdjacencyGraph:
    """Placeholder "B07-like" 8-unit maximal planar graph on the unit circle.

    This is NOT the B07 matrix itself; supply the real edge list through
    :func:`read_weights` when it is available.
    """
    angles = 2 * np.pi * np.arange(8) / 8
    coords = np.column_stack([np.cos(angles), np.sin(angles)])
    return AdjacencyGraph.from_edges(8, _B07_LIKE_EDGES, coords=coords, symmetric=True)


def row_standardize(g: AdjacencyGraph) -> WeightMatrix:
    """``W = D^{-1} A`` with ``D`` the diagonal of row sums."""
    g.check_no_isolates()
    a = g.adjacency
    w = a / a.sum(axis=1, keepdims=True)
    return WeightMatrix(w, "row")


def raw_weights(g: AdjacencyGraph) -> WeightMatrix:
    return WeightMatrix(g.adjacency, "raw")


def degree_identities(g: AdjacencyGraph) -> tuple[float, float]:
    """Closed-form traces of row-standardised binary weights.

    Returns
    -------
    tr_wtw : float
        ``Tr(W'W) = sum_i 1 / d_i``
    tr_w2 : float
        ``Tr(W^2) = sum_{i,j} a_ij a_ji / (d_i d_j)``
    """
    g.check_no_isolates()
    a = (g.adjacency != 0).astype(float)
    inv_d = 1.0 / g.degrees
    tr_wtw = float(inv_d.sum())
    tr_w2 = float(inv_d @ (a * a.T) @ inv_d)
    return tr_wtw, tr_w2


def null_information_unrestricted(w) -> float:
    """``Tr(W'W) + Tr(W^2) = 2 Tr(K^2)`` computed from the dense matrix."""
    w = w.w if isinstance(w, WeightMatrix) else np.asarray(w, dtype=float)
    return float(np.sum(w * w) + np.sum(w * w.T))


# --------------------------------------------------------------------- file I/O


def write_weights(w: WeightMatrix, path):
    """Write the JSON weights format ``{"n", "normalization", "edges": [[i, j, w], ...]}``."""
    i, j = np.nonzero(w.w)
    doc = {
        "n": w.n,
        "normalization": w.normalization,
        "edges": [[int(a), int(b), float(w.w[a, b])] for a, b in zip(i, j)],
    }
    Path(path).write_text(json.dumps(doc) + "\n")


def _weights_from_edges(n, edges, normalization):
    g = AdjacencyGraph.from_edges(n, edges)
    if normalization == "row":
        return WeightMatrix(g.adjacency, "row")
    return WeightMatrix(g.adjacency, "raw")


def read_weights(path, row_standardize_edges=True) -> WeightMatrix:
    """Load weights from a JSON weights file or an ``i,j,w`` edge-list CSV.

    JSON files carry their own normalisation tag. An edge list is treated as a
    raw graph and row-standardised unless ``row_standardize_edges`` is false.
    """
    path = Path(path)
    if path.suffix.lower() == ".json":
        try:
            doc = json.loads(path.read_text())
            n = int(doc["n"])
            norm = doc.get("normalization", "raw")
            edges = doc["edges"]
        except (KeyError, TypeError, json.JSONDecodeError) as exc:
            raise ValidationError(f"{path}: malformed weights JSON ({exc})") from exc
        if norm not in ("row", "raw"):
            raise ValidationError(f"{path}: normalization must be 'row' or 'raw', got {norm!r}")
        return _weights_from_edges(n, edges, norm)
    g = read_edge_csv(path)
    return row_standardize(g) if row_standardize_edges else raw_weights(g)


def read_edge_csv(path, n=None) -> AdjacencyGraph:
    """Read a CSV with header ``i,j,w`` (``w`` optional) into a graph.

    ``n`` defaults to one more than the largest index seen.
    """
    edges = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"i", "j"} <= set(reader.fieldnames):
            raise ValidationError(f"{path}: edge list needs an 'i,j[,w]' header")
        for lineno, row in enumerate(reader, start=2):
            try:
                w = float(row["w"]) if row.get("w") not in (None, "") else 1.0
                edges.append((int(row["i"]), int(row["j"]), w))
            except ValueError as exc:
                raise ValidationError(f"{path}:{lineno}: {exc}") from exc
    if n is None:
        n = 1 + max(max(i, j) for i, j, _ in edges) if edges else 0
    return AdjacencyGraph.from_edges(n, edges)
