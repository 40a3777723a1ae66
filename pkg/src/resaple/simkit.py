"""Monte Carlo harness for the spatial error model.

A study is a list of design points (topology, n, p) crossed with a grid of
true ``rho`` values and a set of candidate weight matrices. Replicate ``k`` of
design point ``d`` at grid index ``j`` draws all of its randomness from
``SeedSequence([master_seed, d, j, k])``, so every table is a pure function of
the configuration and does not depend on how many worker threads ran it.

Output is long format with columns
``design_id,topology,n,p,w_label,method,rho_true,metric,value,mc_se``.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import yaml
from scipy import linalg

from .errors import DimensionError, ResapleError, SingularityError, ValidationError
from .estimators import RemlProblem, default_interval, quadratic_operators, ratio_batch
from .inference import exact_test, permutation_pvalues, z_test
from .residual_space import DesignMatrix, build_residual_space
from .weights import AdjacencyGraph, b07_like, build_knn, build_lattice, read_edge_csv, row_standardize

__all__ = [
    "SimDesign",
    "MetricRow",
    "OUTPUT_COLUMNS",
    "ESTIMATION_METHODS",
    "POWER_METHODS",
    "resolve_threads",
    "build_covariates",
    "covariate_coefficients",
    "generate_sem",
    "replicate_seed",
    "load_designs",
    "run_estimation_study",
    "run_power_study",
    "run_study",
    "write_metrics",
    "with_replicates",
]

log = logging.getLogger(__name__)

OUTPUT_COLUMNS = ["design_id", "topology", "n", "p", "w_label", "method", "rho_true", "metric", "value", "mc_se"]
ESTIMATION_METHODS = ("moran", "aple", "maple", "resaple", "reml")
POWER_METHODS = ("resaple_exact", "resaple_perm", "resaple_z", "moran_perm", "aple_perm", "maple_perm")
TOPOLOGIES = ("lattice_queen", "lattice_rook", "custom_graph")
DEFAULT_RHO_GRID = tuple(round(0.05 * i, 10) for i in range(20))
DESK_REPLICATES = 500
FULL_REPLICATES = 2000
CHUNK = 32  # replicates per work unit; fixed so results never depend on thread count


def resolve_threads(threads=None) -> int:
    """Worker count from the argument or ``RESAPLE_THREADS`` (0 or unset = all CPUs)."""
    if threads is None:
        raw = os.environ.get("RESAPLE_THREADS", "0").strip() or "0"
        try:
            threads = int(raw)
        except ValueError:
            raise ValidationError(f"RESAPLE_THREADS must be an integer, got {raw!r}") from None
    if threads < 0:
        raise ValidationError(f"thread count must be >= 0, got {threads}")
    return threads or (os.cpu_count() or 1)


def replicate_seed(master, design_index, rho_index, replicate) -> np.random.SeedSequence:
    return np.random.SeedSequence([int(master), int(design_index), int(rho_index), int(replicate)])


# -- data generation ---------------------------------------------------------------


def covariate_coefficients(p) -> np.ndarray:
    """``beta_1 = 1`` and ``beta_j = 0.6 / sqrt(j - 1)`` for ``j >= 2``."""
    j = np.arange(2, p + 1)
    return np.concatenate([[1.0], 0.6 / np.sqrt(j - 1)])


def _standardize(v):
    return (v - v.mean()) / v.std(ddof=1)


def build_covariates(coords, n, p, seed) -> tuple[DesignMatrix, np.ndarray]:
    """Intercept, noisy standardised coordinates, then standardised Gaussians."""
    p, n = int(p), int(n)
    if p < 1:
        raise ValidationError(f"p must be at least 1 (the intercept), got {p}")
    if p >= n:
        raise DimensionError(f"need p < n, got p={p}, n={n}")
    coords = None if coords is None else np.asarray(coords, dtype=float)
    if p >= 2 and (coords is None or coords.shape != (n, 2)):
        raise DimensionError(f"coordinates of shape ({n}, 2) are required when p >= 2")
    rng = np.random.default_rng(seed)
    cols = [np.ones(n)]
    for j in range(1, p):
        if j <= 2:
            base = _standardize(coords[:, j - 1]) + rng.normal(0.0, 0.1, n)
        else:
            base = rng.standard_normal(n)
        cols.append(_standardize(base))
    return DesignMatrix(np.column_stack(cols)), covariate_coefficients(p)


class _SemSolver:
    """LU factorisation of ``I - rho W`` reused across draws."""

    def __init__(self, w, rho):
        wm = w.w if hasattr(w, "w") else np.asarray(w, dtype=float)
        r = np.eye(wm.shape[0]) - float(rho) * wm
        lu, piv = linalg.lu_factor(r, check_finite=False)
        d = np.abs(np.diag(lu))
        if d.min() <= 1e-12 * max(d.max(), 1.0):
            raise SingularityError(f"I - rho W is singular at rho = {rho}")
        self._lu = (lu, piv)

    def solve(self, eps):
        return linalg.lu_solve(self._lu, eps, check_finite=False)


def generate_sem(x, beta, w, rho, sigma, seed) -> np.ndarray:
    """Draw ``z = X beta + u`` with ``(I - rho W) u = eps``, ``eps ~ N(0, sigma^2 I)``."""
    x = x.x if isinstance(x, DesignMatrix) else np.atleast_2d(np.asarray(x, dtype=float))
    beta = np.asarray(beta, dtype=float)
    if x.shape[1] != beta.size:
        raise DimensionError(f"X has {x.shape[1]} columns but beta has {beta.size} entries")
    eps = np.random.default_rng(seed).normal(0.0, float(sigma), x.shape[0])
    return x @ beta + _SemSolver(w, rho).solve(eps)


# -- designs -----------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class SimDesign:
    """One design point plus the Monte Carlo settings applied to it."""

    design_id: str
    topology: str
    graph: AdjacencyGraph = field(repr=False)
    p: int
    rho_grid: tuple = DEFAULT_RHO_GRID
    sigma: float = 1.0
    replicates: int = DESK_REPLICATES
    seeds: tuple = (0,)
    weights: tuple = ()
    alpha: float = 0.05
    permutations: int = 199
    methods: tuple = ()
    index: int = 0

    @property
    def n(self) -> int:
        return self.graph.n

    def candidate_weights(self) -> dict:
        out = {}
        for label in self.weights:
            if label in ("queen", "rook"):
                side = int(round(math.sqrt(self.n)))
                if side * side != self.n or self.topology == "custom_graph":
                    raise ValidationError(f"{label!r} weights need a square lattice topology")
                g = build_lattice(side, side, label)
            elif label.startswith("knn") and label[3:].isdigit():
                if self.graph.coords is None:
                    raise ValidationError(f"{label!r} weights need coordinates")
                g = build_knn(self.graph.coords, int(label[3:]))
            elif label == "adjacency":
                g = self.graph
            else:
                raise ValidationError(f"unknown weight label {label!r}")
            out[label] = row_standardize(g)
        return out

    def validate(self):
        if self.p >= self.n:
            raise DimensionError(f"{self.design_id}: need p < n, got p={self.p}, n={self.n}")
        if self.replicates < 1:
            raise ValidationError(f"{self.design_id}: replicates must be positive")
        if not 0 < self.alpha < 1:
            raise ValidationError(f"{self.design_id}: alpha must lie in (0, 1)")
        for label, w in self.candidate_weights().items():
            lo, hi = default_interval(w)
            bad = [r for r in self.rho_grid if not lo < r < hi]
            if bad:
                raise ValidationError(f"{self.design_id}: rho values {bad} outside the valid region for {label}")
        return self


def _rho_grid(spec):
    if spec is None:
        return DEFAULT_RHO_GRID
    if isinstance(spec, dict):
        start, stop, step = (float(spec[k]) for k in ("start", "stop", "step"))
        count = int(math.floor((stop - start) / step + 1e-9)) + 1
        return tuple(round(start + i * step, 10) for i in range(count))
    return tuple(float(r) for r in spec)


def _as_list(v):
    return list(v) if isinstance(v, (list, tuple)) else [v]


_DEFAULT_WEIGHTS = {"lattice_queen": ("queen",), "lattice_rook": ("rook",), "custom_graph": ("adjacency",)}
_ENTRY_KEYS = {
    "topology", "m", "p", "graph", "edges", "coords", "name", "rho_grid", "sigma", "replicates",
    "seeds", "seed", "weights", "alpha", "permutations", "methods",
}


def _custom_graph(entry, base):
    if "graph" in entry:
        if entry["graph"] != "b07_like":
            raise ValidationError(f"unknown built-in graph {entry['graph']!r}")
        return b07_like(), entry.get("name", "b07_like")
    if "edges" not in entry:
        raise ValidationError("custom_graph designs need 'graph' or 'edges'")
    g = read_edge_csv(base / entry["edges"])
    if "coords" in entry:
        c = np.loadtxt(base / entry["coords"], delimiter=",", skiprows=1, ndmin=2)
        g = AdjacencyGraph(g.adjacency, c[:, -2:])
    return g, entry.get("name", Path(entry["edges"]).stem)


def load_designs(config, full_scale=None, base_dir=".") -> tuple[str, list[SimDesign]]:
    """Parse a study configuration (a mapping, or a YAML/JSON file path).

    Top-level keys: ``study`` (``estimation`` or ``power``), ``seed``,
    ``full_scale`` and ``designs``. Each design entry may list several ``m``
    (lattice side) and ``p`` values; they expand into one design point each.
    """
    if not isinstance(config, dict):
        path = Path(config)
        base_dir = path.parent
        text = path.read_text()
        config = json.loads(text) if path.suffix == ".json" else yaml.safe_load(text)
        if not isinstance(config, dict):
            raise ValidationError(f"{path}: configuration must be a mapping")
    base = Path(base_dir)
    study = config.get("study", "estimation")
    if study not in ("estimation", "power"):
        raise ValidationError(f"study must be 'estimation' or 'power', got {study!r}")
    if full_scale is None:
        full_scale = bool(config.get("full_scale", False))
    default_k = FULL_REPLICATES if full_scale else DESK_REPLICATES
    master = config.get("seed")
    entries = config.get("designs")
    if not entries:
        raise ValidationError("configuration has no designs")
    default_methods = ESTIMATION_METHODS if study == "estimation" else POWER_METHODS
    designs = []
    for entry in entries:
        unknown = set(entry) - _ENTRY_KEYS
        if unknown:
            raise ValidationError(f"unknown design keys {sorted(unknown)}")
        topology = entry.get("topology", "lattice_queen")
        if topology not in TOPOLOGIES:
            raise ValidationError(f"unknown topology {topology!r}; choose from {TOPOLOGIES}")
        seeds = entry.get("seeds", entry.get("seed", master))
        if seeds is None:
            raise ValidationError("a seed is required (top-level 'seed' or per-design 'seeds')")
        methods = tuple(entry.get("methods", default_methods))
        allowed = ESTIMATION_METHODS if study == "estimation" else POWER_METHODS
        bad = [m for m in methods if m not in allowed]
        if bad:
            raise ValidationError(f"methods {bad} are not available in a {study} study")
        if topology == "custom_graph":
            graphs = [_custom_graph(entry, base)]
        else:
            scheme = topology.split("_")[1]
            graphs = [(build_lattice(m, m, scheme), f"{topology}_m{m}") for m in _as_list(entry.get("m", 10))]
        for g, name in graphs:
            for p in _as_list(entry.get("p", 1)):
                designs.append(SimDesign(
                    design_id=f"{name}_n{g.n}_p{int(p)}",
                    topology=topology,
                    graph=g,
                    p=int(p),
                    rho_grid=_rho_grid(entry.get("rho_grid")),
                    sigma=float(entry.get("sigma", 1.0)),
                    replicates=int(entry.get("replicates", default_k)),
                    seeds=tuple(int(s) for s in _as_list(seeds)),
                    weights=tuple(entry.get("weights", _DEFAULT_WEIGHTS[topology])),
                    alpha=float(entry.get("alpha", 0.05)),
                    permutations=int(entry.get("permutations", 199)),
                    methods=methods,
                    index=len(designs),
                ))
    return study, [d.validate() for d in designs]


# -- reduction helpers -------------------------------------------------------------


@dataclass(frozen=True)
class MetricRow:
    design_id: str
    topology: str
    n: int
    p: int
    w_label: str
    method: str
    rho_true: float
    metric: str
    value: float
    mc_se: float | None

    def as_dict(self):
        return {k: getattr(self, k) for k in OUTPUT_COLUMNS}


def _estimation_metrics(est, rho):
    """``(metric, value, mc_se)`` for bias, SD and RMSE of one estimator."""
    k = est.size
    if k == 0:
        return [("bias", math.nan, math.nan), ("sd", math.nan, math.nan), ("rmse", math.nan, math.nan)]
    err = est - rho
    bias = float(err.mean())
    sd = float(est.std(ddof=0))
    sq = err * err
    rmse = float(math.sqrt(sq.mean()))
    se_bias = sd / math.sqrt(k)
    se_sd = sd / math.sqrt(2 * k)
    se_rmse = float(sq.std(ddof=0) / math.sqrt(k) / (2 * rmse)) if rmse > 0 else 0.0
    return [("bias", bias, se_bias), ("sd", sd, se_sd), ("rmse", rmse, se_rmse)]


def _chunks(total):
    return [(lo, min(lo + CHUNK, total)) for lo in range(0, total, CHUNK)]


def _map_ordered(fn, jobs, threads):
    if threads <= 1 or len(jobs) <= 1:
        return [fn(*j) for j in jobs]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(lambda j: fn(*j), jobs))


def _draw(design, rho_index, master, k):
    """Error vector and permutation seed of one replicate."""
    data_ss, perm_ss = replicate_seed(master, design.index, rho_index, k).spawn(2)
    eps = np.random.default_rng(data_ss).normal(0.0, design.sigma, design.n)
    return eps, int(perm_ss.generate_state(1, dtype=np.uint64)[0])


def _replicate_plan(design):
    """``(master_seed, replicate_index)`` pairs pooled across the design's seeds."""
    return [(s, k) for s in design.seeds for k in range(design.replicates)]


class _Prepared:
    """Per-(design, candidate) objects that are fixed across replicates."""

    def __init__(self, w, x, with_reml):
        self.w = w
        self.s = build_residual_space(x, w)
        self.ops = quadratic_operators(self.s)
        self.reml = RemlProblem(x, w) if with_reml else None


# -- studies ---------------------------------------------------------------------


def _design_setup(design):
    x, beta = build_covariates(
        design.graph.coords, design.n, design.p, np.random.SeedSequence([design.seeds[0], design.index])
    )
    return x, beta


def run_estimation_study(design: SimDesign, threads=None) -> list[MetricRow]:
    """Bias, SD and RMSE of each estimator at every ``rho`` on the grid.

    Data are generated under each candidate ``W`` and analysed with the same
    ``W``. Estimator failures (degenerate ratios, REML optimiser errors) are
    dropped from the summaries and reported in the ``failures`` metric.
    """
    threads = resolve_threads(threads)
    x, beta = _design_setup(design)
    xb = x.x @ beta
    one_step = [m for m in design.methods if m != "reml"]
    with_reml = "reml" in design.methods
    plan = _replicate_plan(design)
    rows = []
    for label, w in design.candidate_weights().items():
        prep = _Prepared(w, x, with_reml)
        for j, rho in enumerate(design.rho_grid):
            solver = _SemSolver(w, rho)

            def work(lo, hi):
                z = np.stack([xb + solver.solve(_draw(design, j, m, k)[0]) for m, k in plan[lo:hi]])
                e = z @ prep.s.h
                out = {m: ratio_batch(e, *prep.ops[m]) for m in one_step}
                if with_reml:
                    vals = np.full(hi - lo, np.nan)
                    for i in range(hi - lo):
                        try:
                            vals[i] = prep.reml.fit(z[i]).rho_hat
                        except ResapleError as exc:
                            log.debug("reml failure in %s: %s", design.design_id, exc)
                    out["reml"] = vals
                return out

            parts = _map_ordered(work, _chunks(len(plan)), threads)
            for method in design.methods:
                est = np.concatenate([part[method] for part in parts])
                ok = est[np.isfinite(est)]
                for metric, value, se in _estimation_metrics(ok, rho):
                    rows.append(_row(design, label, method, rho, metric, value, se))
                rows.append(_row(design, label, method, rho, "failures", float(est.size - ok.size), None))
    return rows


def _row(design, label, method, rho, metric, value, se):
    return MetricRow(design.design_id, design.topology, design.n, design.p, label, method,
                     float(rho), metric, float(value), None if se is None else float(se))


def _power_replicate(prep, z, methods, design, perm_seed):
    """``{method: p_value or nan}`` for one replicate."""
    out = {}
    e = z @ prep.s.h
    perm_stats = [m[: -len("_perm")] for m in methods if m.endswith("_perm")]
    if perm_stats:
        try:
            res = permutation_pvalues(prep.s, z, perm_stats, "freedman_lane", design.permutations,
                                      perm_seed, "greater", prep.ops)
            for name, r in res.items():
                out[f"{name}_perm"] = r.p_value
        except ResapleError:
            for name in perm_stats:
                out[f"{name}_perm"] = math.nan
    for method, fn in (("resaple_exact", exact_test), ("resaple_z", z_test)):
        if method in methods:
            try:
                out[method] = fn(prep.s, e, "greater").p_value
            except ResapleError:
                out[method] = math.nan
    return out


def run_power_study(design: SimDesign, threads=None) -> list[MetricRow]:
    """One-sided (``rho > 0``) rejection rates at level ``alpha``.

    Each candidate ``W`` generates the data and is used for the analysis.
    Permutation tests use Freedman-Lane with ``design.permutations`` draws.
    Every row also carries the candidate's restricted null information
    (``i_r0``) and the number of failed replicates.
    """
    threads = resolve_threads(threads)
    x, beta = _design_setup(design)
    xb = x.x @ beta
    plan = _replicate_plan(design)
    rows = []
    for label, w in design.candidate_weights().items():
        prep = _Prepared(w, x, False)
        for j, rho in enumerate(design.rho_grid):
            solver = _SemSolver(w, rho)

            def work(lo, hi):
                out = []
                for m, k in plan[lo:hi]:
                    eps, perm_seed = _draw(design, j, m, k)
                    out.append(_power_replicate(prep, xb + solver.solve(eps), design.methods, design, perm_seed))
                return out

            results = [r for part in _map_ordered(work, _chunks(len(plan)), threads) for r in part]
            for method in design.methods:
                p = np.array([r[method] for r in results])
                ok = p[np.isfinite(p)]
                k = ok.size
                rate = float(np.mean(ok <= design.alpha)) if k else math.nan
                se = math.sqrt(rate * (1 - rate) / k) if k else math.nan
                rows.append(_row(design, label, method, rho, "rejection_rate", rate, se))
                rows.append(_row(design, label, method, rho, "failures", float(p.size - k), None))
                rows.append(_row(design, label, method, rho, "i_r0", prep.s.i_r0, None))
    return rows


def run_study(study, designs, threads=None) -> list[MetricRow]:
    runner = run_estimation_study if study == "estimation" else run_power_study
    rows = []
    for d in designs:
        log.info("running %s study for %s", study, d.design_id)
        rows.extend(runner(d, threads))
    return rows


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_metrics(rows, path_or_file):
    """Write rows as CSV; floats use ``repr`` so output is byte-stable."""
    def dump(fh):
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(OUTPUT_COLUMNS)
        for r in rows:
            writer.writerow([_fmt(v) for v in r.as_dict().values()])

    if hasattr(path_or_file, "write"):
        dump(path_or_file)
    else:
        with open(path_or_file, "w", newline="") as fh:
            dump(fh)


def with_replicates(design: SimDesign, k: int) -> SimDesign:
    return replace(design, replicates=int(k))
