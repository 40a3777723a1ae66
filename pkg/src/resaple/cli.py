"""Command-line interface.

Exit codes: 0 success, 2 usage error, 3 invalid data or configuration,
4 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
from pathlib import Path

import numpy as np
import yaml

from .dataset import read_coords, read_dataset
from .errors import DimensionError, NumericalError, ResapleError, ValidationError
from .esda import compare_weights, scatter_coordinates
from .estimators import ALL_METHODS, estimate_all
from .inference import SCHEMES, SIDES, exact_test, local_tests, permutation_test_space, z_test
from .residual_space import build_residual_space
from .simkit import load_designs, resolve_threads, run_study, with_replicates, write_metrics
from .weights import (
    b07_like,
    build_knn,
    build_lattice,
    raw_weights,
    read_edge_csv,
    read_weights,
    row_standardize,
    write_weights,
)

EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_NUMERICAL = 4


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if v is None:
        return ""
    return str(v)


def _emit_rows(rows, fields, out):
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(fields)
    for row in rows:
        writer.writerow([_fmt(row.get(f)) for f in fields])


def _open_out(path):
    return open(path, "w", newline="") if path else None


def _write_table(rows, fields, path, as_json):
    rows = list(rows)
    if as_json:
        text = json.dumps(rows, indent=2, default=float) + "\n"
        if path:
            with open(path, "w") as fh:
                fh.write(text)
        else:
            sys.stdout.write(text)
        return
    if path:
        with _open_out(path) as fh:
            _emit_rows(rows, fields, fh)
    else:
        _emit_rows(rows, fields, sys.stdout)


def _parse_dims(text):
    try:
        r, c = (int(v) for v in text.lower().split("x"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected ROWSxCOLS, got {text!r}") from None
    return r, c


def _csv_list(text):
    return [t.strip() for t in text.split(",") if t.strip()]


# -- shared data loading -----------------------------------------------------------


def _load(args):
    data = read_dataset(
        args.data,
        args.response,
        args.covariates,
        intercept=not args.no_intercept,
        id_col=args.id_col,
        coord_cols=args.coords,
        standardize_coords=args.standardize_coords,
    )
    w = read_weights(args.weights, row_standardize_edges=not args.raw_weights)
    if w.n != data.n:
        raise DimensionError(f"weights describe {w.n} units but {args.data} has {data.n} rows")
    w.to_graph().check_no_isolates()
    return data, w


def _space(args):
    data, w = _load(args)
    s = build_residual_space(data.x, w)
    return data, s, data.z @ s.h


# -- subcommands -------------------------------------------------------------------


def cmd_weights(args):
    if args.lattice:
        g = build_lattice(*args.lattice, args.scheme)
    elif args.knn is not None:
        if not args.coords_file:
            raise ValidationError("--knn needs --coords FILE")
        g = build_knn(read_coords(args.coords_file, args.coord_cols, args.standardize_coords), args.knn)
    elif args.edges:
        g = read_edge_csv(args.edges, n=args.n)
    else:
        g = b07_like()
    g.check_no_isolates()
    w = raw_weights(g) if args.raw else row_standardize(g)
    write_weights(w, args.output)
    sys.stdout.write(f"wrote {args.output}: n={w.n} links={len(g.edges)} normalization={w.normalization}\n")


_ESTIMATE_FIELDS = ["method", "rho_hat", "numerator", "denominator", "sigma2_hat", "loglik", "boundary"]


def cmd_estimate(args):
    data, w = _load(args)
    results = estimate_all(data.z, data.x, w, args.methods)
    _write_table((r.as_dict() for r in results), _ESTIMATE_FIELDS, args.output, args.json)


_TEST_FIELDS = ["statistic_name", "statistic", "p_value", "method", "side", "permutations", "seed", "min_attainable_p"]


def cmd_test(args):
    data, s, e = _space(args)
    if args.method == "exact":
        res = exact_test(s, e, args.side)
    elif args.method == "z":
        res = z_test(s, e, args.side)
    else:
        if args.seed is None or args.permutations is None:
            raise _Usage("--method perm requires --permutations L and --seed S")
        res = permutation_test_space(s, data.z, args.scheme, args.permutations, args.seed, args.side, args.statistic)
    _write_table([res.as_dict()], _TEST_FIELDS, args.output, args.json)


def cmd_local(args):
    data, s, e = _space(args)
    res = local_tests(s, e, args.permutations, args.seed, args.fdr_q, ids=data.ids)
    fields = ["id", "c_i", "s_i", "p_value", "p_adjusted", "significant"]
    _write_table(res.rows(), fields, args.output, args.json)
    if args.output:
        sys.stdout.write(f"rho_hat={res.rho_hat!r} significant={int(res.significant.sum())}\n")


def cmd_scatter(args):
    data, s, e = _space(args)
    sc = scatter_coordinates(s, e, ids=data.ids)
    fields = ["id", "x_tilde", "y_tilde", "c_i", "s_i", "leverage"]
    _write_table(sc.rows(), fields, args.output, args.json)
    if args.output:
        sys.stdout.write(f"rho_hat={sc.rho_hat!r}\n")


def _candidate_graphs(args, coords):
    out = []
    for spec in args.candidate or []:
        label, sep, path = spec.partition("=")
        if not sep or not label or not path:
            raise _Usage(f"--candidate expects LABEL=PATH, got {spec!r}")
        out.append((label, read_weights(path, row_standardize_edges=not args.raw_weights)))
    for label in args.labels or []:
        if label in ("rook", "queen"):
            if not args.lattice:
                raise _Usage(f"candidate {label!r} needs --lattice ROWSxCOLS")
            g = build_lattice(*args.lattice, label)
        elif label.startswith("knn") and label[3:].isdigit():
            if coords is None:
                raise _Usage(f"candidate {label!r} needs --lattice or coordinates")
            g = build_knn(coords, int(label[3:]))
        else:
            raise ValidationError(f"unknown candidate label {label!r}")
        out.append((label, row_standardize(g)))
    if not out:
        raise _Usage("give at least one --candidate LABEL=PATH or --labels")
    return out


def cmd_compare_weights(args):
    coords, x = None, None
    if args.lattice:
        coords = build_lattice(*args.lattice, "rook").coords
    if args.data:
        if not args.response:
            raise _Usage("--data needs --response")
        data = read_dataset(
            args.data, args.response, args.covariates, intercept=not args.no_intercept,
            coord_cols=args.coords, standardize_coords=args.standardize_coords,
        )
        x = data.x
        coords = data.coords if data.coords is not None else coords
    candidates = _candidate_graphs(args, coords)
    if x is None:
        n = candidates[0][1].n
        x = np.ones((n, 1)) if not args.no_intercept else np.zeros((n, 0))
    table = compare_weights(x, candidates)
    fields = ["label", "avg_degree", "i_n0", "i_r0", "info_ratio", "selected"]
    _write_table(table.rows, fields, args.output, args.json)


def cmd_simulate(args):
    try:
        with open(args.config) as fh:
            text = fh.read()
        config = json.loads(text) if args.config.endswith(".json") else yaml.safe_load(text)
    except (json.JSONDecodeError, yaml.YAMLError) as exc:
        raise ValidationError(f"{args.config}: cannot parse configuration ({exc})") from exc
    if not isinstance(config, dict):
        raise ValidationError(f"{args.config}: configuration must be a mapping")
    if args.seed is not None:
        config = dict(config, seed=args.seed)
    if config.get("seed") is None and not all("seeds" in d or "seed" in d for d in config.get("designs") or []):
        raise _Usage("simulate needs a seed: pass --seed S or set 'seed' in the configuration")
    study, designs = load_designs(config, full_scale=True if args.full_scale else None,
                                  base_dir=Path(args.config).parent)
    if args.replicates is not None:
        designs = [with_replicates(d, args.replicates) for d in designs]
    rows = run_study(study, designs, threads=resolve_threads(args.threads))
    if args.output:
        write_metrics(rows, args.output)
        sys.stdout.write(f"wrote {len(rows)} rows to {args.output}\n")
    else:
        buf = io.StringIO()
        write_metrics(rows, buf)
        sys.stdout.write(buf.getvalue())


# -- parser ------------------------------------------------------------------------


class _Usage(Exception):
    pass


def _data_args(p, weights=True):
    p.add_argument("--data", required=True, help="CSV with one record per spatial unit")
    if weights:
        p.add_argument("--weights", required=True, help="weights JSON or i,j[,w] edge-list CSV")
        p.add_argument("--raw-weights", action="store_true", help="do not row-standardise an edge-list CSV")
    p.add_argument("--response", required=True, help="response column")
    _design_args(p)
    p.add_argument("--id-col", help="unit identifier column")


def _design_args(p):
    p.add_argument("--covariates", type=_csv_list, default=[], help="comma-separated covariate columns")
    p.add_argument("--no-intercept", action="store_true", help="omit the intercept column")
    p.add_argument("--coords", type=_csv_list, metavar="XCOL,YCOL",
                   help="coordinate columns appended to the design (linear trend)")
    p.add_argument("--standardize-coords", action="store_true",
                   help="standardise coordinates to mean 0, SD 1 before use")


def _output_args(p):
    p.add_argument("-o", "--output", help="output file (default: stdout)")
    p.add_argument("--json", action="store_true", help="emit JSON instead of CSV")


def _positive_int(text):
    v = int(text)
    if v < 0:
        raise argparse.ArgumentTypeError("must be non-negative")
    return v


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="resaple", description="Residual spatial dependence in spatial error models.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("weights", help="build a spatial weights file")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--lattice", type=_parse_dims, metavar="ROWSxCOLS")
    src.add_argument("--knn", type=int, metavar="K")
    src.add_argument("--edges", metavar="CSV")
    src.add_argument("--b07-like", action="store_true", help="built-in irregular 8-unit planar graph")
    p.add_argument("--scheme", choices=("queen", "rook"), default="queen")
    p.add_argument("--coords", dest="coords_file", metavar="CSV", help="point coordinates for --knn")
    p.add_argument("--coord-cols", type=_csv_list, default=["x", "y"], metavar="XCOL,YCOL")
    p.add_argument("--standardize-coords", action="store_true")
    p.add_argument("--n", type=int, help="number of units for --edges (default: largest index + 1)")
    norm = p.add_mutually_exclusive_group()
    norm.add_argument("--row-standardize", dest="raw", action="store_false", default=False)
    norm.add_argument("--raw", dest="raw", action="store_true", help="keep unnormalised weights")
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_weights)

    p = sub.add_parser("estimate", help="point estimates of rho")
    _data_args(p)
    p.add_argument("--methods", type=_csv_list, default=list(ALL_METHODS),
                   help=f"comma-separated subset of {','.join(ALL_METHODS)}")
    _output_args(p)
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("test", help="test H0: rho = 0")
    _data_args(p)
    p.add_argument("--method", choices=("exact", "perm", "z"), required=True)
    p.add_argument("--side", choices=SIDES, default="greater")
    p.add_argument("--scheme", choices=SCHEMES, default="freedman_lane")
    p.add_argument("--statistic", choices=("resaple", "moran", "aple", "maple"), default="resaple")
    p.add_argument("--permutations", type=int)
    p.add_argument("--seed", type=_positive_int)
    _output_args(p)
    p.set_defaults(func=cmd_test)

    p = sub.add_parser("local", help="local contributions with permutation p-values")
    _data_args(p)
    p.add_argument("--permutations", type=int, required=True)
    p.add_argument("--seed", type=_positive_int, required=True)
    p.add_argument("--fdr-q", type=float, default=0.05)
    _output_args(p)
    p.set_defaults(func=cmd_local)

    p = sub.add_parser("scatter", help="scatterplot coordinates")
    _data_args(p)
    _output_args(p)
    p.set_defaults(func=cmd_scatter)

    p = sub.add_parser("compare-weights", help="restricted information of candidate weights")
    p.add_argument("--candidate", action="append", metavar="LABEL=PATH")
    p.add_argument("--labels", type=_csv_list, help="built-in candidates: rook,queen,knnK")
    p.add_argument("--lattice", type=_parse_dims, metavar="ROWSxCOLS")
    p.add_argument("--raw-weights", action="store_true")
    p.add_argument("--data", help="CSV supplying the design (default: intercept only)")
    p.add_argument("--response", help="response column (required with --data)")
    _design_args(p)
    _output_args(p)
    p.set_defaults(func=cmd_compare_weights)

    p = sub.add_parser("simulate", help="run a Monte Carlo study from a config file")
    p.add_argument("--config", required=True, help="YAML or JSON study configuration")
    p.add_argument("--seed", type=_positive_int, help="master seed (overrides the configuration)")
    p.add_argument("--replicates", type=int, help="override replicates per design point")
    p.add_argument("--full-scale", action="store_true", help="default to 2000 replicates")
    p.add_argument("--threads", type=_positive_int, help="worker threads (default: RESAPLE_THREADS, 0 = all)")
    p.add_argument("-o", "--output")
    p.set_defaults(func=cmd_simulate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        args.func(args)
    except _Usage as exc:
        parser.print_usage(sys.stderr)
        sys.stderr.write(f"resaple: error: {exc}\n")
        return EXIT_USAGE
    except NumericalError as exc:
        sys.stderr.write(f"resaple: numerical error: {exc}\n")
        return EXIT_NUMERICAL
    except ResapleError as exc:
        sys.stderr.write(f"resaple: error: {exc}\n")
        return exc.exit_code
    except OSError as exc:
        sys.stderr.write(f"resaple: error: {exc}\n")
        return EXIT_DATA
    return 0


if __name__ == "__main__":
    sys.exit(main())
