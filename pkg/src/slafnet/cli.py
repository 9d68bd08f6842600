"""``slafnet`` command line: gen-data, train, extract, approx, decision-map, verify.

Exit codes: 0 success, 1 verification failure, 2 bad input or refusal,
3 training divergence, 4 capacity exceeded.
"""
from __future__ import annotations

import argparse
import csv
import json
import os
import sys
import warnings
from pathlib import Path

import numpy as np

from . import __version__
from .approx import BASES, build_approximate_network, delta_table, write_delta_table
from .data import DataError, gen_quadratic_regression, gen_sparse_poly, gen_two_spirals, write_csv
from .experiments import ExperimentError, load_config, run_experiment, shipped_configs
from .extract import FlattenError, equivalence_check, flatten_penultimate, parameter_bound
from .network import DivergenceError, ModelFileError, SpecError, deserialize, serialize
from .polybasis import CAP_ENV, CapacityError, format_polynomial
from .tensorcore import ShapeError
from .verify import SUITES, run_all, run_suite

EXIT_OK, EXIT_VERIFY, EXIT_INPUT, EXIT_DIVERGED, EXIT_CAPACITY = 0, 1, 2, 3, 4


class CliError(Exception):
    def __init__(self, message: str, code: int = EXIT_INPUT):
        super().__init__(message)
        self.code = code


# -- gen-data ---------------------------------------------------------------------


def cmd_gen_data(args) -> int:
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    if args.kind == "two-spirals":
        ds = gen_two_spirals(args.n or 1000, args.turns, args.noise if args.noise is not None else 0.02, args.seed)
        write_csv(ds, out)
    elif args.kind == "sparse-poly":
        ds, truth = gen_sparse_poly(args.n or 40000, args.n_vars, args.n_monomials, args.degree, args.noise or 0.0, args.seed)
        write_csv(ds, out)
        truth_path = out.with_suffix(".truth.txt")
        truth_path.write_text(format_polynomial(truth))
        print(f"ground truth polynomial: {truth_path}")
    else:
        ds, _ = gen_quadratic_regression(args.n or 506, seed=args.seed, noise=args.noise if args.noise is not None else 3.0)
        write_csv(ds, out, target_name="MEDV")
    print(f"wrote {len(ds)} rows to {out}")
    return EXIT_OK


# -- train --------------------------------------------------------------------------


def _resolve_config(name: str):
    path = Path(name)
    if not path.exists():
        shipped = shipped_configs()
        if name not in shipped:
            raise CliError(f"config {name!r} is neither a file nor a shipped config ({', '.join(sorted(shipped))})")
        path = shipped[name]
    return load_config(path)


def cmd_train(args) -> int:
    cfg = _resolve_config(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    if args.epochs is not None:
        cfg.train = {**cfg.train, "epochs": args.epochs}
    out = Path(args.out or cfg.output_dir or Path("runs") / cfg.name)
    try:
        summary = run_experiment(cfg, out, args.data_csv)
    except DivergenceError as exc:
        print(f"error: {exc}; partial metrics in {out / 'summary.json'}", file=sys.stderr)
        return EXIT_DIVERGED
    metrics = " ".join(f"{k}={v:.6g}" for k, v in summary["metrics"].items())
    print(f"{cfg.name}: {metrics} params={summary['parameter_count']} degree={summary['degree']} time={summary['wall_time_s']:.1f}s")
    print(f"artifacts in {out}")
    return EXIT_OK


# -- extract ---------------------------------------------------------------------------


def cmd_extract(args) -> int:
    model = deserialize(args.model)
    try:
        flat = flatten_penultimate(model)
    except FlattenError as exc:
        raise CliError(f"cannot flatten {args.model}: {exc}") from None
    err = equivalence_check(model, flat, args.points, tuple(args.box), args.seed)
    actual, bound = parameter_bound(model)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(flat.to_text())
    report = {
        "model": str(args.model),
        "nvars": flat.nvars,
        "degree": flat.degree,
        "outputs": flat.outputs,
        "basis_size": len(flat.basis),
        "head": flat.head,
        "parameter_count": actual,
        "parameter_bound": bound,
        "equivalence": {"max_rel_error": err, "points": args.points, "box": list(args.box), "seed": args.seed},
        "provenance": flat.provenance,
    }
    report_path = Path(args.report) if args.report else out.with_suffix(".report.json")
    report_path.write_text(json.dumps(report, indent=2) + "\n")
    if flat.head:
        print(f"classifier: flattened up to the {flat.head} head; prediction = {flat.head}(W @ X^B)")
    print(f"degree {flat.degree} polynomial over {flat.nvars} variables, W is {flat.W.shape[0]} x {flat.W.shape[1]}")
    print(f"max relative error over {args.points} points: {err:.3e}")
    print(f"wrote {out} and {report_path}")
    return EXIT_OK


# -- approx ------------------------------------------------------------------------------


def _read_probe(path: str, width: int) -> np.ndarray:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise CliError(f"{path}: empty probe file")
    header = rows[0]
    try:
        float(header[0])
        data_rows, names = rows, [f"c{i}" for i in range(len(header))]
    except ValueError:
        data_rows, names = rows[1:], header
    keep = [i for i, h in enumerate(names) if not h.startswith(("label", "target"))]
    try:
        X = np.array([[float(r[i]) for i in keep] for r in data_rows if r])
    except (ValueError, IndexError) as exc:
        raise CliError(f"{path}: malformed probe data ({exc})") from None
    if X.ndim != 2 or X.shape[0] == 0:
        raise CliError(f"{path}: no probe rows")
    if X.shape[1] != width:
        raise CliError(f"{path}: probe data has {X.shape[1]} feature columns, model expects {width}")
    return X


def cmd_approx(args) -> int:
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    if args.activation:
        if args.interval is None or args.max_degree is None:
            raise CliError("--activation needs --interval A B and --max-degree D")
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            fits = delta_table(args.activation, args.basis, tuple(args.interval), args.max_degree)
        write_delta_table(fits, out)
        for f in fits:
            print(f"d={f.degree:2d} sup_error={f.sup_error:.6e}")
        print(f"wrote {len(fits)} rows to {out}")
        return EXIT_OK
    if not (args.model and args.probe_data and args.degree is not None):
        raise CliError("give either --activation/--interval/--max-degree or --model/--probe-data/--degree")
    ref = deserialize(args.model)
    probe = _read_probe(args.probe_data, ref.spec.input_width)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        try:
            approx_model, ledger = build_approximate_network(ref, args.degree, probe, args.basis)
        except ValueError as exc:
            raise CliError(f"cannot approximate {args.model}: {exc}") from None
    ledger.write_csv(out)
    if args.save_model:
        serialize(approx_model, args.save_model)
    for r in ledger.rows:
        flag = "ok" if r.sound else "VIOLATED"
        print(f"{r.layer}: eps_bound={r.eps_bound:.4e} eps_empirical={r.eps_empirical:.4e} {flag}")
    print(f"wrote {out}")
    return EXIT_OK if ledger.sound else EXIT_VERIFY


# -- decision-map --------------------------------------------------------------------------


def write_pgm(values: np.ndarray, path: str | Path) -> None:
    """8-bit binary PGM; ``values`` in [0, 1], row 0 at the top."""
    img = np.round(np.clip(values, 0.0, 1.0) * 255.0).astype(np.uint8)
    h, w = img.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(img.tobytes())


def decision_map(model, radius: float, resolution: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Grid coordinates and class-1 probability, ``resolution x resolution``, top row at ``y = +R``."""
    if model.spec.input_width != 2:
        raise CliError(f"decision maps need a 2-input model, this one has {model.spec.input_width} inputs")
    xs = np.linspace(-radius, radius, resolution)
    ys = xs[::-1]
    gx, gy = np.meshgrid(xs, ys)
    pts = np.column_stack([gx.ravel(), gy.ravel()])
    pred = model.predict(pts)
    p = pred[:, 1] if pred.shape[1] > 1 else pred[:, 0]
    return gx, gy, np.clip(p, 0.0, 1.0).reshape(resolution, resolution)


def cmd_decision_map(args) -> int:
    if args.resolution < 2:
        raise CliError("--resolution must be at least 2")
    model = deserialize(args.model)
    gx, gy, p = decision_map(model, args.range, args.resolution)
    prefix = Path(args.out)
    prefix.parent.mkdir(parents=True, exist_ok=True)
    csv_path, pgm_path = prefix.with_suffix(".csv"), prefix.with_suffix(".pgm")
    with csv_path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x", "y", "p"])
        for x, y, v in zip(gx.ravel(), gy.ravel(), p.ravel()):
            w.writerow([repr(float(x)), repr(float(y)), repr(float(v))])
    write_pgm(p, pgm_path)
    print(f"wrote {csv_path} ({p.size} rows) and {pgm_path} ({args.resolution}x{args.resolution})")
    return EXIT_OK


# -- verify -----------------------------------------------------------------------------------


def cmd_verify(args) -> int:
    if args.suite == "all":
        checks = run_all(args.seed, args.inject_perturbation)
    else:
        checks = run_suite(args.suite, args.seed, args.inject_perturbation)
    for c in checks:
        print(c.line())
    failed = [c for c in checks if not c.passed]
    print(f"{len(checks) - len(failed)}/{len(checks)} checks passed")
    if args.json:
        Path(args.json).write_text(json.dumps([c.to_dict() for c in checks], indent=2) + "\n")
    return EXIT_VERIFY if failed else EXIT_OK


# -- parser -------------------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="slafnet", description="Polynomial-activation networks: training, flattening, audits.")
    p.add_argument("--version", action="version", version=f"slafnet {__version__}")
    p.add_argument("--capacity-cap", type=int, default=None, help=f"term/basis size cap (also ${CAP_ENV})")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="write a generated dataset as CSV")
    g.add_argument("--kind", required=True, choices=["two-spirals", "sparse-poly", "quadratic"])
    g.add_argument("--out", required=True)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--n", type=int, default=None, help="points per class (two-spirals) or samples")
    g.add_argument("--turns", type=float, default=1.75)
    g.add_argument("--noise", type=float, default=None)
    g.add_argument("--n-vars", type=int, default=100)
    g.add_argument("--n-monomials", type=int, default=10)
    g.add_argument("--degree", type=int, default=3)
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="run an experiment config")
    t.add_argument("--config", required=True, help="config file or shipped config name")
    t.add_argument("--out", default=None, help="output directory")
    t.add_argument("--seed", type=int, default=None)
    t.add_argument("--epochs", type=int, default=None)
    t.add_argument("--data-csv", default=None, help="CSV replacing the configured dataset")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("extract", help="flatten a model into W @ X^B")
    e.add_argument("--model", required=True)
    e.add_argument("--out", required=True)
    e.add_argument("--report", default=None)
    e.add_argument("--points", type=int, default=1000)
    e.add_argument("--box", type=float, nargs=2, default=(-1.0, 1.0), metavar=("LO", "HI"))
    e.add_argument("--seed", type=int, default=0)
    e.set_defaults(func=cmd_extract)

    a = sub.add_parser("approx", help="delta tables or error ledgers for polynomial stand-ins")
    a.add_argument("--activation", choices=["relu", "tanh", "sigmoid"])
    a.add_argument("--interval", type=float, nargs=2, metavar=("A", "B"))
    a.add_argument("--max-degree", type=int)
    a.add_argument("--model")
    a.add_argument("--probe-data")
    a.add_argument("--degree", type=int)
    a.add_argument("--basis", choices=BASES, default="chebyshev")
    a.add_argument("--save-model", default=None)
    a.add_argument("--out", required=True)
    a.set_defaults(func=cmd_approx)

    d = sub.add_parser("decision-map", help="classifier probabilities on a 2-D grid (CSV + PGM)")
    d.add_argument("--model", required=True)
    d.add_argument("--range", type=float, default=1.2, help="grid covers [-R, R]^2")
    d.add_argument("--resolution", type=int, default=256)
    d.add_argument("--out", required=True, help="output prefix")
    d.set_defaults(func=cmd_decision_map)

    v = sub.add_parser("verify", help="run invariant suites")
    v.add_argument("--suite", choices=["all", *SUITES], default="all")
    v.add_argument("--seed", type=int, default=0)
    v.add_argument("--inject-perturbation", action="store_true", help="corrupt flattened weights to prove the check bites")
    v.add_argument("--json", default=None)
    v.set_defaults(func=cmd_verify)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    previous = os.environ.get(CAP_ENV)
    if args.capacity_cap is not None:
        os.environ[CAP_ENV] = str(args.capacity_cap)
    try:
        return _dispatch(args)
    finally:
        # in-process callers get their environment back
        if previous is None:
            os.environ.pop(CAP_ENV, None)
        else:
            os.environ[CAP_ENV] = previous


def _dispatch(args) -> int:
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except CapacityError as exc:
        print(f"error: capacity exceeded: {exc}", file=sys.stderr)
        return EXIT_CAPACITY
    except (ModelFileError, SpecError, ExperimentError, DataError, ShapeError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
