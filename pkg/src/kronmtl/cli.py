"""Command-line entry point: ``kronmtl <subcommand> ...``.

Exit codes: 0 success, 2 invalid configuration or input, 3 file I/O
failure, 4 numerical failure.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import sys
import warnings
from pathlib import Path
from typing import List, Optional

import numpy as np

from . import evalkit
from .core import Dataset, master_objective
from .errors import ConvergenceWarning, KronMTLError, NumericalError
from .fit import fit, predict
from .matio import (FLOAT_FMT, OutputGuard, dump_json, ensure_parent, load_config, load_model,
                    read_matrix, save_model, write_matrix)
from .precision import GlassoConfig, glasso_solve
from .simgen import gen_dataset

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_NUMERIC = 0, 2, 3, 4


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return "nan" if v != v else FLOAT_FMT % v
    return str(v)


def _out(msg: str = "") -> None:
    print(msg, flush=True)


# -- subcommands -----------------------------------------------------------

def cmd_simulate(config_path, out_dir, seed=None) -> int:
    cfg = load_config(config_path, seed=seed)
    with OutputGuard(out_dir) as guard:
        train, val, test, truth = gen_dataset(cfg.sim)
        out = Path(out_dir)
        files = {}
        for tag, d in (("train", train), ("val", val), ("test", test)):
            files[f"X_{tag}"] = d.X
            files[f"Y_{tag}"] = d.Y
        files["W_true"] = truth.W_true
        files["C_inv_true"] = truth.C_inv_true
        files["R_inv_true"] = truth.R_inv_true
        for name, A in files.items():
            p = out / f"{name}.csv"
            guard.add(p)
            write_matrix(p, A)
        meta = dict(dataclasses.asdict(cfg.sim), sigma2_true=truth.sigma2_true,
                    realized_density=truth.realized_density, density_reached=truth.density_reached)
        guard.add(out / "sim_meta.json")
        dump_json(out / "sim_meta.json", meta)
    s = cfg.sim
    _out(f"N={s.N} D={s.D} K={s.K} rank={s.rank}")
    _out(f"realized off-diagonal density: {truth.realized_density:.4f}"
         + ("" if truth.density_reached else " (target not reached)"))
    _out(f"sigma2_true: {truth.sigma2_true:.6g}")
    return EXIT_OK


def cmd_fit(config_path, data_dir, model_dir, seed=None, variant=None) -> int:
    cfg = load_config(config_path, seed=seed, variant=variant)
    data_dir = Path(data_dir)
    X = read_matrix(data_dir / "X_train.csv")
    Y = read_matrix(data_dir / "Y_train.csv")
    fit_cfg = cfg.fit
    if cfg.row_precision_file is not None:
        R_fixed = read_matrix(data_dir / cfg.row_precision_file)
        fit_cfg = dataclasses.replace(fit_cfg, fixed_row_precision=R_fixed)
    data = Dataset.centered_from(X, Y)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ConvergenceWarning)
        res = fit(data, cfg.hyperparams, fit_cfg)
    J = master_objective(data, res.post, res.prior, res.hp, fit_cfg.sigma2_denominator)
    with OutputGuard(model_dir) as guard:
        guard.add(*(Path(model_dir) / f"{n}.csv" for n in ("M", "G", "H", "R_inv", "C_inv")),
                  Path(model_dir) / "meta.json")
        save_model(model_dir, res, fit_cfg.variant, data.N, True, data.column_means, J)
    _out(f"objective: {J:.10g}")
    _out(f"converged: {'true' if res.report.converged else 'false'}")
    for flag in res.report.flags:
        _out(f"note: {flag}")
    return EXIT_OK


def cmd_predict(model_dir, X_path, out_path) -> int:
    model = load_model(model_dir)
    X = read_matrix(X_path)
    mu = model["meta"].get("column_means")
    Y_hat = predict(model["M"], X, mu)
    ensure_parent(out_path)
    try:
        write_matrix(out_path, Y_hat)
    except BaseException:
        Path(out_path).unlink(missing_ok=True)
        raise
    return EXIT_OK


def cmd_evaluate(pred_path, truth_paths: List[str], metric: str, out_path=None) -> int:
    """Score a prediction file against truth files.

    ``r2``: truth is ``Y_true`` optionally followed by ``Y_train`` (whose
    column means define the reference; otherwise ``Y_true``'s own means).
    ``auc``: prediction is an estimated precision, truth the true one.
    ``accuracy``: prediction holds scores, truth a 1-of-K matrix.
    """
    P = read_matrix(pred_path)
    T = read_matrix(truth_paths[0])
    if metric == "r2":
        ref = read_matrix(truth_paths[1]) if len(truth_paths) > 1 else T
        value = evalkit.r_squared(T, P, ref.mean(axis=0))
    elif metric == "auc":
        value = evalkit.structure_auc(T, P)
    else:
        value = evalkit.accuracy_1ofk(T, P)
    _out(f"{metric}: {_fmt(float(value))}")
    if out_path is not None:
        ensure_parent(out_path)
        with open(out_path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(f"metric,value\n{metric},{_fmt(float(value))}\n")
    return EXIT_OK


def cmd_glasso(S_path, lam: float, out_path, diag_penalized: bool = True) -> int:
    S = read_matrix(S_path)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ConvergenceWarning)
        res = glasso_solve(S, lam, GlassoConfig(diag_penalized=diag_penalized))
    ensure_parent(out_path)
    try:
        write_matrix(out_path, res.precision)
    except BaseException:
        Path(out_path).unlink(missing_ok=True)
        raise
    _out(f"kkt_residual: {res.residual:.3e}")
    _out(f"converged: {'true' if res.converged else 'false'}")
    return EXIT_OK


def write_results(out_dir, cfg: evalkit.ExperimentConfig, result: evalkit.ExperimentResult,
                  guard: Optional[OutputGuard] = None) -> None:
    out = Path(out_dir)
    paths = [out / "results.csv", out / "summary.csv", out / "edges.csv"]
    if guard is not None:
        guard.add(*paths)
    with open(paths[0], "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["model", "rep", "lambda", "r2", "auc", "accuracy", "converged"])
        for c in result.cells:
            w.writerow([c.model, c.rep, _fmt(c.lam), _fmt(c.r2), _fmt(c.auc), _fmt(c.accuracy),
                        _fmt(c.converged)])
    with open(paths[1], "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["model", "metric", "mean", "std"])
        for r in result.table.rows:
            w.writerow([r.model, r.metric, _fmt(r.mean), _fmt(r.std)])
    with open(paths[2], "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["model", "i", "j", "count", "stable"])
        for model, cnt in result.edge_counts.items():
            stable = set(result.stable_edges[model])
            for i, j in zip(*np.triu_indices(cnt.shape[0], 1)):
                if cnt[i, j] > 0:
                    w.writerow([model, int(i), int(j), int(cnt[i, j]), _fmt((int(i), int(j)) in stable)])


def cmd_experiment(config_path, out_dir, seed=None, variant=None, workers=None) -> int:
    cfg = load_config(config_path, seed=seed, variant=variant)
    exp = cfg.experiment
    if workers is None:
        workers = evalkit.n_workers()
    result = evalkit.run_experiment(exp, workers=workers)
    with OutputGuard(out_dir) as guard:
        write_results(out_dir, exp, result, guard)
    _out(f"rank={exp.sim.rank} reps={exp.reps} grid={list(exp.lambda_grid)}")
    _out(result.table.format())
    failed = [c for c in result.cells if c.error]
    for c in failed:
        _out(f"failed: {c.model} rep {c.rep}: {c.error}")
    return EXIT_OK


# -- argument parsing ------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="kronmtl", description="Matrix-variate multitask regression.")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="generate a synthetic dataset")
    s.add_argument("config")
    s.add_argument("out_dir")
    s.add_argument("--seed", type=int)

    s = sub.add_parser("fit", help="fit a model on X_train.csv / Y_train.csv")
    s.add_argument("config")
    s.add_argument("data_dir")
    s.add_argument("model_dir")
    s.add_argument("--seed", type=int)
    s.add_argument("--variant", choices=("mvg", "mvg-corr", "mvg-rank"))

    s = sub.add_parser("predict", help="predict responses for new features")
    s.add_argument("model_dir")
    s.add_argument("X")
    s.add_argument("out")

    s = sub.add_parser("evaluate", help="score predictions against truth")
    s.add_argument("pred")
    s.add_argument("truth", nargs="+")
    s.add_argument("--metric", choices=("r2", "auc", "accuracy"), required=True)
    s.add_argument("--out")

    s = sub.add_parser("glasso", help="sparse precision for a covariance matrix")
    s.add_argument("S")
    s.add_argument("lam", type=float)
    s.add_argument("out")
    s.add_argument("--no-diag-penalty", action="store_true")

    s = sub.add_parser("experiment", help="run the replicated simulation study")
    s.add_argument("config")
    s.add_argument("out_dir")
    s.add_argument("--seed", type=int)
    s.add_argument("--variant", choices=("mvg", "mvg-corr", "mvg-rank"),
                   help="accepted for symmetry; the experiment fits every requested model")
    return p


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    try:
        if args.command == "simulate":
            return cmd_simulate(args.config, args.out_dir, args.seed)
        if args.command == "fit":
            return cmd_fit(args.config, args.data_dir, args.model_dir, args.seed, args.variant)
        if args.command == "predict":
            return cmd_predict(args.model_dir, args.X, args.out)
        if args.command == "evaluate":
            return cmd_evaluate(args.pred, args.truth, args.metric, args.out)
        if args.command == "glasso":
            return cmd_glasso(args.S, args.lam, args.out, not args.no_diag_penalty)
        return cmd_experiment(args.config, args.out_dir, args.seed, args.variant)
    except NumericalError as exc:
        print(f"error: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (KronMTLError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        name = getattr(exc, "filename", None)
        print(f"error: {exc.strerror or exc}" + (f": {name}" if name else ""), file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
