"""Text matrix files, JSON run configuration and model directories.

Matrices are stored as comma-separated decimal text, one row per line, no
header, with ``%.17g`` rendering so a write/read round trip is exact.
"""
from __future__ import annotations

import dataclasses
import json
import math
import os
import shutil
from pathlib import Path
from typing import Any, Dict, List, Optional

import numpy as np

from .core import Hyperparams
from .errors import ConfigError, KronMTLError
from .evalkit import ExperimentConfig
from .fit import FitConfig, FitResult
from .nuclear import MeanSolveConfig
from .precision import GlassoConfig
from .simgen import SimSpec

FORMAT_VERSION = 1
FLOAT_FMT = "%.17g"


class MatrixFileError(KronMTLError, ValueError):
    """A matrix file exists but its contents are not a finite dense matrix."""


# -- matrix files ----------------------------------------------------------

def write_matrix(path, A) -> None:
    A = np.asarray(A, dtype=float)
    if A.ndim == 1:
        A = A[None, :]
    if A.ndim != 2:
        raise ValueError("only 1-D and 2-D arrays can be written")
    lines = [",".join(FLOAT_FMT % v for v in row) for row in A]
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines))
        fh.write("\n")


def read_matrix(path) -> np.ndarray:
    """Read a matrix file; always returns a 2-D array.

    Raises ``OSError`` when the file cannot be opened and
    :class:`MatrixFileError` when its contents are malformed.
    """
    path = Path(path)
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    rows = [ln for ln in text.splitlines() if ln.strip()]
    if not rows:
        raise MatrixFileError(f"{path}: file is empty")
    out = []
    for k, ln in enumerate(rows, 1):
        try:
            out.append([float(tok) for tok in ln.split(",")])
        except ValueError:
            raise MatrixFileError(f"{path}: line {k} is not a comma-separated list of numbers") from None
    width = len(out[0])
    if any(len(r) != width for r in out):
        raise MatrixFileError(f"{path}: rows have different lengths")
    A = np.array(out, dtype=float)
    if not np.all(np.isfinite(A)):
        raise MatrixFileError(f"{path}: contains non-finite values")
    return A


def dump_json(path, obj) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, allow_nan=False)
        fh.write("\n")


# -- configuration ---------------------------------------------------------

SECTIONS = ("sim", "fit", "hyperparams", "experiment")
_NESTED = {"mean": MeanSolveConfig, "glasso": GlassoConfig}
# keys of FitConfig that are arrays, set through files rather than JSON
_FIT_ARRAYS = ("fixed_row_precision", "fixed_col_precision")


def _check_value(section: str, key: str, value, default):
    where = f"{section}.{key}"
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{where} must be true or false")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{where} must be an integer")
        return value
    if isinstance(default, float) or default is None:
        if value is None and default is None:
            return None
        if isinstance(value, bool) or not isinstance(value, (int, float)) or not math.isfinite(value):
            raise ConfigError(f"{where} must be a finite number")
        return float(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(f"{where} must be a string")
        return value
    if isinstance(default, tuple):
        if not isinstance(value, list):
            raise ConfigError(f"{where} must be a list")
        inner = default[0] if default else None
        return tuple(_check_value(section, f"{key}[]", v, inner) if inner is not None else v
                     for v in value)
    raise ConfigError(f"{where} cannot be set from a config file")  # pragma: no cover


def build_dataclass(cls, section: str, raw: Optional[Dict[str, Any]], skip=(), **fixed):
    """Instantiate ``cls`` from a JSON object, rejecting unknown keys."""
    raw = {} if raw is None else raw
    if not isinstance(raw, dict):
        raise ConfigError(f"section {section!r} must be a JSON object")
    names = {f.name: f for f in dataclasses.fields(cls)}
    allowed = set(names) - set(skip) - set(fixed)
    unknown = sorted(set(raw) - allowed)
    if unknown:
        raise ConfigError(f"unknown key(s) in {section!r}: {', '.join(unknown)}")
    default_obj = cls()
    kwargs = dict(fixed)
    for key, value in raw.items():
        if key in _NESTED and cls is FitConfig:
            kwargs[key] = build_dataclass(_NESTED[key], f"{section}.{key}", value)
        else:
            kwargs[key] = _check_value(section, key, value, getattr(default_obj, key))
    return cls(**kwargs)


@dataclasses.dataclass(frozen=True)
class RunConfig:
    sim: SimSpec
    fit: FitConfig
    hyperparams: Hyperparams
    experiment: ExperimentConfig
    row_precision_file: Optional[str] = None


def parse_config(doc: Dict[str, Any], seed: Optional[int] = None,
                 variant: Optional[str] = None) -> RunConfig:
    """Validate a configuration document and build every config object.

    Top-level sections are ``sim``, ``fit``, ``hyperparams`` and
    ``experiment``; all are optional. ``fit.row_precision_file`` names a
    matrix file (relative to the data directory) holding a fixed feature
    precision. ``seed`` and ``variant`` override the file.
    """
    if not isinstance(doc, dict):
        raise ConfigError("the configuration must be a JSON object")
    unknown = sorted(set(doc) - set(SECTIONS))
    if unknown:
        raise ConfigError(f"unknown top-level key(s): {', '.join(unknown)}")
    sim_raw = dict(doc.get("sim") or {})
    fit_raw = dict(doc.get("fit") or {})
    exp_raw = dict(doc.get("experiment") or {})
    row_file = fit_raw.pop("row_precision_file", None)
    if row_file is not None and not isinstance(row_file, str):
        raise ConfigError("fit.row_precision_file must be a string")
    if seed is not None:
        if seed < 0:
            raise ConfigError("--seed must be nonnegative")
        sim_raw["seed"] = fit_raw["seed"] = exp_raw["seed"] = seed
    if variant is not None:
        fit_raw["variant"] = variant
    for key in _FIT_ARRAYS:
        if key in fit_raw:
            raise ConfigError(f"unknown key(s) in 'fit': {key}")
    sim = build_dataclass(SimSpec, "sim", sim_raw)
    fit_cfg = build_dataclass(FitConfig, "fit", fit_raw, skip=_FIT_ARRAYS)
    try:
        hp = build_dataclass(Hyperparams, "hyperparams", doc.get("hyperparams"))
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    exp = build_dataclass(ExperimentConfig, "experiment", exp_raw, sim=sim, fit=fit_cfg)
    return RunConfig(sim, fit_cfg, hp, exp, row_file)


def load_config(path, seed=None, variant=None) -> RunConfig:
    with open(path, encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    return parse_config(doc, seed, variant)


# -- model directories -----------------------------------------------------

MODEL_FILES = ("M", "G", "H", "R_inv", "C_inv")


def save_model(out_dir, result: FitResult, variant: str, N: int, centered: bool,
               column_means, objective_final: float) -> List[Path]:
    out_dir = Path(out_dir)
    post, prior, hp = result.post, result.prior, result.hp
    arrays = {"M": post.M, "G": post.G, "H": post.H, "R_inv": prior.R_inv, "C_inv": prior.C_inv}
    written = []
    for name in MODEL_FILES:
        p = out_dir / f"{name}.csv"
        write_matrix(p, arrays[name])
        written.append(p)
    D, K = post.M.shape
    meta = {
        "variant": variant,
        "N": int(N),
        "D": D,
        "K": K,
        "sigma2": hp.sigma2,
        "gamma": hp.gamma,
        "lambda_r": hp.lambda_r,
        "lambda_c": hp.lambda_c,
        "centered": bool(centered),
        "column_means": None if column_means is None else [float(v) for v in column_means],
        "converged": bool(result.report.converged),
        "objective_final": objective_final,
        "format_version": FORMAT_VERSION,
    }
    p = out_dir / "meta.json"
    dump_json(p, meta)
    written.append(p)
    return written


def load_model(model_dir) -> Dict[str, Any]:
    """Read a model directory into a dict of arrays plus ``meta``."""
    model_dir = Path(model_dir)
    with open(model_dir / "meta.json", encoding="utf-8") as fh:
        try:
            meta = json.load(fh)
        except json.JSONDecodeError as exc:
            raise MatrixFileError(f"{model_dir / 'meta.json'}: invalid JSON") from exc
    if meta.get("format_version") != FORMAT_VERSION:
        raise MatrixFileError(f"{model_dir}: unsupported format_version {meta.get('format_version')!r}")
    out: Dict[str, Any] = {"meta": meta}
    for name in MODEL_FILES:
        out[name] = read_matrix(model_dir / f"{name}.csv")
    return out


class OutputGuard:
    """Track files written by a command and delete them if it fails.

    A directory created by the guard is removed as well when it ends up empty.
    """

    def __init__(self, out_dir=None):
        self.files: List[Path] = []
        self.created_dir: Optional[Path] = None
        if out_dir is not None:
            d = Path(out_dir)
            if not d.exists():
                d.mkdir(parents=True)
                self.created_dir = d
            elif not d.is_dir():
                raise NotADirectoryError(f"{d} exists and is not a directory")

    def add(self, *paths):
        self.files.extend(Path(p) for p in paths)

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        if exc_type is None:
            return False
        for p in self.files:
            try:
                p.unlink()
            except FileNotFoundError:
                pass
        if self.created_dir is not None:
            shutil.rmtree(self.created_dir, ignore_errors=True)
        return False


def ensure_parent(path) -> None:
    parent = os.path.dirname(os.path.abspath(path))
    if not os.path.isdir(parent):
        raise FileNotFoundError(f"output directory {parent} does not exist")
