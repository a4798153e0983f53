"""Command-line interface: ``rmgp {eigen,kernel,fit,sample,predict,check}``.

Configuration is one JSON document; command-line flags override it. Unknown
keys are rejected at every level so that misspelt hyperparameter names fail
loudly. Relative paths inside a config file resolve against its directory.

Exit codes: 0 success, 1 check failure, 2 input error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import gp
from .kernels import DegenerateWeightsError, Hyperparameters, KernelEvaluator, parse_nu
from .lanczos import EigensolverError
from .mesh import (
    CacheError,
    MeshError,
    cache_read,
    cache_write,
    eigen_residuals,
    load_mesh,
    mesh_eigen_to_eigensystem,
    mesh_eigenpairs,
    write_ply,
)
from .spectral import (
    MeshPoints,
    UnsupportedError,
    circle_eigensystem,
    sphere_eigensystem,
    torus_eigensystem,
)

logger = logging.getLogger("rmgp")

EXIT_OK, EXIT_CHECK, EXIT_INPUT, EXIT_NUMERIC = 0, 1, 2, 3


class InputError(Exception):
    """Bad configuration, file or point encoding (exit code 2)."""


class NumericalError(Exception):
    """Factorization, eigensolver or optimizer failure (exit code 3)."""


def fmt(v: float) -> str:
    return f"{float(v):.17g}"


# ---------------------------------------------------------------------------
# configuration

MANIFOLD_KEYS = {
    "circle": {"levels"},
    "torus": {"d", "max_freq"},
    "sphere": {"d", "levels"},
    "mesh": {"path", "format", "eigenpairs", "cache_path", "keep_largest_component", "tol"},
}
TOP_KEYS = {
    "manifold", "hyperparameters", "noise_variance", "data", "points", "seed", "out",
    "mode", "fix", "steps", "learning_rate", "count", "num_features", "ply", "x", "x2",
}
HYPER_KEYS = {"sigma2", "kappa", "nu"}
MODE_NAMES = ("spectral", "closed", "periodic", "naive")


@dataclass
class RunConfig:
    manifold: str
    manifold_args: dict
    hyperparameters: Hyperparameters
    noise_variance: float = 0.0
    data: Path | None = None
    points: Path | None = None
    seed: int = 0
    out: Path | None = None
    mode: str = "spectral"
    fix: list = field(default_factory=list)
    steps: int = 200
    learning_rate: float | None = None
    count: int = 1
    num_features: int | None = None
    ply: Path | None = None
    x: str | None = None
    x2: str | None = None


def _reject_unknown(obj: dict, allowed: set, where: str):
    if not isinstance(obj, dict):
        raise InputError(f"{where} must be a JSON object")
    extra = sorted(set(obj) - allowed)
    if extra:
        raise InputError(f"unknown key(s) in {where}: {', '.join(extra)}")


def _positive_int(v, name):
    if isinstance(v, bool) or not isinstance(v, int) or v < 1:
        raise InputError(f"{name} must be a positive integer, got {v!r}")
    return v


def _real(v, name):
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise InputError(f"{name} must be a number, got {v!r}")
    return float(v)


def parse_config(raw: dict, base: Path) -> RunConfig:
    _reject_unknown(raw, TOP_KEYS, "config")
    man = raw.get("manifold")
    if not isinstance(man, dict) or len(man) != 1:
        raise InputError("config.manifold must hold exactly one of circle, torus, sphere, mesh")
    (kind, margs), = man.items()
    if kind not in MANIFOLD_KEYS:
        raise InputError(f"unknown manifold {kind!r}")
    margs = dict(margs)
    _reject_unknown(margs, MANIFOLD_KEYS[kind], f"manifold.{kind}")
    if kind == "mesh":
        if "path" not in margs:
            raise InputError("manifold.mesh.path is required")
        margs["path"] = base / margs["path"]
        if "cache_path" in margs:
            margs["cache_path"] = base / margs["cache_path"]
    hraw = raw.get("hyperparameters", {})
    _reject_unknown(hraw, HYPER_KEYS, "hyperparameters")
    try:
        h = Hyperparameters(
            _real(hraw.get("sigma2", 1.0), "sigma2"),
            _real(hraw.get("kappa", 1.0), "kappa"),
            parse_nu(hraw.get("nu", "inf")),
        )
    except ValueError as exc:
        raise InputError(str(exc)) from exc
    cfg = RunConfig(kind, margs, h)
    cfg.noise_variance = _real(raw.get("noise_variance", 0.0), "noise_variance")
    if cfg.noise_variance < 0:
        raise InputError("noise_variance must be nonnegative")
    for key in ("data", "points", "out", "ply"):
        if raw.get(key) is not None:
            setattr(cfg, key, base / raw[key])
    if "seed" in raw:
        cfg.seed = raw["seed"]
    if "mode" in raw:
        cfg.mode = raw["mode"]
    cfg.fix = list(raw.get("fix", []))
    if "steps" in raw:
        cfg.steps = raw["steps"]
    if raw.get("learning_rate") is not None:
        cfg.learning_rate = _real(raw["learning_rate"], "learning_rate")
    if "count" in raw:
        cfg.count = _positive_int(raw["count"], "count")
    if raw.get("num_features") is not None:
        cfg.num_features = _positive_int(raw["num_features"], "num_features")
    cfg.x, cfg.x2 = raw.get("x"), raw.get("x2")
    return cfg


def load_config(args) -> RunConfig:
    if args.config is None:
        raise InputError("--config PATH is required")
    path = Path(args.config)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise InputError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise InputError(f"invalid JSON in {path}: {exc}") from None
    cfg = parse_config(raw, path.parent)
    # flags override the document
    if args.seed is not None:
        cfg.seed = args.seed
    if getattr(args, "out", None) is not None:
        cfg.out = Path(args.out)
    if getattr(args, "mode", None) is not None:
        cfg.mode = args.mode
    if getattr(args, "fix", None):
        cfg.fix = cfg.fix + args.fix
    if getattr(args, "count", None) is not None:
        cfg.count = _positive_int(args.count, "count")
    if getattr(args, "ply", None) is not None:
        cfg.ply = Path(args.ply)
    if isinstance(cfg.seed, bool) or not isinstance(cfg.seed, int) or not 0 <= cfg.seed < 2**64:
        raise InputError(f"seed must be an unsigned 64-bit integer, got {cfg.seed!r}")
    if cfg.mode not in MODE_NAMES:
        raise InputError(f"mode must be one of {MODE_NAMES}, got {cfg.mode!r}")
    _positive_int(cfg.steps, "steps")
    bad = sorted(set(cfg.fix) - set(gp.PARAMETERS))
    if bad:
        raise InputError(f"--fix takes {', '.join(gp.PARAMETERS)}; got {', '.join(bad)}")
    return cfg


# ---------------------------------------------------------------------------
# manifolds and points


def _mesh_cache_path(margs) -> Path:
    return Path(margs.get("cache_path") or str(margs["path"]) + ".eig")


def _mesh_setup(cfg: RunConfig, force: bool = False, report=None):
    margs = cfg.manifold_args
    num = _positive_int(margs.get("eigenpairs", 100), "eigenpairs")
    path = Path(margs["path"])
    if not path.exists():
        raise InputError(f"mesh file not found: {path}")
    mesh = load_mesh(path, margs.get("format"), bool(margs.get("keep_largest_component", False)))
    cache = _mesh_cache_path(margs)
    mes = None
    if cache.exists() and not force:
        mes = cache_read(cache)
        if mes.num_vertices != mesh.num_vertices or mes.num_eigenpairs != num:
            logger.warning("cache %s does not match the mesh or eigenpair count; recomputing", cache)
            mes = None
        elif report:
            report("cache hit")
    if mes is None:
        if num > mesh.num_vertices:
            raise InputError(f"eigenpairs={num} exceeds the vertex count {mesh.num_vertices}")
        mes = mesh_eigenpairs(mesh, num, tol=float(margs.get("tol", 1e-8)))
        if not mes.converged:
            logger.warning("eigensolver did not converge; max residual %.3e", mes.residuals.max())
        cache_write(mes, cache)
    return mesh, mes


def build_eigensystem(cfg: RunConfig, report=None):
    a = cfg.manifold_args
    try:
        if cfg.manifold == "circle":
            return circle_eigensystem(_positive_int(a.get("levels", 200), "levels"))
        if cfg.manifold == "torus":
            return torus_eigensystem(_positive_int(a.get("d", 2), "d"), _positive_int(a.get("max_freq", 20), "max_freq"))
        if cfg.manifold == "sphere":
            return sphere_eigensystem(_positive_int(a.get("d", 2), "d"), _positive_int(a.get("levels", 30), "levels"))
    except ValueError as exc:
        raise InputError(str(exc)) from exc
    mesh, mes = _mesh_setup(cfg, report=report)
    return mesh_eigen_to_eigensystem(mes, mesh)


def _floats(text: str) -> list[float]:
    try:
        return [float(t) for t in text.replace(" ", "").split(",")]
    except ValueError:
        raise InputError(f"cannot parse point {text!r}") from None


def parse_points(es, texts: list[str], vertices_only: bool = False):
    """Decode textual points for the manifold of ``es``."""
    if es.manifold == "mesh":
        faces, bary = [], []
        for t in texts:
            t = t.strip()
            if t.startswith("vertex:"):
                try:
                    v = int(t[len("vertex:"):])
                except ValueError:
                    raise InputError(f"cannot parse point {t!r}") from None
                if not 0 <= v < es.mesh.num_vertices:
                    raise InputError(f"vertex index out of range in {t!r}")
                p = es.vertex_points([v])
                faces.append(int(p.face[0]))
                bary.append(p.bary[0])
            elif t.startswith("face:") and not vertices_only:
                head, _, rest = t[len("face:"):].partition(":")
                try:
                    f = int(head)
                except ValueError:
                    raise InputError(f"cannot parse point {t!r} (expected face:F:b0,b1,b2)") from None
                b = _floats(rest)
                if len(b) != 3:
                    raise InputError(f"face point needs 3 barycentric weights: {t!r}")
                if not 0 <= f < es.mesh.num_faces:
                    raise InputError(f"face index out of range in {t!r}")
                faces.append(f)
                bary.append(b)
            else:
                allowed = "vertex:i" if vertices_only else "vertex:i or face:F:b0,b1,b2"
                raise InputError(f"mesh point {t!r} must be {allowed}")
        try:
            return MeshPoints(np.array(faces, dtype=np.int64), np.array(bary, dtype=float).reshape(-1, 3))
        except ValueError as exc:
            raise InputError(str(exc)) from exc
    rows = [_floats(t) for t in texts]
    width = {"circle": 1, "torus": es.dim, "sphere": es.dim + 1}[es.manifold]
    for t, r in zip(texts, rows):
        if len(r) != width:
            raise InputError(f"{es.manifold} point needs {width} coordinate(s): {t!r}")
    X = np.array(rows, dtype=float).reshape(-1, width)
    if not np.all(np.isfinite(X)):
        raise InputError("non-finite point coordinates")
    if es.manifold == "circle":
        return X[:, 0]
    if es.manifold == "sphere" and np.any(np.linalg.norm(X, axis=1) == 0):
        raise InputError("sphere points must be nonzero vectors")
    return X


def _read_csv(path: Path, columns: tuple[str, ...]) -> list[list[str]]:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except FileNotFoundError:
        raise InputError(f"file not found: {path}") from None
    rows = [r for r in csv.reader(io.StringIO(text)) if r and any(c.strip() for c in r)]
    if not rows:
        raise InputError(f"empty CSV file: {path}")
    header = [c.strip() for c in rows[0]]
    if tuple(header) != columns:
        raise InputError(f"{path}: expected header {','.join(columns)}, got {','.join(header)}")
    body = rows[1:]
    if not body:
        raise InputError(f"no data rows in {path}")
    for r in body:
        if len(r) != len(columns):
            raise InputError(f"{path}: malformed row {r!r}")
    return body


def load_dataset(cfg: RunConfig, es) -> tuple[gp.Dataset, list[str]]:
    if cfg.data is None:
        raise InputError("config.data (training CSV) is required")
    body = _read_csv(cfg.data, ("point", "y"))
    texts = [r[0] for r in body]
    X = parse_points(es, texts, vertices_only=True)
    try:
        y = np.array([float(r[1]) for r in body])
    except ValueError:
        raise InputError(f"{cfg.data}: non-numeric y value") from None
    if not np.all(np.isfinite(y)):
        raise InputError(f"{cfg.data}: non-finite y value")
    return gp.Dataset(X, y, cfg.noise_variance), texts


def evaluation_points(cfg: RunConfig, es, data_texts=None):
    """Points listed in ``config.points``; all vertices on meshes; else training points."""
    if cfg.points is not None:
        texts = [r[0] for r in _read_csv(cfg.points, ("point",))]
        return parse_points(es, texts), texts
    if es.manifold == "mesh":
        idx = np.arange(es.mesh.num_vertices)
        return es.vertex_points(idx), [f"vertex:{i}" for i in idx]
    if data_texts is not None:
        return parse_points(es, data_texts), list(data_texts)
    raise InputError("config.points is required for this manifold")


def kernel_mode(cfg: RunConfig, es) -> str:
    if cfg.mode == "spectral":
        return "spectral"
    if cfg.mode == "closed":
        if es.manifold == "circle":
            return "circle_closed_form"
        if es.manifold == "sphere":
            return "sphere_gegenbauer"
        raise UnsupportedError(f"unsupported: no closed form on {es.manifold}")
    if cfg.mode == "periodic":
        if es.manifold in ("circle", "torus"):
            return "torus_periodic_sum"
        raise UnsupportedError(f"unsupported: periodic summation needs a circle or torus, not {es.manifold}")
    if es.manifold == "mesh":
        raise UnsupportedError("unsupported: naive geodesic kernel has no mesh geodesics")
    return "naive_geodesic"


def make_kernel(cfg: RunConfig, es, h=None) -> KernelEvaluator:
    mode = kernel_mode(cfg, es)
    try:
        return KernelEvaluator(h or cfg.hyperparameters, es, mode=mode)
    except DegenerateWeightsError:
        raise
    except ValueError as exc:
        raise InputError(str(exc)) from exc


# ---------------------------------------------------------------------------
# output


class _Output:
    """Collects text and writes it to ``path`` (or stdout) with LF endings."""

    def __init__(self, path):
        self.path = path
        self.buf = io.StringIO(newline="")

    def csv(self):
        return csv.writer(self.buf, lineterminator="\n")

    def close(self):
        data = self.buf.getvalue()
        if self.path is None:
            sys.stdout.write(data)
        else:
            Path(self.path).write_text(data, encoding="utf-8", newline="")


# ---------------------------------------------------------------------------
# commands


def cmd_eigen(cfg: RunConfig, args) -> int:
    if cfg.manifold != "mesh":
        raise InputError("eigen needs a mesh manifold")
    mesh, mes = _mesh_setup(cfg, force=args.force, report=print)
    res = eigen_residuals(mesh, mes)
    out = _Output(cfg.out)
    w = out.csv()
    w.writerow(["index", "lambda", "residual"])
    for i, (lam, r) in enumerate(zip(mes.eigenvalues, res)):
        w.writerow([i, fmt(lam), fmt(r)])
    out.close()
    return EXIT_OK


def cmd_kernel(cfg: RunConfig, args) -> int:
    es = build_eigensystem(cfg)
    ke = make_kernel(cfg, es)
    if args.grid is not None:
        texts = [r[0] for r in _read_csv(Path(args.grid), ("point",))]
        K = ke(parse_points(es, texts))
        out = _Output(cfg.out)
        w = out.csv()
        for row in K:
            w.writerow([fmt(v) for v in row])
        out.close()
        return EXIT_OK
    x = args.x if args.x is not None else cfg.x
    x2 = args.x2 if args.x2 is not None else (cfg.x2 if cfg.x2 is not None else x)
    if x is None:
        raise InputError("kernel needs points x [x2] or --grid PATH")
    value = ke(parse_points(es, [x]), parse_points(es, [x2]))[0, 0]
    out = _Output(cfg.out)
    out.buf.write(fmt(value) + "\n")
    out.close()
    return EXIT_OK


def cmd_fit(cfg: RunConfig, args) -> int:
    es = build_eigensystem(cfg)
    kernel_mode(cfg, es)  # only the spectral series is optimized, but reject bad modes early
    data, _ = load_dataset(cfg, es)
    fixed = set(cfg.fix)
    if data.noise_variance == 0:
        fixed.add("noise_variance")
    res = gp.optimize_hyperparameters(
        es, data, cfg.hyperparameters, fixed=tuple(sorted(fixed)), steps=cfg.steps,
        learning_rate=cfg.learning_rate,
    )
    h = res.hyperparameters
    doc = {
        "sigma2": h.sigma2,
        "kappa": h.kappa,
        "nu": "inf" if math.isinf(h.nu) else h.nu,
        "noise_variance": res.noise_variance,
        "log_evidence": res.log_evidence,
        "initial_log_evidence": res.initial_log_evidence,
        "iterations": res.iterations,
    }
    out = _Output(cfg.out)
    out.buf.write(json.dumps(doc, indent=2) + "\n")
    out.close()
    return EXIT_OK


def _prior_sampler(cfg: RunConfig, es, h):
    if cfg.num_features is not None:
        return gp.RandomFeaturePrior(h, es, cfg.num_features)
    return gp.DeterministicFeaturePrior(h, es)


def cmd_sample(cfg: RunConfig, args) -> int:
    es = build_eigensystem(cfg)
    if cfg.mode != "spectral":
        raise UnsupportedError("unsupported: sampling uses the spectral series only")
    h = cfg.hyperparameters
    prior = _prior_sampler(cfg, es, h)
    if args.posterior:
        data, texts = load_dataset(cfg, es)
        post = gp.fit(make_kernel(cfg, es), data)
        X, names = evaluation_points(cfg, es, texts)
        S = gp.sample_posterior_pathwise(post, prior, cfg.seed, X, cfg.count)
    else:
        X, names = evaluation_points(cfg, es)
        S = prior.draw_many(cfg.count, cfg.seed)(X)
    out = _Output(cfg.out)
    w = out.csv()
    w.writerow(["point"] + [f"sample_{j}" for j in range(cfg.count)])
    for name, row in zip(names, S):
        w.writerow([name] + [fmt(v) for v in row])
    out.close()
    if cfg.ply is not None:
        _export_ply(cfg, es, {f"sample_{j}": S[:, j] for j in range(min(cfg.count, 8))}
                    | ({"std": S.std(axis=1)} if cfg.count > 1 else {}))
    return EXIT_OK


def cmd_predict(cfg: RunConfig, args) -> int:
    es = build_eigensystem(cfg)
    data, texts = load_dataset(cfg, es)
    post = gp.fit(make_kernel(cfg, es), data)
    X, names = evaluation_points(cfg, es, texts)
    pred = gp.predict(post, X)
    if pred.clipped > 0:
        logger.info("clipped negative predictive variance of magnitude %.3e", pred.clipped)
    out = _Output(cfg.out)
    w = out.csv()
    w.writerow(["point", "mean", "variance"])
    for name, m, v in zip(names, pred.mean, pred.variance):
        w.writerow([name, fmt(m), fmt(v)])
    out.close()
    if cfg.ply is not None:
        _export_ply(cfg, es, {"mean": pred.mean, "variance": pred.variance})
    return EXIT_OK


def _export_ply(cfg, es, scalars):
    if es.manifold != "mesh" or cfg.points is not None:
        raise InputError("--ply export needs a mesh evaluated at all vertices")
    write_ply(es.mesh, cfg.ply, scalars)


def cmd_check(cfg, args) -> int:
    from .checks import run_checks

    results = run_checks(report=print)
    failed = [c.name for c in results if not c.passed]
    print(f"{len(results) - len(failed)}/{len(results)} checks passed")
    return EXIT_CHECK if failed else EXIT_OK


COMMANDS = {
    "eigen": cmd_eigen,
    "kernel": cmd_kernel,
    "fit": cmd_fit,
    "sample": cmd_sample,
    "predict": cmd_predict,
    "check": cmd_check,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="JSON run configuration")
    common.add_argument("--seed", type=int, metavar="U64", help="random seed (overrides config)")
    common.add_argument("--out", metavar="PATH", help="output file (default: standard output)")
    common.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")

    parser = argparse.ArgumentParser(prog="rmgp", description="Spectral GP kernels, fitting and sampling on curved spaces and meshes.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("eigen", parents=[common], help="compute and cache mesh eigenpairs")
    p.add_argument("--force", action="store_true", help="recompute even if a cache exists")

    p = sub.add_parser("kernel", parents=[common], help="evaluate k(x, x2) or a Gram matrix")
    p.add_argument("x", nargs="?")
    p.add_argument("x2", nargs="?")
    p.add_argument("--mode", choices=MODE_NAMES)
    p.add_argument("--grid", metavar="PATH", help="CSV with header 'point'; prints the Gram matrix")

    p = sub.add_parser("fit", parents=[common], help="maximize the marginal likelihood")
    p.add_argument("--fix", action="append", metavar="NAME", help="hold sigma2, kappa or noise_variance fixed")
    p.add_argument("--mode", choices=MODE_NAMES)

    for name, text in (("sample", "draw prior or posterior sample paths"),
                       ("predict", "posterior mean and variance")):
        p = sub.add_parser(name, parents=[common], help=text)
        p.add_argument("--mode", choices=MODE_NAMES)
        p.add_argument("--ply", metavar="PATH", help="also write an ASCII PLY with per-vertex scalars")
        if name == "sample":
            p.add_argument("--count", type=int, metavar="N", help="number of sample paths")
            p.add_argument("--posterior", action="store_true", help="condition on the training data")

    sub.add_parser("check", parents=[common], help="run the invariant suite")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        cfg = None if (args.command == "check" and args.config is None) else load_config(args)
        return COMMANDS[args.command](cfg, args)
    except (InputError, MeshError, CacheError, UnsupportedError, TypeError, IndexError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except FileNotFoundError as exc:
        print(f"error: file not found: {exc.filename}", file=sys.stderr)
        return EXIT_INPUT
    except (np.linalg.LinAlgError, EigensolverError, gp.OptimizationError, DegenerateWeightsError,
            FloatingPointError, NumericalError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
