"""Command-line interface: ``polydf {fit, df, sure-tune, experiment}``.

Every option may also come from a JSON file given with ``--config``; keys
are the long option names with dashes or underscores.  Explicit flags win
over the file.  Relative paths inside the file are resolved against the
file's directory.

Exit codes: 0 success, 2 configuration error, 3 infeasible constraints,
4 unbounded objective, 5 solver did not converge.
"""

from __future__ import annotations

import argparse
import contextlib
import csv
import json
import logging
import math
import os
import sys
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__, dof, isotonic, problems, qp, sure

SCHEMA_VERSION = 1
EXIT_CONFIG, EXIT_INFEASIBLE, EXIT_UNBOUNDED, EXIT_NONCONVERGENCE = 2, 3, 4, 5
EXPERIMENTS = ("df-compare", "iso-ratio", "cvx-ratio", "unbiasedness")
ORACLES = ("finite_difference", "monte_carlo")

logger = logging.getLogger("polydf")


class ConfigError(ValueError):
    """Invalid or inconsistent command configuration."""


class NonConvergence(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# configuration


@dataclass
class ExperimentConfig:
    command: str
    kind: Optional[str] = None
    param: Optional[float] = None
    data: Optional[Path] = None
    edges: Optional[Path] = None
    penalty: Optional[Path] = None
    lambda_grid: Optional[np.ndarray] = None
    sigma: Optional[float] = None
    reps: Optional[int] = None
    seed: Optional[int] = None
    out: Path = Path(".")
    threads: int = 1
    bit_repro: bool = False
    experiment: Optional[str] = None
    n: Optional[int] = None
    d: Optional[int] = None
    grid_size: int = 30
    oracles: tuple = ()
    method: str = "operator_splitting_with_polish"
    primal_tol: float = 1e-9
    dual_tol: float = 1e-9
    max_iter: int = 50000

    def solver(self) -> qp.SolverConfig:
        return qp.SolverConfig(max_iterations=self.max_iter, primal_tol=self.primal_tol,
                               dual_tol=self.dual_tol, method=self.method)


def parse_grid(text) -> np.ndarray:
    """``"a,b,c"``, ``"linspace:lo:hi:num"`` or ``"logspace:lo:hi:num"`` (base-10 exponents)."""
    if isinstance(text, (list, tuple)):
        g = np.asarray(text, dtype=float)
    else:
        text = str(text).strip()
        try:
            if text.startswith(("linspace:", "logspace:")):
                name, lo, hi, num = text.split(":")
                g = getattr(np, name)(float(lo), float(hi), int(num))
            else:
                g = np.array([float(v) for v in text.split(",") if v.strip()])
        except ValueError as exc:
            raise ConfigError(f"cannot parse lambda grid {text!r}") from exc
    if g.size == 0:
        raise ConfigError("lambda grid is empty")
    if np.any(np.diff(g) < 0):
        raise ConfigError("lambda grid must be sorted ascending")
    if np.any(g < 0) or not np.all(np.isfinite(g)):
        raise ConfigError("lambda grid values must be finite and nonnegative")
    return g


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="JSON file with option values")
    common.add_argument("--data", type=Path, help="CSV with header x_1..x_d,y")
    common.add_argument("--edges", type=Path, help="poset edge list CSV with header i,j")
    common.add_argument("--penalty", type=Path, help="penalty matrix CSV (generalized lasso)")
    common.add_argument("--kind", choices=problems.KINDS, help="problem kind")
    common.add_argument("--param", type=float, help="tuning parameter (lam or tau)")
    common.add_argument("--lambda-grid", help="a,b,c | linspace:lo:hi:num | logspace:lo:hi:num")
    common.add_argument("--sigma", type=float, help="noise standard deviation")
    common.add_argument("--reps", type=int, help="Monte-Carlo replications")
    common.add_argument("--seed", type=int, help="master seed")
    common.add_argument("--out", type=Path, help="output directory (default: .)")
    common.add_argument("--threads", type=int, help="worker threads (default: logical cores)")
    common.add_argument("--bit-repro", action="store_true", default=None,
                        help="single-threaded BLAS and no timing fields, for byte-identical output")
    common.add_argument("--method", choices=("operator_splitting_with_polish", "active_set"))
    common.add_argument("--primal-tol", type=float)
    common.add_argument("--dual-tol", type=float)
    common.add_argument("--max-iter", type=int)
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="polydf", description=__doc__.split("\n")[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("fit", parents=[common], help="fit one problem")
    d = sub.add_parser("df", parents=[common], help="divergence by formula and oracles")
    d.add_argument("--oracles", help="comma list of finite_difference, monte_carlo")
    sub.add_parser("sure-tune", parents=[common], help="select the tuning parameter by SURE")
    e = sub.add_parser("experiment", parents=[common], help="simulation studies")
    e.add_argument("--experiment", choices=EXPERIMENTS)
    e.add_argument("--n", type=int)
    e.add_argument("--d", type=int)
    e.add_argument("--grid-size", type=int)
    return p


_PATH_KEYS = ("data", "edges", "penalty", "out")


def resolve_config(ns: argparse.Namespace) -> ExperimentConfig:
    """Merge the JSON file (if any) with explicit flags and validate."""
    values = {}
    if ns.config is not None:
        if not ns.config.is_file():
            raise ConfigError(f"config file {ns.config} not found")
        try:
            raw = json.loads(ns.config.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {ns.config}: {exc}") from exc
        if not isinstance(raw, dict):
            raise ConfigError("config file must hold a JSON object")
        base = ns.config.parent
        for k, v in raw.items():
            key = k.replace("-", "_")
            if key == "command":
                if v != ns.command:
                    raise ConfigError(f"config is for command {v!r}, not {ns.command!r}")
                continue
            if key in _PATH_KEYS and v is not None:
                v = base / v
            values[key] = v
    for k, v in vars(ns).items():
        if k not in ("config", "command", "verbose") and v is not None:
            values[k] = v

    known = set(ExperimentConfig.__dataclass_fields__) - {"command"}
    unknown = set(values) - known
    if unknown:
        raise ConfigError(f"unknown option(s): {', '.join(sorted(unknown))}")
    try:
        for k in _PATH_KEYS:
            if k in values:
                values[k] = Path(values[k])
        if "lambda_grid" in values:
            values["lambda_grid"] = parse_grid(values["lambda_grid"])
        if isinstance(values.get("oracles"), str):
            values["oracles"] = tuple(o.strip() for o in values["oracles"].split(",") if o.strip())
        for k in ("param", "sigma", "primal_tol", "dual_tol"):
            if k in values:
                values[k] = float(values[k])
        for k in ("reps", "seed", "threads", "n", "d", "grid_size", "max_iter"):
            if k in values:
                values[k] = int(values[k])
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    values.setdefault("threads", os.cpu_count() or 1)
    cfg = ExperimentConfig(command=ns.command, **values)
    _validate(cfg)
    return cfg


def _validate(cfg: ExperimentConfig) -> None:
    for k in ("data", "edges", "penalty"):
        path = getattr(cfg, k)
        if path is not None and not path.is_file():
            raise ConfigError(f"--{k}: file {path} not found")
    if cfg.threads < 1:
        raise ConfigError("--threads must be at least 1")
    if cfg.sigma is not None and not cfg.sigma > 0:
        raise ConfigError("--sigma must be positive")
    if cfg.reps is not None and cfg.reps < 1:
        raise ConfigError("--reps must be at least 1")
    bad = set(cfg.oracles) - set(ORACLES)
    if bad:
        raise ConfigError(f"unknown oracle(s) {sorted(bad)}; choose from {ORACLES}")
    if cfg.command in ("fit", "df", "sure-tune"):
        if cfg.kind is None:
            raise ConfigError("--kind is required")
        if cfg.data is None:
            raise ConfigError("--data is required")
        if cfg.kind == "generalized_lasso" and cfg.penalty is None:
            raise ConfigError("generalized_lasso needs --penalty")
    if cfg.command == "sure-tune":
        if cfg.sigma is None:
            raise ConfigError("sure-tune needs --sigma")
        if cfg.kind not in problems.TUNED:
            raise ConfigError(f"{cfg.kind} has no tuning parameter")
    if cfg.command == "df" and "monte_carlo" in cfg.oracles:
        if cfg.seed is None or cfg.sigma is None or cfg.reps is None:
            raise ConfigError("the monte_carlo oracle needs --seed, --sigma and --reps")
    if cfg.command == "experiment":
        if cfg.experiment is None:
            raise ConfigError("--experiment is required")
        if cfg.seed is None:
            raise ConfigError("experiments need --seed")
        for k in ("n", "d", "reps"):
            if getattr(cfg, k) is None:
                raise ConfigError(f"experiments need --{k}")
        if cfg.reps < 2 and cfg.experiment in ("df-compare", "unbiasedness"):
            raise ConfigError(f"{cfg.experiment} needs --reps >= 2")


# ---------------------------------------------------------------------------
# output helpers


def _num(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_num(v) for v in r])


def _jsonable(v):
    if isinstance(v, dict):
        return {k: _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, np.ndarray):
        return [_jsonable(x) for x in v.tolist()]
    if isinstance(v, (np.bool_, bool)):
        return bool(v)
    if isinstance(v, np.integer):
        return int(v)
    if isinstance(v, (float, np.floating)):
        v = float(v)
        return v if math.isfinite(v) else str(v)
    if isinstance(v, Path):
        return str(v)
    return v


def write_json(path: Path, payload: dict) -> None:
    doc = {"schema_version": SCHEMA_VERSION, **_jsonable(payload)}
    with open(path, "w", newline="\n", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _run_info(cfg: ExperimentConfig, started: float) -> dict:
    info = {"version": __version__, "command": cfg.command, "seed": cfg.seed,
            "threads": cfg.threads, "bit_repro": cfg.bit_repro,
            "tolerances": {"primal": cfg.primal_tol, "dual": cfg.dual_tol,
                           "max_iterations": cfg.max_iter, "method": cfg.method}}
    if not cfg.bit_repro:
        info["elapsed_seconds"] = time.perf_counter() - started
    return info


# ---------------------------------------------------------------------------
# commands


def load_problem(cfg: ExperimentConfig) -> problems.ProblemSpec:
    ds = problems.read_dataset(cfg.data, cfg.sigma)
    order = isotonic.read_edges(cfg.edges, ds.n) if cfg.edges is not None else None
    D = problems.read_matrix(cfg.penalty) if cfg.penalty is not None else None
    param = cfg.param
    if param is None and cfg.kind in problems.TUNED:
        if cfg.command != "sure-tune":
            raise ConfigError(f"{cfg.kind} needs --param")
        param = math.inf if cfg.kind == "bounded_isotonic_poset" else 0.0
    if cfg.kind == "univariate_isotonic" and order is None and ds.d == 0:
        ds = problems.Dataset(np.arange(ds.n, dtype=float), ds.y, ds.sigma)
    return problems.ProblemSpec(cfg.kind, ds, param, D=D, order=order)


def _checked(fit: qp.FitResult) -> qp.FitResult:
    if fit.status != "optimal":
        raise NonConvergence(f"solver stopped with status {fit.status}; "
                             f"max KKT residual {fit.max_kkt_residual:.3g}")
    return fit


def cmd_fit(cfg: ExperimentConfig) -> dict:
    started = time.perf_counter()
    spec = load_problem(cfg)
    fit = _checked(problems.fit(spec, cfg=cfg.solver()))
    sys_ = spec.system()
    out = cfg.out
    y = spec.data.y

    header = ["index", "y", "theta_hat"]
    blocks = None
    xi = fit.xi_hat if fit.xi_hat is not None else np.zeros(0)
    if xi.size and spec.kind in ("multivariate_convex", "penalized_convex"):
        blocks = xi.reshape(spec.n, spec.data.d)
        header += [f"xi_{a + 1}" for a in range(spec.data.d)]
    rows = []
    for i in range(spec.n):
        row = [i, y[i], fit.theta_hat[i]]
        if blocks is not None:
            row += list(blocks[i])
        rows.append(row)
    write_csv(out / "fit.csv", header, rows)

    if xi.size:
        labels = getattr(sys_, "xi_labels", None) or [f"xi:{k}" for k in range(xi.size)]
        write_csv(out / "xi.csv", ["label", "value"], zip(labels, xi))

    labels, slack = _row_info(sys_, fit)
    write_csv(out / "active_set.csv", ["row", "label", "slack", "dual"],
              [[j, labels[j], slack[j], fit.duals[j]] for j in fit.active.indices])

    run = {"status": fit.status, "objective": fit.objective, "kind": spec.kind,
           "param": spec.param, "n": spec.n, "iterations": fit.iterations,
           "solver_method": fit.method, "kkt": fit.kkt,
           "active_rows": len(fit.active), "near_degenerate": fit.active.near_degenerate,
           **_run_info(cfg, started)}
    if cfg.bit_repro:
        run.pop("iterations")
    write_json(out / "run.json", run)
    return run


def _row_info(sys_, fit):
    if isinstance(sys_, isotonic.BoundedIsotonicSystem):
        cs = sys_.constraint_system()
        return cs.labels, cs.slack(fit.theta_hat)
    if hasattr(sys_, "B"):
        return sys_.labels, sys_.slack(fit.xi_hat, fit.theta_hat)
    return sys_.labels, sys_.slack(fit.theta_hat)


def cmd_df(cfg: ExperimentConfig) -> dict:
    started = time.perf_counter()
    spec = load_problem(cfg)
    solver = cfg.solver()
    fit = _checked(problems.fit(spec, cfg=solver))
    rep = dof.divergence(spec, fit)
    result = {"kind": spec.kind, "param": spec.param, "n": spec.n,
              "formula": {"value": rep.value, "method": rep.method,
                          "diagnostics": rep.diagnostics},
              "flags": {"near_degenerate": rep.near_degenerate, "status": fit.status,
                        "max_kkt_residual": fit.max_kkt_residual}}

    def fit_fn(v):
        return problems.fit(spec, v, solver)

    if "finite_difference" in cfg.oracles:
        try:
            fd = dof.finite_difference_divergence(fit_fn, spec.data.y, seed=cfg.seed or 0)
            result["finite_difference"] = {"value": fd.value, **fd.diagnostics}
        except dof.UnstableDivergence as exc:
            result["finite_difference"] = {"value": None, "error": str(exc)}
    if "monte_carlo" in cfg.oracles:
        # plug-in mean: responses are simulated around the fitted values
        val, se = dof.monte_carlo_df(fit.theta_hat, cfg.sigma, fit_fn, cfg.reps, cfg.seed,
                                     cfg.threads)
        result["monte_carlo"] = {"value": val, "se": se, "replications": cfg.reps,
                                 "mean": "fitted values"}
    result.update(_run_info(cfg, started))
    write_json(cfg.out / "df.json", result)
    return result


def _write_curve(path, curve: sure.SureCurve):
    header = ["lambda", "rss", "D", "U_n", "L_n", "near_degenerate"]
    write_csv(path, header, ([r[h] for h in header] for r in curve.records()))


def cmd_sure_tune(cfg: ExperimentConfig) -> dict:
    started = time.perf_counter()
    spec = load_problem(cfg)
    grid = cfg.lambda_grid if cfg.lambda_grid is not None else \
        sure.default_grid(spec, cfg.grid_size)
    try:
        curve = sure.tune(spec, grid, cfg.sigma, cfg.solver())
    except sure.TuneError as exc:
        if exc.partial is not None:
            _write_curve(cfg.out / "sure_curve.csv", exc.partial)
        raise
    _write_curve(cfg.out / "sure_curve.csv", curve)
    k = int(np.argmin(curve.U))
    summary = {"kind": spec.kind, "n": spec.n, "sigma": cfg.sigma,
               "grid_size": int(curve.grid.size), "lambda_hat": curve.lambda_hat,
               "U_min": float(curve.U[k]), "D_at_lambda_hat": float(curve.divergence[k]),
               "max_kkt_residual": float(curve.kkt.max()), **_run_info(cfg, started)}
    write_json(cfg.out / "summary.json", summary)
    return summary


DEFAULT_DF_GRID = "linspace:0.1:2.5:15"


def cmd_experiment(cfg: ExperimentConfig) -> dict:
    started = time.perf_counter()
    e = cfg.experiment
    sigma = cfg.sigma
    summary = {"experiment": e, "n": cfg.n, "d": cfg.d, "replications": cfg.reps}
    if e in ("df-compare", "unbiasedness"):
        sigma = 1.0 if sigma is None else sigma
        grid = cfg.lambda_grid if cfg.lambda_grid is not None else parse_grid(DEFAULT_DF_GRID)
        if e == "df-compare":
            res = sure.df_compare(cfg.n, cfg.d, sigma, grid, cfg.reps, cfg.seed, cfg.threads)
            header = ["lambda", "formula_df", "formula_se", "mc_df", "mc_se"]
            write_csv(cfg.out / "df_compare.csv", header,
                      ([r[h] for h in header] for r in res.rows()))
            gap = np.abs(res.formula_df - res.mc_df)
            summary.update(max_gap_in_se=float(np.max(gap / res.mc_se)),
                           mean_relative_deviation=float(np.mean(gap / np.abs(res.mc_df))),
                           max_kkt=res.max_kkt)
        else:
            res = sure.unbiasedness_experiment(cfg.n, cfg.d, sigma, grid, cfg.reps, cfg.seed,
                                               cfg.threads)
            write_csv(cfg.out / "unbiasedness.csv",
                      ["lambda", "mean_U", "mean_L", "se_U", "se_L", "combined_se"],
                      zip(res.grid, res.mean_U, res.mean_L, res.se_U, res.se_L,
                          res.combined_se))
            summary.update(max_gap_in_se=float(np.max(np.abs(res.mean_U - res.mean_L)
                                                      / res.combined_se)),
                           max_kkt=res.max_kkt)
    else:
        kind = "isotonic" if e == "iso-ratio" else "convex"
        sigma = (1.0 if kind == "isotonic" else 0.5) if sigma is None else sigma
        rc = sure.RatioConfig(kind, cfg.n, cfg.d, sigma, cfg.reps, cfg.seed,
                              grid_size=cfg.grid_size, workers=cfg.threads,
                              method="active_set" if kind == "convex" else cfg.method)
        res = sure.ratio_experiment(rc)
        header = ["replication", "kind", "n", "d", "sure_ratio", "reference_ratio",
                  "lambda_hat", "lambda_star"]
        write_csv(cfg.out / "ratios.csv", header, ([r[h] for h in header] for r in res.rows()))
        summary.update(res.summary())
    summary["sigma"] = sigma
    summary.update(_run_info(cfg, started))
    write_json(cfg.out / "summary.json", summary)
    return summary


COMMANDS = {"fit": cmd_fit, "df": cmd_df, "sure-tune": cmd_sure_tune,
            "experiment": cmd_experiment}


@contextlib.contextmanager
def _blas_limit(active: bool):
    if not active:
        yield
        return
    try:
        from threadpoolctl import threadpool_limits
    except ImportError:  # pragma: no cover
        logger.warning("threadpoolctl is not installed; BLAS threads are not pinned")
        yield
        return
    with threadpool_limits(limits=1):
        yield


def main(argv=None) -> int:
    parser = _parser()
    ns = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if ns.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(ns)
        cfg.out.mkdir(parents=True, exist_ok=True)
        with _blas_limit(cfg.bit_repro):
            try:
                COMMANDS[cfg.command](cfg)
            except sure.TuneError as exc:
                # report the underlying solver failure with its own code
                if isinstance(exc.__cause__, qp.SolverError):
                    raise exc.__cause__ from exc
                raise
    except (ConfigError, FileNotFoundError) as exc:
        print(f"polydf: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except qp.InfeasibleError as exc:
        print(f"polydf: infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except qp.UnboundedError as exc:
        print(f"polydf: unbounded: {exc}", file=sys.stderr)
        return EXIT_UNBOUNDED
    except (NonConvergence, qp.SolverError, sure.TuneError) as exc:
        print(f"polydf: no convergence: {exc}", file=sys.stderr)
        return EXIT_NONCONVERGENCE
    except ValueError as exc:
        # invalid data reaching the library (shapes, ordering, cycles ...)
        print(f"polydf: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
