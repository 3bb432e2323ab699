"""Command-line front end: ``bentrank {fit,test,cv,simulate,sweep}``.

Each command writes its artifacts to ``--out`` and exits 0 on success. On
failure a JSON error record goes to stderr and the exit status is non-zero:

    2  bad input or arguments         4  fit did not converge
    3  change point not identified    5  rank-deficient design
    1  any other numerical failure
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
import warnings
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from . import __version__
from .baseline import fit_ls_bent_line, ls_cusum_test
from .bentfit import FitConfig, fit_bent_line, kfold_fold_errors
from .cusum import TestConfig, cusum_test
from .data import (
    BentLineFit,
    BentRankError,
    ConvergenceWarning,
    DataError,
    Dataset,
    IdentifiabilityError,
    RankDeficientError,
    predict,
    validate_dataset,
)
from .simulation import ErrorKind, SimReport, SimScenario, bandwidth_sweep, run_estimation_study, run_test_study

EXIT_CODES = {DataError: 2, IdentifiabilityError: 3, RankDeficientError: 5}
EXIT_NOT_CONVERGED = 4
INTERCEPT = "intercept"


class IngestError(DataError):
    """A CSV file cannot be turned into a dataset."""

    code = "input_error"


class NotConvergedError(BentRankError):
    code = "not_converged"


def ingest_csv(path: str | Path, response: str, threshold: str,
               covariates: Sequence[str] = (), intercept: bool = True) -> Dataset:
    """Read a header-first, comma-separated UTF-8 file into a :class:`Dataset`.

    ``covariates`` become columns of x after an optional leading column of
    ones named ``intercept``. Indicator columns coded 0/1 pass through as is.
    Row numbers in error messages count data rows from 1 (the header is row 0).
    """
    path = Path(path)
    if not path.is_file():
        raise IngestError(f"input file not found: {path}")
    with open(path, newline="", encoding="utf-8-sig") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise IngestError(f"{path} is empty")
        header = [h.strip() for h in header]
        wanted = [response, threshold, *covariates]
        missing = [c for c in wanted if c not in header]
        if missing:
            raise IngestError(f"column(s) not found: {', '.join(missing)}; available: {', '.join(header)}")
        idx = [header.index(c) for c in wanted]
        rows, problems = [], []
        for r, line in enumerate(reader, start=1):
            if not line or all(not c.strip() for c in line):
                continue
            vals = []
            for col, j in zip(wanted, idx):
                cell = line[j].strip() if j < len(line) else ""
                if cell == "":
                    problems.append(f"row {r}, column {col!r}: missing value")
                    continue
                try:
                    vals.append(float(cell))
                except ValueError:
                    problems.append(f"row {r}, column {col!r}: non-numeric value {cell!r}")
            rows.append(vals)
        if problems:
            raise IngestError("; ".join(problems))
    if not rows:
        raise IngestError(f"{path} has a header but no data rows")
    arr = np.array(rows, dtype=float)
    x = arr[:, 2:]
    names = list(covariates)
    if intercept:
        x = np.column_stack([np.ones(arr.shape[0]), x])
        names = [INTERCEPT, *names]
    return validate_dataset(arr[:, 0], x, arr[:, 1], x_names=tuple(names))


@dataclass
class RunConfig:
    command: str
    out: Path
    formats: tuple[str, ...] = ("csv",)
    method: str = "rank"
    seed: int = 0
    fit: FitConfig = field(default_factory=FitConfig)
    test: TestConfig = field(default_factory=TestConfig)
    options: dict[str, Any] = field(default_factory=dict)

    def echo(self) -> dict[str, Any]:
        t = asdict(self.test)
        t["kernel"] = self.test.kernel.value  # type: ignore[union-attr]
        return {"command": self.command, "method": self.method, "seed": self.seed,
                "fit_config": asdict(self.fit), "test_config": t, **self.options}


def _methods(method: str) -> list[str]:
    return ["rank", "ls"] if method == "both" else [method]


def _write_rows(path: Path, rows: list[dict[str, Any]]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        for r in rows:
            w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in r.items()})


def _write_json(path: Path, cfg: RunConfig, results: Any) -> None:
    doc = {
        "metadata": {"tool": "bentrank", "version": __version__,
                     "created": datetime.now(timezone.utc).isoformat(timespec="seconds")},
        "config": cfg.echo(),
        "seed": cfg.seed,
        "results": results,
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True, default=_jsonable)
        fh.write("\n")


def _jsonable(o: Any) -> Any:
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    raise TypeError(f"cannot serialize {type(o).__name__}")


def fitted_curve(fit: BentLineFit, dataset: Dataset, points: int = 201) -> list[dict[str, Any]]:
    """Plot-ready ``(z, yhat)`` over the z range with x held at its column means."""
    z = dataset.z
    grid = np.unique(np.append(np.linspace(z.min(), z.max(), points), fit.params.tau))
    xbar = dataset.x.mean(axis=0)
    yhat = predict(fit.params, np.tile(xbar, (grid.size, 1)), grid)
    return [{"method": fit.method, "z": float(g), **{n: float(v) for n, v in zip(dataset.x_names, xbar)},
             "yhat": float(h)} for g, h in zip(grid, yhat)]


def _fit_summary(fit: BentLineFit) -> dict[str, Any]:
    return {"method": fit.method, "params": fit.param_table(), "offset": fit.params.offset,
            "eta_final": fit.eta_final, "se_tau": fit.se_tau, "ci_tau": list(fit.ci_tau),
            "ci_level": fit.ci_level, "scale": fit.scale_c_phi, "iterations": fit.iterations,
            "converged": fit.converged, "objective": fit.objective,
            "covariance": fit.covariance}


def _run_fit(cfg: RunConfig, data: Dataset) -> int:
    fits = []
    for m in _methods(cfg.method):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", ConvergenceWarning)
            try:
                fit = (fit_bent_line if m == "rank" else fit_ls_bent_line)(data, cfg.fit)
            except IdentifiabilityError as exc:
                raise IdentifiabilityError(
                    f"{m} fit: {exc}. Run `bentrank test` to check that a change point exists."
                ) from exc
        fits.append(fit)
    if "csv" in cfg.formats:
        params = []
        for f in fits:
            for row in f.param_table():
                params.append(row)
            if f.params.offset:
                params.append({"method": f.method, "parameter": "offset", "estimate": f.params.offset,
                               "se": float("nan"), "ci_lower": float("nan"), "ci_upper": float("nan")})
        _write_rows(cfg.out / "params.csv", params)
        _write_rows(cfg.out / "diagnostics.csv", [
            {"method": f.method, "converged": f.converged, "iterations": f.iterations,
             "eta_final": f.eta_final, "scale": f.scale_c_phi, "objective": f.objective} for f in fits])
        _write_rows(cfg.out / "fitted_curve.csv", [r for f in fits for r in fitted_curve(f, data)])
    if "json" in cfg.formats:
        _write_json(cfg.out / "fit.json", cfg, {
            "n": data.n, "fits": [_fit_summary(f) for f in fits],
            "fitted_curve": [r for f in fits for r in fitted_curve(f, data)]})
    if cfg.options.get("test"):
        _run_test(cfg, data)
    if cfg.options.get("kfold"):
        _run_cv(cfg, data)
    bad = [f for f in fits if not f.converged]
    if bad:
        raise NotConvergedError(
            "fit did not converge: " + ", ".join(
                f"{f.method} (iterations={f.iterations}, eta_final={f.eta_final:.3g})" for f in bad))
    return 0


def _run_test(cfg: RunConfig, data: Dataset) -> int:
    results = [(cusum_test if m == "rank" else ls_cusum_test)(data, cfg.test) for m in _methods(cfg.method)]
    if "csv" in cfg.formats:
        _write_rows(cfg.out / "test_summary.csv", [
            {"method": r.method, "t_n": r.t_n, "p_value": r.p_value, "nb": r.nb,
             "bandwidth": r.bandwidth, "seed": r.seed} for r in results])
        _write_rows(cfg.out / "rn_path.csv", [
            {"method": r.method, "tau": float(t), "r_n": float(v)}
            for r in results for t, v in zip(r.tau_grid, r.r_n_path)])
        _write_rows(cfg.out / "bootstrap_stats.csv", [
            {"method": r.method, "replicate": j, "t_star": float(v)}
            for r in results for j, v in enumerate(r.bootstrap_stats)])
    if "json" in cfg.formats:
        _write_json(cfg.out / "test.json", cfg, [r.to_dict() for r in results])
    return 0


def _run_cv(cfg: RunConfig, data: Dataset) -> int:
    k = int(cfg.options.get("kfold") or 5)
    rows = []
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ConvergenceWarning)
        for m in _methods(cfg.method):
            errs = kfold_fold_errors(data, k, cfg.fit, seed=cfg.seed, method=m)
            rows += [{"method": m, "fold": str(j + 1), "pe": float(e)} for j, e in enumerate(errs)]
            rows.append({"method": m, "fold": "total", "pe": float(errs.sum())})
    if "csv" in cfg.formats:
        _write_rows(cfg.out / "cv.csv", rows)
    if "json" in cfg.formats:
        _write_json(cfg.out / "cv.json", cfg, {"k": k, "rows": rows})
    return 0


def _emit_report(cfg: RunConfig, report: SimReport, stem: str) -> None:
    if "csv" in cfg.formats:
        report.write_csv(cfg.out / f"{stem}.csv")
    if "json" in cfg.formats:
        _write_json(cfg.out / f"{stem}.json", cfg, report.to_dict())


def _scenarios(cfg: RunConfig) -> list[SimScenario]:
    o = cfg.options
    return [SimScenario(n=o["n"], reps=o["reps"], error_kind=c, seed=cfg.seed) for c in o["cases"]]


def _run_simulate(cfg: RunConfig) -> int:
    o = cfg.options
    threads = o.get("threads")
    if o["study"] in ("estimation", "both"):
        rows: list[dict[str, Any]] = []
        settings = []
        for sc in _scenarios(cfg):
            rep = run_estimation_study(sc, _methods(cfg.method), cfg.fit, threads)
            rows += rep.rows
            settings.append(rep.settings)
        _emit_report(cfg, SimReport("estimation", rows, {"studies": settings}), "estimation")
    if o["study"] in ("test", "both"):
        rep = run_test_study(_scenarios(cfg), o["gammas"], _methods(cfg.method), cfg.test, threads)
        _emit_report(cfg, rep, "test_study")
    return 0


def _run_sweep(cfg: RunConfig) -> int:
    o = cfg.options
    rows = []
    for sc in _scenarios(cfg):
        rows += bandwidth_sweep(sc, o["c_values"], cfg.test, o.get("threads")).rows
    _emit_report(cfg, SimReport("sweep", rows, {"c_values": o["c_values"]}), "bandwidth_sweep")
    return 0


def _floats(s: str) -> list[float]:
    return [float(v) for v in s.split(",") if v.strip()]


def _names(s: str) -> list[str]:
    return [v.strip() for v in s.split(",") if v.strip()]


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="bentrank", description="Rank-based bent line regression.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--method", choices=["rank", "ls", "both"], default="rank")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--out", type=Path, default=Path("."))
    common.add_argument("--format", default="csv", help="csv, json or csv,json")
    common.add_argument("--threads", type=int, default=None,
                        help="worker processes (default: $BENTRANK_THREADS or 1)")
    common.add_argument("--ci-level", type=float, default=0.95)
    common.add_argument("--tol", type=float, default=1e-5)
    common.add_argument("--max-iter", type=int, default=100)
    common.add_argument("--nb", type=int, default=1000, help="bootstrap replicates")
    common.add_argument("--bandwidth-mult", type=float, default=1.06)
    common.add_argument("--kernel", choices=["epanechnikov", "gaussian"], default="epanechnikov")

    data = argparse.ArgumentParser(add_help=False)
    data.add_argument("--input", required=True, type=Path)
    data.add_argument("--response", required=True)
    data.add_argument("--threshold", required=True)
    data.add_argument("--covariates", type=_names, default=[], help="comma-separated column names")
    data.add_argument("--no-intercept", action="store_true", help="do not add a column of ones to x")

    f = sub.add_parser("fit", parents=[common, data], help="fit the bent line")
    f.add_argument("--test", action="store_true", help="also run the change-point test")
    f.add_argument("--kfold", type=int, default=None, help="also report K-fold prediction error")
    sub.add_parser("test", parents=[common, data], help="test for a change point")
    c = sub.add_parser("cv", parents=[common, data], help="K-fold cross-validated prediction error")
    c.add_argument("--kfold", type=int, default=5)

    sim = argparse.ArgumentParser(add_help=False)
    sim.add_argument("--cases", type=_names, default=["normal", "t3", "contaminated"])
    sim.add_argument("--reps", type=int, default=1000)
    sim.add_argument("--n", type=int, default=200)
    s = sub.add_parser("simulate", parents=[common, sim], help="run a Monte Carlo study")
    s.add_argument("--study", choices=["estimation", "test", "both"], default="both")
    s.add_argument("--gammas", type=_floats, default=[-2.0, -1.0, 0.0, 1.0, 2.0])
    w = sub.add_parser("sweep", parents=[common, sim], help="test size across bandwidth multipliers")
    w.add_argument("--c-values", type=_floats, default=[0.1, 0.5, 1.0, 1.06, 1.5, 2.0])
    return p


def _config(args: argparse.Namespace) -> RunConfig:
    formats = tuple(_names(args.format))
    if not formats or any(f not in ("csv", "json") for f in formats):
        raise DataError(f"--format must be csv, json or csv,json (got {args.format!r})")
    try:
        fit = FitConfig(tol=args.tol, max_iter=args.max_iter, ci_level=args.ci_level)
        test = TestConfig(nb=args.nb, bandwidth_mult=args.bandwidth_mult, kernel=args.kernel, seed=args.seed)
    except ValueError as exc:
        raise DataError(str(exc)) from exc
    options: dict[str, Any] = {"threads": args.threads}
    for key in ("test", "kfold", "study", "gammas", "c_values", "reps", "n", "input", "response",
                "threshold", "covariates", "no_intercept"):
        if hasattr(args, key):
            options[key] = str(getattr(args, key)) if key == "input" else getattr(args, key)
    if hasattr(args, "cases"):
        try:
            options["cases"] = [ErrorKind(c).value for c in args.cases]
        except ValueError as exc:
            raise DataError(f"unknown case in --cases: {exc}") from exc
    return RunConfig(command=args.command, out=args.out, formats=formats, method=args.method,
                     seed=args.seed, fit=fit, test=test, options=options)


def run(cfg: RunConfig) -> int:
    cfg.out.mkdir(parents=True, exist_ok=True)
    if cfg.command in ("simulate", "sweep"):
        return _run_simulate(cfg) if cfg.command == "simulate" else _run_sweep(cfg)
    o = cfg.options
    data = ingest_csv(o["input"], o["response"], o["threshold"], o["covariates"],
                      intercept=not o["no_intercept"])
    return {"fit": _run_fit, "test": _run_test, "cv": _run_cv}[cfg.command](cfg, data)


def _error_record(exc: BaseException) -> dict[str, Any]:
    return {"error": getattr(exc, "code", "error"), "type": type(exc).__name__, "message": str(exc)}


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return run(_config(args))
    except NotConvergedError as exc:
        code = EXIT_NOT_CONVERGED
        err: BaseException = exc
    except BentRankError as exc:
        code = next((c for cls, c in EXIT_CODES.items() if isinstance(exc, cls)), 1)
        err = exc
    except (OSError, ValueError, np.linalg.LinAlgError) as exc:
        code, err = 1, exc
    print(json.dumps(_error_record(err)), file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
